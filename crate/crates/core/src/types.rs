//! Shared domain types: images, anomaly maps, feature stacks and label maps.
//!
//! All constructors validate their invariants, so a value of any of these
//! types is always well formed. Pixel data is stored row-major with channels
//! innermost (H, W, C).

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::contract(format!(
            "dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

/// H×W×C image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!(
                "image channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(format!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Channel values of pixel (y, x).
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// One channel as a dense H×W plane.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .map(|&v| v as f64)
            .collect()
    }
}

/// H×W per-pixel anomaly scores.
///
/// `normalized` records whether the map went through per-frame min-max
/// scaling; normalized maps are guaranteed to lie in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl AnomalyMap {
    /// Raw (unnormalized) map. Values must be finite and non-negative.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::contract(format!(
                "map data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::contract(format!(
                "anomaly score {v} is not finite and non-negative"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            normalized: false,
        })
    }

    /// Map flagged as normalized; every value must lie in [0, 1].
    pub fn new_normalized(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let mut map = Self::new(height, width, data)?;
        if let Some(v) = map.data.iter().find(|v| **v > 1.0) {
            return Err(Error::contract(format!(
                "normalized score {v} outside [0, 1]"
            )));
        }
        map.normalized = true;
        Ok(map)
    }

    /// Re-flags a map as normalized after checking its range; used for maps
    /// read back from disk, where the flag is not persisted.
    pub fn into_normalized(mut self) -> Result<Self> {
        if let Some(v) = self.data.iter().find(|v| **v > 1.0) {
            return Err(Error::contract(format!(
                "normalized score {v} outside [0, 1]"
            )));
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    /// Builds a map from f64 values, rounding to f32 storage.
    pub(crate) fn from_f64(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&v| v as f32).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// One layer of a feature stack, stored H×W×C.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureLayer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::contract(format!(
                "feature layer must be non-empty, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(format!(
                "feature data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("feature values must be finite"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// Ordered feature layers, spatial size non-increasing with depth.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    layers: Vec<FeatureLayer>,
}

impl FeatureStack {
    pub fn new(layers: Vec<FeatureLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("feature stack needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[1].height > pair[0].height || pair[1].width > pair[0].width {
                return Err(Error::contract(format!(
                    "feature layer {}x{} follows smaller layer {}x{}",
                    pair[1].height, pair[1].width, pair[0].height, pair[0].width
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[FeatureLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Past predictions for one target frame plus its current reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHistory {
    target_time: usize,
    predictions: Vec<ImageTensor>,
    reconstruction: ImageTensor,
}

impl PredictionHistory {
    /// `predictions[k - 1]` is the prediction made k steps before `target_time`.
    pub fn new(
        target_time: usize,
        predictions: Vec<ImageTensor>,
        reconstruction: ImageTensor,
    ) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::contract("prediction history needs at least one prediction"));
        }
        if let Some(p) = predictions
            .iter()
            .find(|p| p.shape() != reconstruction.shape())
        {
            return Err(Error::contract(format!(
                "prediction shape {:?} differs from reconstruction {:?}",
                p.shape(),
                reconstruction.shape()
            )));
        }
        Ok(Self {
            target_time,
            predictions,
            reconstruction,
        })
    }

    pub fn target_time(&self) -> usize {
        self.target_time
    }

    pub fn predictions(&self) -> &[ImageTensor] {
        &self.predictions
    }

    pub fn reconstruction(&self) -> &ImageTensor {
        &self.reconstruction
    }

    pub fn depth(&self) -> usize {
        self.predictions.len()
    }
}

/// Per-pixel instance ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        check_dims(height, width)?;
        if labels.len() != height * width {
            return Err(Error::contract(format!(
                "label data length {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Distinct instance ids (excluding background), ascending.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Ground-truth pixel class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelLabel {
    Normal,
    Anomaly,
    Ignore,
}

impl PixelLabel {
    pub const IGNORE_VALUE: u16 = 255;

    pub fn from_value(v: u16) -> Option<Self> {
        match v {
            0 => Some(PixelLabel::Normal),
            1 => Some(PixelLabel::Anomaly),
            Self::IGNORE_VALUE => Some(PixelLabel::Ignore),
            _ => None,
        }
    }

    pub fn value(self) -> u16 {
        match self {
            PixelLabel::Normal => 0,
            PixelLabel::Anomaly => 1,
            PixelLabel::Ignore => Self::IGNORE_VALUE,
        }
    }
}

/// Ground-truth anomaly annotation: 0 normal, 1 anomaly, 255 ignore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryLabelMap {
    height: usize,
    width: usize,
    labels: Vec<PixelLabel>,
}

impl BinaryLabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<PixelLabel>) -> Result<Self> {
        check_dims(height, width)?;
        if labels.len() != height * width {
            return Err(Error::contract(format!(
                "label data length {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// From raw encoded values; anything other than 0, 1 or 255 is rejected.
    pub fn from_values(height: usize, width: usize, values: &[u16]) -> Result<Self> {
        let labels = values
            .iter()
            .map(|&v| {
                PixelLabel::from_value(v)
                    .ok_or_else(|| Error::contract(format!("invalid ground-truth label {v}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[PixelLabel] {
        &self.labels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn count(&self, label: PixelLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// The five difference maps, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiffKind {
    Abs,
    Mse,
    Ssim,
    Perceptual,
    Temporal,
}

impl DiffKind {
    pub const ALL: [DiffKind; 5] = [
        DiffKind::Abs,
        DiffKind::Mse,
        DiffKind::Ssim,
        DiffKind::Perceptual,
        DiffKind::Temporal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DiffKind::Abs => "abs",
            DiffKind::Mse => "mse",
            DiffKind::Ssim => "ssim",
            DiffKind::Perceptual => "per",
            DiffKind::Temporal => "temp",
        }
    }
}

/// Fusion weights, each in [0, 1], in `DiffKind` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights([f64; 5]);

impl FusionWeights {
    pub fn new(abs: f64, mse: f64, ssim: f64, per: f64, temp: f64) -> Result<Self> {
        Self::from_array([abs, mse, ssim, per, temp])
    }

    pub fn from_array(w: [f64; 5]) -> Result<Self> {
        if let Some(v) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("fusion weight {v} outside [0, 1]")));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("fusion weights must not all be zero".into()));
        }
        Ok(Self(w))
    }

    pub fn weight(&self, kind: DiffKind) -> f64 {
        self.0[kind.index()]
    }

    pub fn as_array(&self) -> [f64; 5] {
        self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Kinds with a nonzero weight.
    pub fn active(&self) -> impl Iterator<Item = DiffKind> + '_ {
        DiffKind::ALL.into_iter().filter(|k| self.weight(*k) > 0.0)
    }
}

impl std::str::FromStr for FusionWeights {
    type Err = Error;

    /// Five comma-separated weights in `abs,mse,ssim,per,temp` order. Each is
    /// a decimal or a fraction such as `1/3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("weights must be five numbers a,m,s,p,t, got {s:?}"));
        let number = |t: &str| -> Result<f64> {
            let t = t.trim();
            match t.split_once('/') {
                Some((n, d)) => {
                    let (n, d): (f64, f64) = (
                        n.trim().parse().map_err(|_| bad())?,
                        d.trim().parse().map_err(|_| bad())?,
                    );
                    if d == 0.0 {
                        return Err(bad());
                    }
                    Ok(n / d)
                }
                None => t.parse().map_err(|_| bad()),
            }
        };
        let values = s.split(',').map(number).collect::<Result<Vec<f64>>>()?;
        let w: [f64; 5] = values.try_into().map_err(|_| bad())?;
        Self::from_array(w)
    }
}

//! Deterministic synthetic benchmark generator.
//!
//! Each scenario is a short drive along a procedurally drawn road. Anomalous
//! scenarios carry one static object on the road in every frame. The
//! stand-in world model reconstructs the scene with Gaussian noise but never
//! the anomaly, which it replaces by whatever lies behind it. Past
//! predictions are the reconstruction plus a uniform per-step drift.
//!
//! Frames are stored at indices `0, stride, 2*stride, ...` so the manifest's
//! stride sampling selects exactly `frames_per_scenario` frames.

mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::images::{read_gt_png, write_gt_png, write_instance_png, write_rgb_png};
use crate::manifest::{write_manifest, DatasetManifest, Scenario, DEFAULT_STRIDE};
use crate::rng::SplitMix64;
use crate::tensor_file::write_tensor;
use crate::types::{BinaryLabelMap, ImageTensor, InstanceLabelMap, PixelLabel};

use scene::SceneLayout;

const ROLE_ASSIGN: u64 = 1;
const ROLE_SCENE: u64 = 2;
const ROLE_NOISE: u64 = 3;
/// Frame key for scenario-level streams.
const WHOLE_SCENARIO: u64 = u64::MAX;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_scenarios: usize,
    pub frames_per_scenario: usize,
    /// (height, width)
    pub image_size: (usize, usize),
    pub anomaly_rate: f64,
    pub recon_noise_sigma: f64,
    pub prediction_drift: f64,
    pub history_depth: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_scenarios: 8,
            frames_per_scenario: 20,
            image_size: (96, 128),
            anomaly_rate: 0.5,
            recon_noise_sigma: 0.02,
            prediction_drift: 0.01,
            history_depth: 2,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if self.num_scenarios == 0 || self.frames_per_scenario == 0 || self.history_depth == 0 {
            return Err(Error::Config(
                "scenario count, frame count and history depth must be positive".into(),
            ));
        }
        if h < 32 || w < 32 {
            return Err(Error::Config(format!(
                "synthetic images must be at least 32x32, got {h}x{w}"
            )));
        }
        if h > u16::MAX as usize || w > u16::MAX as usize {
            return Err(Error::Config(format!("image size {h}x{w} is too large")));
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(Error::Config(format!(
                "anomaly rate must lie in [0, 1], got {}",
                self.anomaly_rate
            )));
        }
        for (name, v) in [
            ("reconstruction noise sigma", self.recon_noise_sigma),
            ("prediction drift", self.prediction_drift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Indices of the scenarios that contain an anomaly, ascending.
    pub fn anomalous_scenarios(&self) -> Vec<usize> {
        let count = (self.anomaly_rate * self.num_scenarios as f64).round() as usize;
        let mut order: Vec<usize> = (0..self.num_scenarios).collect();
        let mut rng = SplitMix64::keyed(self.seed, &[0, WHOLE_SCENARIO, ROLE_ASSIGN]);
        order.shuffle(&mut rng);
        let mut chosen = order[..count.min(self.num_scenarios)].to_vec();
        chosen.sort_unstable();
        chosen
    }
}

pub fn scenario_id(index: usize) -> String {
    format!("s{index:02}")
}

/// Writes the dataset under `out_dir` together with `manifest.txt` and returns
/// the manifest.
pub fn generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let anomalous = cfg.anomalous_scenarios();
    let stride = DEFAULT_STRIDE;
    let scenarios: Vec<Scenario> = (0..cfg.num_scenarios)
        .map(|i| {
            let id = scenario_id(i);
            Scenario {
                frame_count: cfg.frames_per_scenario * stride,
                relative_dir: PathBuf::from(&id),
                dir: out_dir.join(&id),
                id,
            }
        })
        .collect();
    let manifest = DatasetManifest {
        stride,
        history: cfg.history_depth,
        scenarios,
    };
    for s in &manifest.scenarios {
        for sub in ["rgb", "recon", "pred", "masks", "gt"] {
            let d = s.dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    manifest
        .scenarios
        .par_iter()
        .enumerate()
        .try_for_each(|(i, s)| {
            write_scenario(cfg, &manifest, i, s, anomalous.binary_search(&i).is_ok())
        })?;
    write_manifest(out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_scenario(
    cfg: &SynthConfig,
    manifest: &DatasetManifest,
    index: usize,
    scenario: &Scenario,
    anomalous: bool,
) -> Result<()> {
    let (h, w) = cfg.image_size;
    let mut rng = SplitMix64::keyed(cfg.seed, &[index as u64, WHOLE_SCENARIO, ROLE_SCENE]);
    let layout = SceneLayout::sample(&mut rng, h, w, anomalous);
    let noise = (cfg.recon_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.recon_noise_sigma).expect("sigma validated"));

    for (step, frame) in manifest.sampled_frames(scenario).into_iter().enumerate() {
        let paths = scenario.frame_paths(frame, manifest.history);
        let observed = layout.render(step, true);
        let background = layout.render(step, false);

        write_rgb_png(&paths.rgb, &ImageTensor::new(h, w, 3, observed.rgb.clone())?)?;

        let mut rng = SplitMix64::keyed(cfg.seed, &[index as u64, step as u64, ROLE_NOISE]);
        let recon_data: Vec<f32> = background
            .rgb
            .iter()
            .map(|&v| match &noise {
                Some(n) => (v as f64 + n.sample(&mut rng)).clamp(0.0, 1.0) as f32,
                None => v,
            })
            .collect();
        let recon = ImageTensor::new(h, w, 3, recon_data)?;
        for (k, path) in paths.preds.iter().enumerate() {
            let offset = (k + 1) as f64 * cfg.prediction_drift;
            let data = recon
                .data()
                .iter()
                .map(|&v| (v as f64 + offset).clamp(0.0, 1.0) as f32)
                .collect();
            write_tensor(path, &ImageTensor::new(h, w, 3, data)?)?;
        }
        write_tensor(&paths.recon, &recon)?;

        let masks: Vec<u32> = observed
            .instances
            .iter()
            .zip(&observed.ignore)
            .map(|(&id, &ign)| if ign { 0 } else { id })
            .collect();
        write_instance_png(&paths.masks, &InstanceLabelMap::new(h, w, masks)?)?;

        let gt: Vec<PixelLabel> = observed
            .anomaly
            .iter()
            .zip(&observed.ignore)
            .map(|(&a, &ign)| match (ign, a) {
                (true, _) => PixelLabel::Ignore,
                (false, true) => PixelLabel::Anomaly,
                (false, false) => PixelLabel::Normal,
            })
            .collect();
        write_gt_png(&paths.gt, &BinaryLabelMap::new(h, w, gt)?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSummary {
    pub id: String,
    pub frames: usize,
    /// Frames with at least one anomalous pixel.
    pub anomalous_frames: usize,
    pub positive_pixels: u64,
    /// Pixels labelled normal or anomalous (ignore excluded).
    pub evaluated_pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSummary {
    pub scenarios: Vec<ScenarioSummary>,
}

impl DatasetSummary {
    pub fn total_frames(&self) -> usize {
        self.scenarios.iter().map(|s| s.frames).sum()
    }

    pub fn positive_pixels(&self) -> u64 {
        self.scenarios.iter().map(|s| s.positive_pixels).sum()
    }

    pub fn evaluated_pixels(&self) -> u64 {
        self.scenarios.iter().map(|s| s.evaluated_pixels).sum()
    }

    pub fn anomalous_scenarios(&self) -> usize {
        self.scenarios.iter().filter(|s| s.positive_pixels > 0).count()
    }

    /// Share of evaluated pixels that are anomalous; 0 for an empty dataset.
    pub fn prevalence(&self) -> f64 {
        match self.evaluated_pixels() {
            0 => 0.0,
            n => self.positive_pixels() as f64 / n as f64,
        }
    }
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<10} {:>6} {:>9} {:>10}", "scenario", "frames", "anomalous", "positives")?;
        for s in &self.scenarios {
            writeln!(
                f,
                "{:<10} {:>6} {:>9} {:>10}",
                s.id, s.frames, s.anomalous_frames, s.positive_pixels
            )?;
        }
        writeln!(
            f,
            "total: {} frames, {} anomalous scenarios, prevalence {:.4}%",
            self.total_frames(),
            self.anomalous_scenarios(),
            100.0 * self.prevalence()
        )
    }
}

/// Counts frames and ground-truth labels per scenario.
pub fn describe(manifest: &DatasetManifest) -> Result<DatasetSummary> {
    let scenarios = manifest
        .scenarios
        .iter()
        .map(|s| {
            let mut summary = ScenarioSummary {
                id: s.id.clone(),
                frames: 0,
                anomalous_frames: 0,
                positive_pixels: 0,
                evaluated_pixels: 0,
            };
            for frame in manifest.sampled_frames(s) {
                let gt = read_gt_png(s.frame_paths(frame, manifest.history).gt)?;
                let pos = gt.count(PixelLabel::Anomaly) as u64;
                summary.frames += 1;
                summary.anomalous_frames += usize::from(pos > 0);
                summary.positive_pixels += pos;
                summary.evaluated_pixels += pos + gt.count(PixelLabel::Normal) as u64;
            }
            Ok(summary)
        })
        .collect::<Result<_>>()?;
    Ok(DatasetSummary { scenarios })
}

//! Per-pixel difference maps between observations and world-model outputs.
//!
//! Pixel-wise maps (absolute, squared, L2) average or combine channel
//! differences at each pixel. The structural map lives in [`ssim`]; the
//! perceptual map compares feature stacks layer by layer and the temporal map
//! compares past predictions with the current reconstruction.

mod ssim;

pub use ssim::{gaussian_window, ssim_diff, ssim_index_map, SsimConfig};

use crate::error::{Error, Result};
use crate::resample::bilinear;
use crate::types::{AnomalyMap, FeatureStack, ImageTensor, PredictionHistory};

pub(crate) fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn per_pixel(
    gt: &ImageTensor,
    pred: &ImageTensor,
    reduce: impl Fn(&[f32], &[f32]) -> f64,
) -> Result<AnomalyMap> {
    check_same_shape(gt, pred)?;
    let c = gt.channels();
    let values: Vec<f64> = gt
        .data()
        .chunks_exact(c)
        .zip(pred.data().chunks_exact(c))
        .map(|(a, b)| reduce(a, b))
        .collect();
    AnomalyMap::from_f64(gt.height(), gt.width(), &values)
}

fn mean_abs(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    sum / a.len() as f64
}

/// Mean absolute channel difference per pixel.
pub fn abs_diff(gt: &ImageTensor, pred: &ImageTensor) -> Result<AnomalyMap> {
    per_pixel(gt, pred, mean_abs)
}

/// Mean squared channel difference per pixel.
pub fn mse_diff(gt: &ImageTensor, pred: &ImageTensor) -> Result<AnomalyMap> {
    per_pixel(gt, pred, |a, b| {
        let sum: f64 = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum();
        sum / a.len() as f64
    })
}

/// Euclidean norm of the channel difference per pixel (autoencoder baseline).
pub fn l2_baseline(gt: &ImageTensor, recon: &ImageTensor) -> Result<AnomalyMap> {
    per_pixel(gt, recon, |a, b| {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    })
}

/// Per layer, the channel-mean absolute feature difference, bilinearly
/// upsampled to `out_h × out_w`; the layer maps are summed.
pub fn perceptual_diff(
    f_gt: &FeatureStack,
    f_pred: &FeatureStack,
    out_h: usize,
    out_w: usize,
) -> Result<AnomalyMap> {
    if f_gt.len() != f_pred.len() {
        return Err(Error::contract(format!(
            "feature stacks have {} and {} layers",
            f_gt.len(),
            f_pred.len()
        )));
    }
    let mut total = vec![0.0f64; out_h * out_w];
    for (i, (a, b)) in f_gt.layers().iter().zip(f_pred.layers()).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::contract(format!(
                "feature layer {} shapes differ: {:?} vs {:?}",
                i + 1,
                a.shape(),
                b.shape()
            )));
        }
        let c = a.channels();
        let plane: Vec<f64> = a
            .data()
            .chunks_exact(c)
            .zip(b.data().chunks_exact(c))
            .map(|(x, y)| mean_abs(x, y))
            .collect();
        let up = bilinear(&plane, a.height(), a.width(), out_h, out_w);
        for (t, v) in total.iter_mut().zip(up) {
            *t += v;
        }
    }
    AnomalyMap::from_f64(out_h, out_w, &total)
}

/// Mean over past predictions of their absolute difference to the
/// current reconstruction.
pub fn temporal_diff(hist: &PredictionHistory) -> Result<AnomalyMap> {
    let n = hist.depth();
    if n == 0 {
        return Err(Error::contract("temporal difference needs at least one prediction"));
    }
    let recon = hist.reconstruction();
    let mut acc = vec![0.0f64; recon.height() * recon.width()];
    let c = recon.channels();
    for pred in hist.predictions() {
        check_same_shape(pred, recon)?;
        for (slot, (a, b)) in acc
            .iter_mut()
            .zip(pred.data().chunks_exact(c).zip(recon.data().chunks_exact(c)))
        {
            *slot += mean_abs(a, b);
        }
    }
    let values: Vec<f64> = acc.into_iter().map(|v| v / n as f64).collect();
    AnomalyMap::from_f64(recon.height(), recon.width(), &values)
}

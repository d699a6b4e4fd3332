//! Structural dissimilarity map.
//!
//! Local means, variances and the covariance come from a normalized Gaussian
//! window centred on each pixel with mirrored borders. The window is applied
//! as two separable passes (rows, then columns) in a fixed order. SSIM is
//! evaluated per channel, averaged over channels and reported as the
//! dissimilarity `(1 - SSIM) / 2`.

use crate::error::{Error, Result};
use crate::resample::reflect;
use crate::types::{AnomalyMap, ImageTensor};

use super::check_same_shape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub gaussian_sigma: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self::with_window(11)
    }
}

impl SsimConfig {
    /// Default constants `(0.01 L)^2`, `(0.03 L)^2` with L = 1 and sigma 1.5.
    pub fn with_window(window: usize) -> Self {
        let dynamic_range = 1.0;
        Self {
            window,
            gaussian_sigma: 1.5,
            kappa1: (0.01 * dynamic_range) * (0.01 * dynamic_range),
            kappa2: (0.03 * dynamic_range) * (0.03 * dynamic_range),
            dynamic_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "SSIM window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if !(self.gaussian_sigma > 0.0) || !(self.kappa1 > 0.0) || !(self.kappa2 > 0.0) {
            return Err(Error::Config(
                "SSIM sigma and stability constants must be positive".into(),
            ));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::Config("SSIM dynamic range must be positive".into()));
        }
        Ok(())
    }
}

/// 1-D Gaussian taps normalized to sum to one. The 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * src[reflect(x as isize + k as isize - r, w)];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * rows[reflect(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-pixel SSIM index averaged over channels, in f64.
pub fn ssim_index_map(gt: &ImageTensor, pred: &ImageTensor, cfg: &SsimConfig) -> Result<Vec<f64>> {
    check_same_shape(gt, pred)?;
    cfg.validate()?;
    let (h, w, c) = gt.shape();
    let taps = gaussian_window(cfg.window, cfg.gaussian_sigma);
    let mut total = vec![0.0; h * w];
    for ch in 0..c {
        let x = gt.plane(ch);
        let y = pred.plane(ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mu_x = blur(&x, h, w, &taps);
        let mu_y = blur(&y, h, w, &taps);
        let e_xx = blur(&xx, h, w, &taps);
        let e_yy = blur(&yy, h, w, &taps);
        let e_xy = blur(&xy, h, w, &taps);
        for i in 0..h * w {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            let num = (2.0 * mx * my + cfg.kappa1) * (2.0 * cov + cfg.kappa2);
            let den = (mx * mx + my * my + cfg.kappa1) * (var_x + var_y + cfg.kappa2);
            total[i] += num / den;
        }
    }
    Ok(total.into_iter().map(|v| v / c as f64).collect())
}

/// Structural dissimilarity `(1 - SSIM) / 2`, clamped to [0, 1].
pub fn ssim_diff(gt: &ImageTensor, pred: &ImageTensor, cfg: &SsimConfig) -> Result<AnomalyMap> {
    let index = ssim_index_map(gt, pred, cfg)?;
    let d: Vec<f64> = index
        .into_iter()
        .map(|s| ((1.0 - s) / 2.0).clamp(0.0, 1.0))
        .collect();
    AnomalyMap::from_f64(gt.height(), gt.width(), &d)
}

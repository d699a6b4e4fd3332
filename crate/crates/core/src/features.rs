//! Feature stacks for the perceptual difference.
//!
//! The built-in extractor is a fixed-seed stack of bias-free convolutions
//! with half-wave rectification. Layer 1 runs at full resolution, every later
//! layer at stride 2, so layer i has spatial size ceil(H / 2^(i-1)) ×
//! ceil(W / 2^(i-1)). Weights are drawn from SplitMix64 in the order
//! (layer, out channel, in channel, ky, kx). Stacks dumped from a real network
//! can be loaded instead with [`load_features`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::resample::reflect;
use crate::rng::SplitMix64;
use crate::tensor_file::read_features;
use crate::types::{FeatureLayer, FeatureStack, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub seed: u64,
    pub num_layers: usize,
    pub channels_per_layer: usize,
    pub kernel_size: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_layers: 3,
            channels_per_layer: 8,
            kernel_size: 3,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.channels_per_layer == 0 {
            return Err(Error::Config(
                "extractor needs at least one layer and one channel".into(),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "extractor kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Convolution weights of one layer, indexed [out][in][ky][kx].
#[derive(Debug, Clone)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    weights: Vec<f64>,
}

impl ConvLayer {
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Reflect-padded convolution followed by ReLU. Taps accumulate row-major
    /// (ky, kx), input channels innermost.
    fn apply(&self, input: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        let out_h = h.div_ceil(self.stride);
        let out_w = w.div_ceil(self.stride);
        let r = (self.kernel / 2) as isize;
        let cin = self.in_channels;
        let mut out = vec![0.0; out_h * out_w * self.out_channels];
        let mut taps = vec![0usize; self.kernel * self.kernel];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let cy = (oy * self.stride) as isize;
                let cx = (ox * self.stride) as isize;
                for ky in 0..self.kernel {
                    let sy = reflect(cy + ky as isize - r, h);
                    for kx in 0..self.kernel {
                        let sx = reflect(cx + kx as isize - r, w);
                        taps[ky * self.kernel + kx] = (sy * w + sx) * cin;
                    }
                }
                let dst = &mut out[(oy * out_w + ox) * self.out_channels..][..self.out_channels];
                for (o, slot) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let base = taps[ky * self.kernel + kx];
                            for i in 0..cin {
                                acc += self.weight(o, i, ky, kx) * input[base + i];
                            }
                        }
                    }
                    *slot = acc.max(0.0);
                }
            }
        }
        (out, out_h, out_w)
    }
}

/// Deterministic convolutional feature extractor.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: ExtractorConfig,
    input_channels: usize,
    layers: Vec<ConvLayer>,
}

impl FeatureExtractor {
    pub fn new(config: ExtractorConfig, input_channels: usize) -> Result<Self> {
        config.validate()?;
        if input_channels != 1 && input_channels != 3 {
            return Err(Error::contract(format!(
                "extractor input must have 1 or 3 channels, got {input_channels}"
            )));
        }
        let mut rng = SplitMix64::new(config.seed);
        let k = config.kernel_size;
        let layers = (0..config.num_layers)
            .map(|i| {
                let in_channels = if i == 0 {
                    input_channels
                } else {
                    config.channels_per_layer
                };
                let count = config.channels_per_layer * in_channels * k * k;
                ConvLayer {
                    in_channels,
                    out_channels: config.channels_per_layer,
                    kernel: k,
                    stride: if i == 0 { 1 } else { 2 },
                    weights: (0..count).map(|_| rng.next_signed_unit()).collect(),
                }
            })
            .collect();
        Ok(Self {
            config,
            input_channels,
            layers,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn extract(&self, img: &ImageTensor) -> Result<FeatureStack> {
        if img.channels() != self.input_channels {
            return Err(Error::contract(format!(
                "extractor built for {} channels, image has {}",
                self.input_channels,
                img.channels()
            )));
        }
        let mut current: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
        let (mut h, mut w) = (img.height(), img.width());
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, nh, nw) = layer.apply(&current, h, w);
            out.push(FeatureLayer::new(
                nh,
                nw,
                layer.out_channels,
                next.iter().map(|&v| v as f32).collect(),
            )?);
            current = next;
            h = nh;
            w = nw;
        }
        FeatureStack::new(out)
    }
}

/// Builds the extractor for `cfg` and runs it on `img`.
pub fn extract_features(img: &ImageTensor, cfg: &ExtractorConfig) -> Result<FeatureStack> {
    FeatureExtractor::new(*cfg, img.channels())?.extract(img)
}

/// Loads a UMFS feature dump.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureStack> {
    read_features(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_file::{write_tensor, TensorFile};
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> ImageTensor {
        let n = h * w * c;
        ImageTensor::new(h, w, c, (0..n).map(|i| (i % 97) as f32 / 96.0).collect()).unwrap()
    }

    #[test]
    fn deterministic() {
        let img = ramp(17, 23, 3);
        let cfg = ExtractorConfig {
            seed: 9,
            ..Default::default()
        };
        let a = extract_features(&img, &cfg).unwrap();
        let b = extract_features(&img, &cfg).unwrap();
        assert_eq!(a.encode(), b.encode());
        let other = extract_features(&img, &ExtractorConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let img = ImageTensor::filled(12, 9, 3, 0.0).unwrap();
        let stack = extract_features(&img, &ExtractorConfig::default()).unwrap();
        assert!(stack.layers().iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stride_schedule_64() {
        let img = ImageTensor::filled(64, 64, 1, 0.5).unwrap();
        let stack = extract_features(&img, &ExtractorConfig::default()).unwrap();
        let shapes: Vec<_> = stack.layers().iter().map(|l| l.shape()).collect();
        assert_eq!(shapes, vec![(64, 64, 8), (32, 32, 8), (16, 16, 8)]);
    }

    #[test]
    fn weights_follow_splitmix_sequence() {
        let cfg = ExtractorConfig {
            seed: 123,
            ..Default::default()
        };
        let ex = FeatureExtractor::new(cfg, 3).unwrap();
        let mut rng = SplitMix64::new(123);
        let first = &ex.layers()[0];
        assert_eq!(first.weight(0, 0, 0, 0), rng.next_signed_unit());
        assert_eq!(first.weight(0, 0, 0, 1), rng.next_signed_unit());
        assert!(first.max_abs_weight() <= 1.0);
    }

    #[test]
    fn single_tap_convolution_matches_hand_computation() {
        // 1x1 kernel, one layer, one channel: feature = relu(w * x).
        let cfg = ExtractorConfig {
            seed: 5,
            num_layers: 1,
            channels_per_layer: 1,
            kernel_size: 1,
        };
        let w = SplitMix64::new(5).next_signed_unit();
        let img = ImageTensor::new(1, 3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let stack = extract_features(&img, &cfg).unwrap();
        let expected: Vec<f32> = [0.0, 0.5, 1.0]
            .iter()
            .map(|x: &f64| (w * x).max(0.0) as f32)
            .collect();
        assert_eq!(stack.layers()[0].data(), expected.as_slice());
    }

    #[test]
    fn bad_config_rejected() {
        let even = ExtractorConfig {
            kernel_size: 4,
            ..Default::default()
        };
        assert!(extract_features(&ramp(4, 4, 1), &even).is_err());
        let none = ExtractorConfig {
            num_layers: 0,
            ..Default::default()
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn load_two_layer_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.umfs");
        let stack = FeatureStack::new(vec![
            FeatureLayer::new(4, 4, 2, vec![0.5; 32]).unwrap(),
            FeatureLayer::new(2, 2, 4, vec![1.5; 16]).unwrap(),
        ])
        .unwrap();
        write_tensor(&path, &stack).unwrap();
        let loaded = load_features(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded, stack);
    }

    proptest! {
        #[test]
        fn layer_shapes_for_any_size(h in 1usize..40, w in 1usize..40, layers in 1usize..5) {
            let cfg = ExtractorConfig { num_layers: layers, channels_per_layer: 2, ..Default::default() };
            let stack = extract_features(&ramp(h, w, 1), &cfg).unwrap();
            prop_assert_eq!(stack.len(), layers);
            for (i, l) in stack.layers().iter().enumerate() {
                let div = 1usize << i;
                prop_assert_eq!(l.height(), h.div_ceil(div));
                prop_assert_eq!(l.width(), w.div_ceil(div));
                prop_assert_eq!(l.channels(), 2);
            }
        }

        #[test]
        fn first_layer_lipschitz(seed in any::<u64>(), y in 0usize..7, x in 0usize..9, c in 0usize..3, eps in 0.0f32..0.5) {
            let img = ramp(7, 9, 3);
            let cfg = ExtractorConfig { seed, num_layers: 1, ..Default::default() };
            let ex = FeatureExtractor::new(cfg, 3).unwrap();
            let mut data = img.data().to_vec();
            let idx = (y * 9 + x) * 3 + c;
            data[idx] = (data[idx] + eps).min(1.0);
            let actual_eps = (data[idx] - img.data()[idx]) as f64;
            let bumped = ImageTensor::new(7, 9, 3, data).unwrap();
            let a = ex.extract(&img).unwrap();
            let b = ex.extract(&bumped).unwrap();
            let bound = 9.0 * ex.layers()[0].max_abs_weight() * actual_eps;
            for (u, v) in a.layers()[0].data().iter().zip(b.layers()[0].data()) {
                // Slack covers the f32 rounding of stored features.
                prop_assert!(((u - v) as f64).abs() <= bound + 1e-5);
            }
        }
    }
}

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{relu_backward, relu_inplace};
use super::{Conv2d, ConvCache, MaxPool2d, Param, Parameters, PoolCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    pub blocks: usize,
    pub stride: usize,
}

/// Residual convolutional encoder: a stem convolution (optionally followed by
/// 3x3/2 max pooling) and stages of basic residual blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub stages: Vec<StageConfig>,
}

impl EncoderConfig {
    /// ResNet18 layout: 7x7/2 stem, max pool, four stages of two blocks.
    pub fn resnet18() -> Self {
        let stage = |channels, stride| StageConfig {
            channels,
            blocks: 2,
            stride,
        };
        Self {
            in_channels: 3,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stages: vec![stage(64, 1), stage(128, 2), stage(256, 2), stage(512, 2)],
        }
    }

    /// Small stride-4 encoder for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 8,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: false,
            stages: vec![StageConfig {
                channels: 16,
                blocks: 1,
                stride: 2,
            }],
        }
    }

    /// Total downsampling factor from input pixels to feature cells.
    pub fn stride(&self) -> usize {
        let pool = if self.stem_pool { 2 } else { 1 };
        self.stem_stride * pool * self.stages.iter().map(|s| s.stride).product::<usize>()
    }

    pub fn feature_dim(&self) -> usize {
        self.stages
            .last()
            .map(|s| s.channels)
            .unwrap_or(self.stem_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = [
            self.in_channels,
            self.stem_channels,
            self.stem_kernel,
            self.stem_stride,
        ]
        .contains(&0)
            || self
                .stages
                .iter()
                .any(|s| s.channels == 0 || s.blocks == 0 || s.stride == 0);
        if bad {
            return Err(Error::invalid(
                "encoder widths, kernels, strides and block counts must be positive",
            ));
        }
        Ok(())
    }

    /// Number of trainable values, or `None` on overflow.
    pub fn parameter_count(&self) -> Option<u64> {
        let conv = |cin: usize, cout: usize, k: usize| -> Option<u64> {
            (cout as u64)
                .checked_mul(cin as u64)?
                .checked_mul(k as u64)?
                .checked_mul(k as u64)?
                .checked_add(cout as u64)
        };
        let mut total = conv(self.in_channels, self.stem_channels, self.stem_kernel)?;
        let mut channels = self.stem_channels;
        for stage in &self.stages {
            for bi in 0..stage.blocks {
                let stride = if bi == 0 { stage.stride } else { 1 };
                total = total
                    .checked_add(conv(channels, stage.channels, 3)?)?
                    .checked_add(conv(stage.channels, stage.channels, 3)?)?;
                if stride != 1 || channels != stage.channels {
                    total = total.checked_add(conv(channels, stage.channels, 1)?)?;
                }
                channels = stage.channels;
            }
        }
        Some(total)
    }

    fn block_count(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

#[derive(Debug, Clone)]
struct BlockTrace {
    c1: ConvCache,
    r1: Array3<f64>,
    c2: ConvCache,
    shortcut: Option<ConvCache>,
    out: Array3<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    stem: ConvCache,
    stem_out: Array3<f64>,
    pool: Option<PoolCache>,
    blocks: Vec<BlockTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    stem: Conv2d,
    blocks: Vec<BasicBlock>,
}

const STEM_POOL: MaxPool2d = MaxPool2d {
    kernel: 3,
    stride: 2,
    padding: 1,
};

impl Encoder {
    pub fn new<R: Rng + ?Sized>(name: &str, config: &EncoderConfig, rng: &mut R) -> Self {
        let k = config.stem_kernel;
        let stem = Conv2d::new(
            &format!("{name}.stem"),
            config.in_channels,
            config.stem_channels,
            k,
            config.stem_stride,
            k / 2,
            1.0,
            rng,
        );
        // no normalization layers, so residual branches start scaled down
        let branch_gain = 1.0 / (config.block_count().max(1) as f64).sqrt();
        let mut blocks = Vec::new();
        let mut channels = config.stem_channels;
        for (si, stage) in config.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let prefix = format!("{name}.stage{si}.block{bi}");
                let stride = if bi == 0 { stage.stride } else { 1 };
                let conv1 = Conv2d::new(
                    &format!("{prefix}.conv1"),
                    channels,
                    stage.channels,
                    3,
                    stride,
                    1,
                    1.0,
                    rng,
                );
                let conv2 = Conv2d::new(
                    &format!("{prefix}.conv2"),
                    stage.channels,
                    stage.channels,
                    3,
                    1,
                    1,
                    branch_gain,
                    rng,
                );
                let shortcut = (stride != 1 || channels != stage.channels).then(|| {
                    Conv2d::new(
                        &format!("{prefix}.shortcut"),
                        channels,
                        stage.channels,
                        1,
                        stride,
                        0,
                        1.0,
                        rng,
                    )
                });
                blocks.push(BasicBlock {
                    conv1,
                    conv2,
                    shortcut,
                });
                channels = stage.channels;
            }
        }
        Self {
            config: config.clone(),
            stem,
            blocks,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Feature-map size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (mut h, mut w) = self.stem.output_size(h, w);
        if self.config.stem_pool {
            (h, w) = STEM_POOL.output_size(h, w);
        }
        for b in &self.blocks {
            (h, w) = b.conv1.output_size(h, w);
        }
        (h, w)
    }

    /// Maps a `[channels, h, w]` input to the final feature map.
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, EncoderTrace) {
        let (mut h, stem) = self.stem.forward(x);
        relu_inplace(&mut h);
        let stem_out = h.clone();
        let pool = if self.config.stem_pool {
            let (p, cache) = STEM_POOL.forward(&h);
            h = p;
            Some(cache)
        } else {
            None
        };
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (mut a, c1) = block.conv1.forward(&h);
            relu_inplace(&mut a);
            let (mut out, c2) = block.conv2.forward(&a);
            let shortcut = match &block.shortcut {
                Some(conv) => {
                    let (s, cache) = conv.forward(&h);
                    out += &s;
                    Some(cache)
                }
                None => {
                    out += &h;
                    None
                }
            };
            relu_inplace(&mut out);
            h = out.clone();
            traces.push(BlockTrace {
                c1,
                r1: a,
                c2,
                shortcut,
                out,
            });
        }
        (
            h,
            EncoderTrace {
                stem,
                stem_out,
                pool,
                blocks: traces,
            },
        )
    }

    /// Back-propagates `grad` (w.r.t. the output feature map) into `grads`.
    pub fn backward(&self, trace: &EncoderTrace, grad: Array3<f64>, grads: &mut Encoder) {
        let mut g = grad;
        for ((block, bt), gblock) in self
            .blocks
            .iter()
            .zip(&trace.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            relu_backward(&bt.out, &mut g);
            let mut ga = block
                .conv2
                .backward(&bt.c2, &g, &mut gblock.conv2, true)
                .expect("input grad");
            relu_backward(&bt.r1, &mut ga);
            let mut gin = block
                .conv1
                .backward(&bt.c1, &ga, &mut gblock.conv1, true)
                .expect("input grad");
            match (&block.shortcut, &bt.shortcut, gblock.shortcut.as_mut()) {
                (Some(conv), Some(cache), Some(gconv)) => {
                    gin += &conv.backward(cache, &g, gconv, true).expect("input grad");
                }
                _ => gin += &g,
            }
            g = gin;
        }
        if let Some(cache) = &trace.pool {
            g = STEM_POOL.backward(cache, &g);
        }
        relu_backward(&trace.stem_out, &mut g);
        self.stem.backward(&trace.stem, &g, &mut grads.stem, false);
    }
}

impl Parameters for Encoder {
    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.stem.collect(out);
        for b in &self.blocks {
            b.conv1.collect(out);
            b.conv2.collect(out);
            if let Some(s) = &b.shortcut {
                s.collect(out);
            }
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.stem.collect_mut(out);
        for b in &mut self.blocks {
            b.conv1.collect_mut(out);
            b.conv2.collect_mut(out);
            if let Some(s) = &mut b.shortcut {
                s.collect_mut(out);
            }
        }
    }
}

/// Spatial mean of each channel.
pub fn global_average_pool(map: &Array3<f64>) -> Vec<f64> {
    let (_, h, w) = map.dim();
    let n = (h * w) as f64;
    map.outer_iter().map(|c| c.sum() / n).collect()
}

/// Gradient of [`global_average_pool`]: spreads each channel gradient evenly.
pub fn global_average_pool_backward(grad: &[f64], dims: (usize, usize, usize)) -> Array3<f64> {
    let (_, h, w) = dims;
    let n = (h * w) as f64;
    Array3::from_shape_fn(dims, |(c, _, _)| grad[c] / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resnet18_layout() {
        let cfg = EncoderConfig::resnet18();
        assert_eq!(cfg.stride(), 32);
        assert_eq!(cfg.feature_dim(), 512);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new("g", &cfg, &mut rng);
        assert_eq!(enc.output_size(224, 224), (7, 7));
        // conv weights of ResNet18 minus batch norm and fc
        let expected_weights = 11_166_912;
        let weights: usize = enc
            .params()
            .iter()
            .filter(|p| p.name().ends_with("weight"))
            .map(|p| p.len())
            .sum();
        assert_eq!(weights, expected_weights);
    }

    #[test]
    fn desk_layout() {
        let cfg = EncoderConfig::desk();
        assert_eq!(cfg.stride(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new("g", &cfg, &mut rng);
        assert_eq!(enc.output_size(32, 32), (8, 8));
        let x = Array3::from_elem((3, 32, 32), 0.5);
        let (y, _) = enc.forward(&x);
        assert_eq!(y.dim(), (16, 8, 8));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = EncoderConfig {
            in_channels: 2,
            stem_channels: 3,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: true,
            stages: vec![
                StageConfig {
                    channels: 3,
                    blocks: 1,
                    stride: 1,
                },
                StageConfig {
                    channels: 4,
                    blocks: 1,
                    stride: 2,
                },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut enc = Encoder::new("e", &cfg, &mut rng);
        for p in enc.params_mut() {
            for v in p.data_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        let x = Array3::from_shape_fn((2, 8, 8), |_| rng.gen_range(-1.0..1.0));
        let (y, trace) = enc.forward(&x);
        let proj = Array3::from_shape_fn(y.dim(), |_| rng.gen_range(-1.0..1.0));
        let loss = |e: &Encoder| (e.forward(&x).0 * &proj).sum();
        let mut grads = zeros_like(&enc);
        enc.backward(&trace, proj.clone(), &mut grads);

        let h = 1e-6;
        let mut checked = 0;
        for (pi, gp) in grads.params().iter().enumerate() {
            for j in (0..gp.len()).step_by(3) {
                let mut p = enc.clone();
                p.params_mut()[pi].data_mut()[j] += h;
                let mut m = enc.clone();
                m.params_mut()[pi].data_mut()[j] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let an = gp.data()[j];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "{}[{j}]: fd {fd} vs analytic {an}",
                    gp.name()
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }
}

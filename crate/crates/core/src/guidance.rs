//! Dual-granularity conditional guidance.
//!
//! A global encoder produces a feature map. A 1x1 convolution maps it to one
//! activation map per class; the spatial mean of those maps is the global
//! logit vector (identical to a linear head on the pooled feature), and their
//! rectified channel-wise maximum is the saliency map. The highest-saliency
//! cells pick square crops which a local encoder embeds; an attention vector
//! pools the crop embeddings and a linear layer gives the local prior.

use ndarray::{s, Array2, Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{softmax, ClassVector};
use crate::error::{Error, Result};
use crate::nn::{
    global_average_pool, global_average_pool_backward, softmax_backward, Encoder, EncoderConfig,
    EncoderTrace, Linear, Param, Parameters,
};
use crate::Image;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub classes: usize,
    pub image_size: usize,
    pub encoder: EncoderConfig,
    pub roi_count: usize,
    pub crop_size: usize,
    pub local_input_size: usize,
}

impl GuidanceConfig {
    pub fn full(classes: usize) -> Self {
        Self {
            classes,
            image_size: 224,
            encoder: EncoderConfig::resnet18(),
            roi_count: 4,
            crop_size: 112,
            local_input_size: 112,
        }
    }

    pub fn desk(classes: usize) -> Self {
        Self {
            classes,
            image_size: 32,
            encoder: EncoderConfig::desk(),
            roi_count: 4,
            crop_size: 16,
            local_input_size: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("guidance needs at least 2 classes"));
        }
        if self.roi_count == 0 {
            return Err(Error::invalid("roi_count must be at least 1"));
        }
        if self.crop_size == 0 || self.crop_size > self.image_size {
            return Err(Error::invalid(format!(
                "crop size {} must lie in 1..={}",
                self.crop_size, self.image_size
            )));
        }
        if self.local_input_size == 0 {
            return Err(Error::invalid("local_input_size must be positive"));
        }
        self.encoder.validate()
    }

    /// Trainable values of the guidance network, or `None` on overflow.
    pub fn parameter_count(&self) -> Option<u64> {
        let f = self.encoder.feature_dim() as u64;
        let c = self.classes as u64;
        let head = f.checked_mul(c)?.checked_add(c)?;
        self.encoder
            .parameter_count()?
            .checked_mul(2)?
            .checked_add(head.checked_mul(2)?)?
            .checked_add(f)
    }
}

/// Nonnegative spatial importance grid; one cell covers `stride` input pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub grid: Array2<f64>,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiBox {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSet {
    pub boxes: Vec<RoiBox>,
    pub scores: Vec<f64>,
    /// Set when fewer boxes than requested were available.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualPrior {
    pub global: ClassVector,
    pub local: ClassVector,
}

impl DualPrior {
    /// Shift used by the diffusion process: the mean of both priors.
    pub fn mean(&self) -> ClassVector {
        ClassVector::mean_of(&self.global, &self.local).expect("priors share a length")
    }
}

/// Output of the global stream plus what its backward pass needs.
#[derive(Debug, Clone)]
pub struct GlobalPass {
    pub feature: Vec<f64>,
    pub saliency: SaliencyMap,
    pub prior: ClassVector,
    trace: EncoderTrace,
    map_dims: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct LocalPass {
    pub prior: ClassVector,
    pub attention: Vec<f64>,
    features: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    traces: Vec<(EncoderTrace, (usize, usize, usize))>,
}

#[derive(Debug, Clone)]
pub struct DcgOutput {
    pub prior: DualPrior,
    pub rois: RoiSet,
    pub global: GlobalPass,
    pub local: LocalPass,
}

impl DcgOutput {
    pub fn saliency(&self) -> &SaliencyMap {
        &self.global.saliency
    }

    pub fn feature(&self) -> &[f64] {
        &self.global.feature
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dcg {
    config: GuidanceConfig,
    global: Encoder,
    head: Linear,
    local: Encoder,
    attention: Param,
    local_head: Linear,
}

impl Dcg {
    pub fn new<R: Rng + ?Sized>(config: &GuidanceConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dim = config.encoder.feature_dim();
        let bound = (1.0 / dim as f64).sqrt();
        Ok(Self {
            config: config.clone(),
            global: Encoder::new("dcg.global", &config.encoder, rng),
            head: Linear::new("dcg.global_head", dim, config.classes, rng),
            local: Encoder::new("dcg.local", &config.encoder, rng),
            attention: Param::uniform("dcg.attention", vec![dim], bound, rng),
            local_head: Linear::new("dcg.local_head", dim, config.classes, rng),
        })
    }

    pub fn config(&self) -> &GuidanceConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.global.feature_dim()
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let s = self.config.image_size;
        if image.dim() != (s, s, 3) {
            return Err(Error::invalid(format!(
                "expected a {s}x{s}x3 image, got {:?}",
                image.dim()
            )));
        }
        Ok(())
    }

    pub fn global_prior(&self, image: &Image) -> Result<GlobalPass> {
        self.check_image(image)?;
        let (map, trace) = self.global.forward(&to_chw(image.view()));
        let dims = map.dim();
        let feature = global_average_pool(&map);
        let logits = self.head.forward(&feature);
        let prior = ClassVector::softmax(&logits)?;
        let saliency = self.saliency(&map);
        Ok(GlobalPass {
            feature,
            saliency,
            prior,
            trace,
            map_dims: dims,
        })
    }

    fn saliency(&self, map: &Array3<f64>) -> SaliencyMap {
        let (f, h, w) = map.dim();
        let flat = map
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((f, h * w))
            .expect("feature map shape");
        let weights =
            Array2::from_shape_vec((self.config.classes, f), self.head.weight.data().to_vec())
                .expect("head shape");
        let mut cam = weights.dot(&flat);
        for (mut row, b) in cam.rows_mut().into_iter().zip(self.head.bias.data()) {
            row += *b;
        }
        let grid = Array2::from_shape_fn((h, w), |(i, j)| {
            cam.column(i * w + j)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
        });
        SaliencyMap {
            grid,
            stride: self.config.encoder.stride(),
        }
    }

    pub fn local_prior(&self, image: &Image, rois: &RoiSet) -> Result<LocalPass> {
        self.check_image(image)?;
        if rois.boxes.is_empty() {
            return Err(Error::invalid("local prior needs at least one region"));
        }
        let size = self.config.local_input_size;
        let mut features = Vec::with_capacity(rois.boxes.len());
        let mut traces = Vec::with_capacity(rois.boxes.len());
        for b in &rois.boxes {
            if b.top + b.size > image.dim().0 || b.left + b.size > image.dim().1 {
                return Err(Error::invalid(format!("region {b:?} exceeds the image")));
            }
            let crop = image.slice(s![b.top..b.top + b.size, b.left..b.left + b.size, ..]);
            let input = if b.size == size {
                to_chw(crop)
            } else {
                to_chw(resize_bilinear(crop, size, size).view())
            };
            let (map, trace) = self.local.forward(&input);
            features.push(global_average_pool(&map));
            traces.push((trace, map.dim()));
        }
        let scores: Vec<f64> = features
            .iter()
            .map(|h| dot(self.attention.data(), h))
            .collect();
        let attention = softmax(&scores);
        let mut pooled = vec![0.0; self.feature_dim()];
        for (a, h) in attention.iter().zip(&features) {
            for (p, v) in pooled.iter_mut().zip(h) {
                *p += a * v;
            }
        }
        let prior = ClassVector::softmax(&self.local_head.forward(&pooled))?;
        Ok(LocalPass {
            prior,
            attention,
            features,
            pooled,
            traces,
        })
    }

    /// Full guidance pass: global prior, region selection, local prior.
    pub fn forward(&self, image: &Image) -> Result<DcgOutput> {
        let global = self.global_prior(image)?;
        let rois = extract_rois(
            &global.saliency,
            self.config.roi_count,
            self.config.crop_size,
            (self.config.image_size, self.config.image_size),
        )?;
        let local = self.local_prior(image, &rois)?;
        Ok(DcgOutput {
            prior: DualPrior {
                global: global.prior.clone(),
                local: local.prior.clone(),
            },
            rois,
            global,
            local,
        })
    }

    /// Back-propagates gradients w.r.t. the global logits and (optionally)
    /// the pooled global feature.
    pub fn backward_global(
        &self,
        pass: &GlobalPass,
        grad_logits: &[f64],
        grad_feature: Option<&[f64]>,
        grads: &mut Dcg,
    ) {
        let mut g = self
            .head
            .backward(&pass.feature, grad_logits, &mut grads.head);
        if let Some(extra) = grad_feature {
            for (a, b) in g.iter_mut().zip(extra) {
                *a += b;
            }
        }
        let gmap = global_average_pool_backward(&g, pass.map_dims);
        self.global.backward(&pass.trace, gmap, &mut grads.global);
    }

    pub fn backward_local(&self, pass: &LocalPass, grad_logits: &[f64], grads: &mut Dcg) {
        let g_pooled = self
            .local_head
            .backward(&pass.pooled, grad_logits, &mut grads.local_head);
        let g_weights: Vec<f64> = pass.features.iter().map(|h| dot(&g_pooled, h)).collect();
        let g_scores = softmax_backward(&pass.attention, &g_weights);
        let a = self.attention.data();
        for ((h, (trace, dims)), (w, gs)) in pass
            .features
            .iter()
            .zip(&pass.traces)
            .zip(pass.attention.iter().zip(&g_scores))
        {
            for (ga, v) in grads.attention.data_mut().iter_mut().zip(h) {
                *ga += gs * v;
            }
            let gh: Vec<f64> = g_pooled
                .iter()
                .zip(a)
                .map(|(gp, av)| w * gp + gs * av)
                .collect();
            let gmap = global_average_pool_backward(&gh, *dims);
            self.local.backward(trace, gmap, &mut grads.local);
        }
    }
}

impl Parameters for Dcg {
    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        self.global.collect(out);
        self.head.collect(out);
        self.local.collect(out);
        out.push(&self.attention);
        self.local_head.collect(out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.global.collect_mut(out);
        self.head.collect_mut(out);
        self.local.collect_mut(out);
        out.push(&mut self.attention);
        self.local_head.collect_mut(out);
    }
}

/// Picks the `k` highest-saliency cells (ties in row-major order) and returns
/// `crop_size` squares centred on them, shifted inward to stay in the image.
pub fn extract_rois(
    saliency: &SaliencyMap,
    k: usize,
    crop_size: usize,
    image_dims: (usize, usize),
) -> Result<RoiSet> {
    let (height, width) = image_dims;
    if k == 0 {
        return Err(Error::invalid("region count must be at least 1"));
    }
    if crop_size == 0 || crop_size > height.min(width) {
        return Err(Error::invalid(format!(
            "crop size {crop_size} does not fit a {height}x{width} image"
        )));
    }
    let (gh, gw) = saliency.grid.dim();
    let cells = gh * gw;
    let clamped = k > cells;
    if clamped {
        log::warn!("requested {k} regions but the saliency grid has only {cells} cells");
    }
    let mut order: Vec<usize> = (0..cells).collect();
    let flat = saliency.grid.as_standard_layout();
    let flat = flat.as_slice().expect("standard layout");
    order.sort_by(|a, b| flat[*b].total_cmp(&flat[*a]));
    let half = crop_size as f64 / 2.0;
    let place = |centre: f64, limit: usize| -> usize {
        let start = (centre - half).floor().max(0.0) as usize;
        start.min(limit - crop_size)
    };
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for &cell in order.iter().take(k.min(cells)) {
        let (r, c) = (cell / gw, cell % gw);
        let cy = (r as f64 + 0.5) * saliency.stride as f64;
        let cx = (c as f64 + 0.5) * saliency.stride as f64;
        let b = RoiBox {
            top: place(cy, height),
            left: place(cx, width),
            size: crop_size,
        };
        assert!(b.top + b.size <= height && b.left + b.size <= width);
        boxes.push(b);
        scores.push(flat[cell]);
    }
    Ok(RoiSet {
        boxes,
        scores,
        clamped,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `[h, w, c]` view to an owned `[c, h, w]` array.
pub fn to_chw(image: ArrayView3<'_, f64>) -> Array3<f64> {
    image
        .permuted_axes([2, 0, 1])
        .as_standard_layout()
        .into_owned()
}

/// Bilinear resize of an `[h, w, c]` array with half-pixel sampling centres.
pub fn resize_bilinear(src: ArrayView3<'_, f64>, out_h: usize, out_w: usize) -> Image {
    let (h, w, c) = src.dim();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Array3::zeros((out_h, out_w, c));
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, h);
        for x in 0..out_w {
            let (x0, x1, fx) = axis(x, sx, w);
            for ch in 0..c {
                let top = src[[y0, x0, ch]] * (1.0 - fx) + src[[y0, x1, ch]] * fx;
                let bottom = src[[y1, x0, ch]] * (1.0 - fx) + src[[y1, x1, ch]] * fx;
                out[[y, x, ch]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

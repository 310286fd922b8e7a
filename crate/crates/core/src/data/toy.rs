//! Synthetic coloured-blob images used as a desk-scale verification substrate.
//!
//! Class `c` of `C` draws a disc whose hue is `c / C` around the colour wheel
//! and whose centre sits at angle `2*pi*c / C` on a ring around the image
//! centre. `noise` scales position jitter, colour jitter and pixel noise; at
//! `noise = 0` every image of a class is identical.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Record};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
    pub noise: f64,
}

impl ToyConfig {
    pub fn new(classes: usize, per_class: usize, size: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            size,
            seed,
            noise: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("toy data needs at least 2 classes"));
        }
        if self.per_class < 6 {
            return Err(Error::invalid("toy data needs at least 6 images per class"));
        }
        if self.size < 16 {
            return Err(Error::invalid("toy images must be at least 16 pixels"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("toy noise must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn class_name(c: usize) -> String {
        format!("class{c}")
    }
}

fn hue_to_rgb(hue: f64, saturation: f64, value: f64) -> [f64; 3] {
    let h = (hue.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = value * (1.0 - saturation);
    let q = value * (1.0 - saturation * f);
    let t = value * (1.0 - saturation * (1.0 - f));
    match i {
        0 => [value, t, p],
        1 => [q, value, p],
        2 => [p, value, t],
        3 => [p, q, value],
        4 => [t, p, value],
        _ => [value, p, q],
    }
}

/// Renders one image of `class`; all randomness comes from `rng`.
pub fn render_toy_image<R: Rng + ?Sized>(
    class: usize,
    classes: usize,
    size: usize,
    noise: f64,
    rng: &mut R,
) -> RgbImage {
    let mut gauss = |scale: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * scale * noise
    };
    let s = size as f64;
    let angle = std::f64::consts::TAU * class as f64 / classes as f64;
    let cx = s / 2.0 + s / 4.0 * angle.cos() + gauss(s / 24.0);
    let cy = s / 2.0 + s / 4.0 * angle.sin() + gauss(s / 24.0);
    let radius = s / 5.0;
    let mut colour = hue_to_rgb(class as f64 / classes as f64, 0.8, 0.9);
    for ch in &mut colour {
        *ch = (*ch + gauss(0.04)).clamp(0.0, 1.0);
    }
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let inside = dx * dx + dy * dy <= radius * radius;
            let base = if inside { colour } else { [0.45; 3] };
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let val = (base[c] + gauss(0.05)).clamp(0.0, 1.0);
                *v = (val * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Writes `images/*.png` and `manifest.csv` under `out_dir` and returns the
/// manifest (rooted at `out_dir`, folds unassigned).
pub fn synth_toy_dataset(config: &ToyConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.classes * config.per_class);
    for c in 0..config.classes {
        for i in 0..config.per_class {
            let id = format!("toy_c{c}_{i:04}");
            let rel = format!("images/{id}.png");
            let img = render_toy_image(c, config.classes, config.size, config.noise, &mut rng);
            let path = out_dir.join(&rel);
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            records.push(Record {
                image_id: id,
                path: rel,
                label: ToyConfig::class_name(c),
                fold: None,
                group: None,
            });
        }
    }
    let vocab = (0..config.classes).map(ToyConfig::class_name).collect();
    let manifest = DatasetManifest::new(records, vocab, out_dir)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

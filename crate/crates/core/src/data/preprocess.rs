use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Image;

/// Square resize target plus per-channel standardization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub size: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for PreprocessConfig {
    /// 224 pixels with the usual natural-image channel statistics.
    fn default() -> Self {
        Self::with_size(224)
    }
}

impl PreprocessConfig {
    pub fn with_size(size: usize) -> Self {
        Self {
            size,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Decodes, resizes (bilinear), scales to `[0, 1]` and standardizes.
pub fn preprocess(path: &Path, config: &PreprocessConfig) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(preprocess_image(&img, config))
}

pub fn preprocess_image(img: &DynamicImage, config: &PreprocessConfig) -> Image {
    // grayscale sources are replicated to three channels here
    let rgb = img.to_rgb32f();
    let size = config.size as u32;
    let rgb = if rgb.dimensions() == (size, size) {
        rgb
    } else {
        image::imageops::resize(&rgb, size, size, FilterType::Triangle)
    };
    let s = config.size;
    let raw = rgb.as_raw();
    Array3::from_shape_fn((s, s, 3), |(y, x, c)| {
        let v = raw[(y * s + x) * 3 + c] as f64;
        (v - config.mean[c]) / config.std[c]
    })
}

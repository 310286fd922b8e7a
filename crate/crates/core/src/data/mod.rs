//! Dataset manifests, six-way splitting, class remapping, image
//! preprocessing and synthetic toy data.

mod manifest;
mod mapping;
mod preprocess;
mod split;
mod toy;

pub use manifest::{
    load_manifest, parse_fold, AdapterConfig, DatasetManifest, Record, RowFilter, SchemaConfig,
    MAX_FOLD,
};
pub use mapping::{intersect_classes, remap_classes, ClassMapping, Intersection, VocabularyConfig};
pub use preprocess::{preprocess, preprocess_image, PreprocessConfig};
pub use split::{split_sixths, SixWaySplit, SplitOptions, PARTS, TEST_PART};
pub use toy::{render_toy_image, synth_toy_dataset, ToyConfig};

use std::borrow::Cow;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::Image;

/// Preprocessed images for the records of a manifest, by record index.
pub trait ImageSource {
    fn len(&self) -> usize;
    fn image(&self, index: usize) -> Result<Cow<'_, Image>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All images decoded up front.
#[derive(Debug, Clone)]
pub struct InMemoryImages {
    // decode failures are kept so lenient loading can report them per record
    images: Vec<std::result::Result<Image, (PathBuf, String)>>,
}

impl InMemoryImages {
    pub fn load(manifest: &DatasetManifest, config: &PreprocessConfig) -> Result<Self> {
        let images = manifest
            .records()
            .iter()
            .map(|r| preprocess(&manifest.image_path(r), config).map(Ok))
            .collect::<Result<_>>()?;
        Ok(Self { images })
    }

    /// Like [`InMemoryImages::load`], but an unreadable image only fails
    /// when it is requested.
    pub fn load_lenient(manifest: &DatasetManifest, config: &PreprocessConfig) -> Self {
        let images = manifest
            .records()
            .iter()
            .map(|r| {
                preprocess(&manifest.image_path(r), config).map_err(|e| match e {
                    Error::Image { path, reason } => (path, reason),
                    other => (manifest.image_path(r), other.to_string()),
                })
            })
            .collect();
        Self { images }
    }

    pub fn from_images(images: Vec<Image>) -> Self {
        Self {
            images: images.into_iter().map(Ok).collect(),
        }
    }

    pub fn unreadable(&self) -> usize {
        self.images.iter().filter(|i| i.is_err()).count()
    }
}

impl ImageSource for InMemoryImages {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn image(&self, index: usize) -> Result<Cow<'_, Image>> {
        match &self.images[index] {
            Ok(img) => Ok(Cow::Borrowed(img)),
            Err((path, reason)) => Err(Error::Image {
                path: path.clone(),
                reason: reason.clone(),
            }),
        }
    }
}

/// Decodes each image when requested; for datasets too large to hold.
#[derive(Debug, Clone)]
pub struct OnDiskImages {
    manifest: DatasetManifest,
    config: PreprocessConfig,
}

impl OnDiskImages {
    pub fn new(manifest: DatasetManifest, config: PreprocessConfig) -> Self {
        Self { manifest, config }
    }
}

impl ImageSource for OnDiskImages {
    fn len(&self) -> usize {
        self.manifest.len()
    }

    fn image(&self, index: usize) -> Result<Cow<'_, Image>> {
        let record = &self.manifest.records()[index];
        preprocess(&self.manifest.image_path(record), &self.config).map(Cow::Owned)
    }
}

/// Images of `source` restricted to `indices`, re-indexed from 0.
pub struct Subset<'a, S: ImageSource + ?Sized> {
    source: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: ImageSource + ?Sized> Subset<'a, S> {
    pub fn new(source: &'a S, indices: Vec<usize>) -> Self {
        Self { source, indices }
    }
}

impl<S: ImageSource + ?Sized> ImageSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn image(&self, index: usize) -> Result<Cow<'_, Image>> {
        self.source.image(self.indices[index])
    }
}

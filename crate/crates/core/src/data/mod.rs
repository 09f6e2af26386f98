//! Labeled image records, directory loading, stratified splits, the
//! training augmentation pipeline and a synthetic stand-in dataset.

mod augment;
mod load;
mod loader;
mod split;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub use augment::{
    augment, augment_pixels, eval_transform, hflip, normalize, resize_bilinear, rotate, vflip, AugmentConfig,
    IMAGENET_MEAN, IMAGENET_STD,
};
pub use load::{load_directory, pixels_from_image, save_png, LabelRule, LoadOptions, LoadOutcome, SkipEntry};
pub use loader::{batch_from_indices, epoch_batches, epoch_order, SampleTransform};
pub use split::{stratified_split, SplitManifest, SplitPlan, SplitRatios};
pub use synth::{synth_generate, synth_image};

/// Which collection a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl Source {
    pub fn tag(self) -> &'static str {
        match self {
            Source::I => "I",
            Source::II => "II",
            Source::Synthetic => "synthetic",
        }
    }

    pub fn parse(tag: &str) -> Option<Source> {
        match tag {
            "I" => Some(Source::I),
            "II" => Some(Source::II),
            "synthetic" => Some(Source::Synthetic),
            _ => None,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One labeled image: `pixels` is `[3, H, W]` in `[0, 1]`, label 1 = tumor.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Tensor<f32>,
    pub label: u8,
    pub source: Source,
}

impl ImageRecord {
    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

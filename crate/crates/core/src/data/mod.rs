//! Photo datasets: manifests, image files and the synthetic generator.

mod image_io;
mod manifest;
mod synthetic;

pub use image_io::{
    decode_image, encode_image, encode_mask, quantize, read_image, read_mask, write_image, write_mask, BitDepth,
    ImageFormat,
};
pub use manifest::{load_manifest, GroupManifest, PhotoRecord, Split};
pub use synthetic::{gen_synthetic, synthesize, Degradation, Generated, SyntheticPhoto, SyntheticSpec, ToneCurve};

use crate::colorspace::Image;
use crate::error::Result;
use crate::losses::Mask;

/// A record's input, target and mask.
#[derive(Debug, Clone)]
pub struct LoadedPhoto {
    pub record: PhotoRecord,
    pub input: Image,
    pub target: Image,
    pub mask: Mask,
}

impl LoadedPhoto {
    pub fn load(record: &PhotoRecord) -> Result<Self> {
        Ok(LoadedPhoto {
            record: record.clone(),
            input: read_image(&record.input)?,
            target: read_image(&record.target)?,
            mask: read_mask(&record.mask)?,
        })
    }
}

//! Image → attributed region graph.
//!
//! Resize, colour-segment into regions, extract local descriptors, and tie
//! them together into an [`Arsrg`].

use std::path::{Path, PathBuf};

use grembed_core::{Arsrg, RunConfig};
use thiserror::Error;

mod assemble;
mod image;
mod import;
pub mod keypoints;
pub mod segment;

pub use crate::assemble::{assemble_arsrg, region_adjacency};
pub use crate::image::{load_and_resize, load_image, resize_bilinear, Image};
pub use crate::import::{import_descriptors, parse_descriptors};
pub use crate::keypoints::extract_descriptors;
pub use crate::segment::{quantization_bins, region_means, segment, RegionMap};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("{}: cannot decode image: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("target size {width}x{height} has a zero dimension")]
    ZeroTarget { width: usize, height: usize },
    #[error("image size {width}x{height} has a zero dimension")]
    EmptyImage { width: usize, height: usize },
    #[error("expected {expected} pixels, found {found}")]
    PixelCount { expected: usize, found: usize },
    #[error("descriptor dimension {dim} not supported by the extractor (only {supported}); import descriptors instead")]
    UnsupportedDim { dim: usize, supported: usize },
    #[error("descriptor file line {line}: {message}")]
    Import { line: usize, message: String },
    #[error("descriptor {index} at ({x}, {y}) lies outside the image")]
    DescriptorOutside { index: usize, x: f32, y: f32 },
    #[error("descriptor {index} has length {len}, expected {expected}")]
    DescriptorDim { index: usize, len: usize, expected: usize },
    #[error("image is {image:?} but region map is {regions:?}")]
    ShapeMismatch { image: (usize, usize), regions: (usize, usize) },
    #[error("assembled graph is invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Runs the whole front end on a decoded, already-resized image.
/// `descriptors` overrides extraction with externally computed ones.
pub fn build_arsrg(
    img: &Image,
    config: &RunConfig,
    image_id: &str,
    label: Option<usize>,
    descriptors: Option<Vec<grembed_core::Descriptor>>,
) -> Result<Arsrg, FrontendError> {
    let rm = segment(img, config.quantization_threshold, config.merge_threshold);
    let ds = match descriptors {
        Some(ds) => ds,
        None => extract_descriptors(img, config.descriptor_dim)?,
    };
    assemble_arsrg(&rm, ds, img, image_id, label, config.descriptor_dim)
}

/// Loads, resizes and converts one image file.
pub fn image_to_arsrg(path: &Path, config: &RunConfig, image_id: &str, label: Option<usize>) -> Result<Arsrg, FrontendError> {
    let img = load_and_resize(path, config.image_size)?;
    build_arsrg(&img, config, image_id, label, None)
}

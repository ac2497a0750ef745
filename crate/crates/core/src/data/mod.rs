//! Dataset ingestion, manifests, stratified splits and the toy lesion
//! generator.

mod ingest;
mod io;
mod manifest;
mod split;
mod toy;

pub use ingest::{ingest_dataset, IngestOptions, IngestReport, IngestSkip};
pub use io::{load_image, load_mask, resize_image, resize_mask, save_image, save_mask};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use split::{split_dataset, SplitWarning};
pub use toy::{generate_toy_dataset, toy_area_range, ToyDatasetSpec, HAM_CLASS_NAMES};

use crate::error::{invalid, shape_err, Result};

/// HWC image with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    /// Per-pixel channel mean, row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / self.channels as f64)
            .collect()
    }
}

/// Binary lesion mask, 1 = lesion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!("{} values for a {height}x{width} mask", data.len()));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(invalid!("mask value {v} is not binary"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value.min(1); height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Debug, Clone)]
pub struct ImageSample {
    pub sample_id: String,
    pub image: Image,
    pub mask: Mask,
    pub label: usize,
}

impl ImageSample {
    pub fn new(sample_id: impl Into<String>, image: Image, mask: Mask, label: usize) -> Result<Self> {
        if (image.height, image.width) != (mask.height, mask.width) {
            return Err(shape_err!(
                "image is {}x{} but mask is {}x{}",
                image.height,
                image.width,
                mask.height,
                mask.width
            ));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            image,
            mask,
            label,
        })
    }
}

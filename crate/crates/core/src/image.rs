//! The normalized single-channel image exchanged between pipeline stages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 300;
pub const PIXEL_SIZE_MM: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageMeta {
    #[serde(default)]
    pub event_count: u64,
    #[serde(default)]
    pub sigma_mm: f64,
    /// Raw value mapped to 0.
    #[serde(default)]
    pub raw_min: f64,
    /// Raw value mapped to 1.
    #[serde(default)]
    pub raw_max: f64,
    #[serde(default)]
    pub stamped: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp_seed: Option<u64>,
    /// Keys written by other tools (e.g. enhancement provenance), kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, toml::Value>,
}

/// Row-major image, row 0 at the top (largest y), intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterImage {
    pub width: usize,
    pub height: usize,
    pub pixel_size_mm: f32,
    pub data: Vec<f32>,
    pub meta: ImageMeta,
}

impl ScatterImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        ScatterImage {
            width,
            height,
            pixel_size_mm: PIXEL_SIZE_MM,
            data: vec![0.0; width * height],
            meta: ImageMeta::default(),
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("image intensity {v} outside [0, 1]")));
        }
        Ok(ScatterImage {
            data,
            ..Self::zeros(width, height)
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &ScatterImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel values widened to f64.
    pub fn values(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Undo min-max normalization using the stored raw range.
    pub fn denormalize(&self) -> Vec<f64> {
        let span = self.meta.raw_max - self.meta.raw_min;
        self.data
            .iter()
            .map(|&v| self.meta.raw_min + f64::from(v) * span)
            .collect()
    }
}

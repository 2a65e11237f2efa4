//! Dataset ingestion, deterministic batching and the HRAD activation-dump
//! format.

mod batch;
mod hrad;
mod idx;

pub use batch::{make_batches, BatchPlan};
pub use hrad::{
    decode_hrad, encode_hrad, read_hrad, write_hrad, HradRecord, HRAD_MAGIC, HRAD_VERSION,
};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-pixel standardization applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

/// Pixel scaling used when materializing a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelScale {
    /// Bytes divided by 255.
    Unit,
    /// Unit scaling followed by `(x - mean) / std`.
    Standardized,
}

/// Grayscale image classification dataset. Pixels stay as bytes; batches are
/// materialized as `f64` tensors on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
    classes: usize,
    pub split: Split,
    pub stats: NormStats,
}

impl Dataset {
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<u8>,
        rows: usize,
        cols: usize,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per = rows * cols;
        if per == 0 || pixels.len() != labels.len() * per {
            return Err(Error::invalid(format!(
                "{} pixels do not match {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            pixels,
            labels,
            rows,
            cols,
            classes,
            split,
            stats: NormStats::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let per = self.rows * self.cols;
        &self.pixels[i * per..(i + 1) * per]
    }

    /// First `n` samples (or all, when fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let per = self.rows * self.cols;
        Self {
            pixels: self.pixels[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            pixels: Vec::new(),
            labels: Vec::new(),
            rows: self.rows,
            cols: self.cols,
            classes: self.classes,
            split: self.split,
            stats: self.stats,
        }
    }

    /// Mean and standard deviation of unit-scaled pixels.
    pub fn compute_stats(&self) -> NormStats {
        let n = self.pixels.len() as f64;
        if n == 0.0 {
            return NormStats::default();
        }
        let mean = self.pixels.iter().map(|&p| p as f64 / 255.0).sum::<f64>() / n;
        let var = self
            .pixels
            .iter()
            .map(|&p| {
                let d = p as f64 / 255.0 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        NormStats {
            mean,
            std: var.sqrt().max(1e-12),
        }
    }

    pub fn with_stats(mut self, stats: NormStats) -> Self {
        self.stats = stats;
        self
    }

    /// Materializes the given samples as an `(s, 1, rows, cols)` tensor.
    pub fn tensor(&self, indices: &[usize], scale: PixelScale) -> Tensor4 {
        let per = self.rows * self.cols;
        let (offset, factor) = match scale {
            PixelScale::Unit => (0.0, 1.0),
            PixelScale::Standardized => (self.stats.mean, 1.0 / self.stats.std),
        };
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(
                self.image(i)
                    .iter()
                    .map(|&p| (p as f64 / 255.0 - offset) * factor),
            );
        }
        Tensor4::from_raw(indices.len(), 1, self.rows, self.cols, data)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.label(i)).collect()
    }
}

//! Object histograms, geotagged datasets, synthetic data, and dataset statistics.

mod dataset;
mod synth;
mod tile;

pub use dataset::{
    load_dataset, save_dataset, split_dataset, split_indices, DatasetFormat, GeoSample, ResolvedInput, TileRef,
    INLINE_TILE_PREFIX, TILE_HALF_EXTENT_DEG,
};
pub use synth::{
    default_rates, generate_synthetic, generate_synthetic_grid, CategoryRate, LatentField, SyntheticConfig,
    SyntheticDataset, SyntheticGrid, RATE_FLOOR,
};
pub use tile::{quantize, OverheadTile};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category count of the detector heads when nothing else is configured.
pub const DEFAULT_CATEGORIES: usize = 91;

/// Detector score above which a detection is counted.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

/// One detector output record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category_id: usize,
    pub score: f64,
}

/// Per-category tally of detected objects in one ground-level image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectHistogram {
    counts: Vec<u32>,
}

impl ObjectHistogram {
    pub fn new(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn zeros(categories: usize) -> Self {
        Self {
            counts: vec![0; categories],
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn categories(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Tally detections whose score strictly exceeds `threshold`.
///
/// A detection scoring exactly `threshold` is not counted.
pub fn build_histogram(
    detections: &[Detection],
    threshold: f64,
    categories: usize,
) -> Result<ObjectHistogram> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let mut counts = vec![0u32; categories];
    for (i, det) in detections.iter().enumerate() {
        if det.category_id >= categories {
            return Err(Error::Input(format!(
                "detection {i} has category_id {} but only {categories} categories are configured",
                det.category_id
            )));
        }
        if !(0.0..=1.0).contains(&det.score) {
            return Err(Error::Input(format!(
                "detection {i} has score {} outside [0, 1]",
                det.score
            )));
        }
        if det.score > threshold {
            counts[det.category_id] += 1;
        }
    }
    Ok(ObjectHistogram { counts })
}

/// Summary of a dataset's object counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    /// `total_histogram[n]` is the number of samples containing exactly `n` objects.
    pub total_histogram: Vec<usize>,
    /// Summed counts per category.
    pub category_totals: Vec<u64>,
    /// Share of all detected objects falling in each category (zeros if nothing was detected).
    pub category_frequency: Vec<f64>,
    /// Mean objects per sample, excluding samples with no objects.
    pub mean_nonzero_total: Option<f64>,
    pub max_total: u64,
    /// Fraction of samples with at least one object.
    pub nonzero_fraction: f64,
}

pub fn dataset_stats(samples: &[GeoSample]) -> Result<DatasetStats> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Parameter("dataset statistics need at least one sample".into()))?;
    let categories = first.histogram.categories();
    let mut category_totals = vec![0u64; categories];
    let mut totals = Vec::with_capacity(samples.len());
    for s in samples {
        if s.histogram.categories() != categories {
            return Err(Error::Shape(format!(
                "sample {} has {} categories, expected {categories}",
                s.id,
                s.histogram.categories()
            )));
        }
        for (acc, &c) in category_totals.iter_mut().zip(s.histogram.counts()) {
            *acc += u64::from(c);
        }
        totals.push(s.histogram.total());
    }

    let max_total = totals.iter().copied().max().unwrap_or(0);
    let mut total_histogram = vec![0usize; max_total as usize + 1];
    for &t in &totals {
        total_histogram[t as usize] += 1;
    }

    let nonzero: Vec<u64> = totals.iter().copied().filter(|&t| t > 0).collect();
    let mean_nonzero_total = if nonzero.is_empty() {
        None
    } else {
        Some(nonzero.iter().sum::<u64>() as f64 / nonzero.len() as f64)
    };

    let grand: u64 = category_totals.iter().sum();
    let category_frequency = category_totals
        .iter()
        .map(|&c| if grand == 0 { 0.0 } else { c as f64 / grand as f64 })
        .collect();

    Ok(DatasetStats {
        samples: samples.len(),
        total_histogram,
        category_totals,
        category_frequency,
        mean_nonzero_total,
        max_total,
        nonzero_fraction: nonzero.len() as f64 / samples.len() as f64,
    })
}

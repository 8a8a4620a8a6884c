//! Spatial products: kernel-smoothed baseline maps, model heatmaps, top-k
//! retrieval, clustering of predicted parameters, and raster output.

mod cluster;
mod render;

pub use cluster::{cluster_params, lloyd, ClusterModel, ClusterOptions, LloydRun, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
pub use render::{render_raster, write_sidecar, MapSidecar, Palette, Rgb, GREEN_HIGH, GREEN_LOW, NO_DATA_COLOR, TAB10};

use serde::{Deserialize, Serialize};

use crate::counts::{GeoSample, ResolvedInput};
use crate::dists::expected_count;
use crate::error::{Error, Result};
use crate::geo::{equirect_distance_deg, GridSpec};
use crate::net::{encode_batch, forward_infer, ModelConfig, ModelWeights};

/// Bandwidth in degrees used when none is given.
pub const DEFAULT_BANDWIDTH_DEG: f64 = 0.5;

/// Cells farther than this many bandwidths from every sample carry no value.
pub const NO_DATA_BANDWIDTHS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Raw values stored; min-max normalized when rendered.
    MinMax,
    /// Integer ids mapped to a fixed palette.
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cells", rename_all = "snake_case")]
pub enum MapValues {
    Real(Vec<Option<f64>>),
    Cluster(Vec<Option<usize>>),
}

impl MapValues {
    pub fn len(&self) -> usize {
        match self {
            MapValues::Real(v) => v.len(),
            MapValues::Cluster(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major raster of per-cell values; `None` is no-data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterMap {
    pub grid: GridSpec,
    pub values: MapValues,
    pub label: String,
    pub scaling: Scaling,
}

impl RasterMap {
    pub fn new(grid: GridSpec, values: MapValues, label: impl Into<String>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.rows,
                grid.cols
            )));
        }
        let scaling = match values {
            MapValues::Real(_) => Scaling::MinMax,
            MapValues::Cluster(_) => Scaling::Categorical,
        };
        Ok(Self {
            grid,
            values,
            label: label.into(),
            scaling,
        })
    }

    pub fn real(&self) -> Option<&[Option<f64>]> {
        match &self.values {
            MapValues::Real(v) => Some(v),
            MapValues::Cluster(_) => None,
        }
    }

    pub fn clusters(&self) -> Option<&[Option<usize>]> {
        match &self.values {
            MapValues::Cluster(v) => Some(v),
            MapValues::Real(_) => None,
        }
    }
}

/// Gaussian-kernel weighted mean of one category's counts at every cell center.
pub fn baseline_map(samples: &[GeoSample], category: usize, grid: &GridSpec, bandwidth: f64) -> Result<RasterMap> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if samples.is_empty() {
        return Err(Error::Parameter("baseline map needs at least one sample".into()));
    }
    grid.validate()?;
    let counts = samples
        .iter()
        .map(|s| {
            s.histogram.counts().get(category).map(|&c| f64::from(c)).ok_or_else(|| {
                Error::Parameter(format!(
                    "category {category} out of range: sample {} has {} categories",
                    s.id,
                    s.histogram.categories()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let two_h2 = 2.0 * bandwidth * bandwidth;
    let cutoff = NO_DATA_BANDWIDTHS * bandwidth;
    let mut values = Vec::with_capacity(grid.len());
    let mut d2 = vec![0.0; samples.len()];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (lat, lon) = grid.cell_center(r, c);
            for (d, s) in d2.iter_mut().zip(samples) {
                *d = equirect_distance_deg(lat, lon, s.lat, s.lon).powi(2);
            }
            let nearest = d2.iter().copied().fold(f64::INFINITY, f64::min);
            if nearest.sqrt() > cutoff {
                values.push(None);
                continue;
            }
            // shifting by the nearest distance keeps the largest weight at 1
            let (mut num, mut den) = (0.0, 0.0);
            for (&d, &k) in d2.iter().zip(&counts) {
                let w = (-(d - nearest) / two_h2).exp();
                num += w * k;
                den += w;
            }
            values.push(Some(num / den));
        }
    }
    RasterMap::new(*grid, MapValues::Real(values), format!("baseline category {category}"))
}

/// One optional model input per grid cell, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub grid: GridSpec,
    pub cells: Vec<Option<ResolvedInput>>,
}

impl TileGrid {
    pub fn new(grid: GridSpec, cells: Vec<Option<ResolvedInput>>) -> Result<Self> {
        grid.validate()?;
        if cells.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} tiles for a {}x{} grid",
                cells.len(),
                grid.rows,
                grid.cols
            )));
        }
        Ok(Self { grid, cells })
    }
}

fn check_category(config: &ModelConfig, category: usize) -> Result<()> {
    if category >= config.categories {
        return Err(Error::Parameter(format!(
            "category {category} out of range: model has categories 0..{}",
            config.categories
        )));
    }
    Ok(())
}

/// Expected count of every category for each input.
pub fn expected_counts(weights: &ModelWeights, config: &ModelConfig, inputs: &[ResolvedInput]) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let x = encode_batch(&config.input, inputs)?;
    let out = forward_infer(weights, config, &x)?;
    Ok(out.params.iter().map(expected_count).collect())
}

/// Per-cell expected count of `category`. Missing tiles become no-data.
pub fn model_heatmap(weights: &ModelWeights, config: &ModelConfig, tiles: &TileGrid, category: usize) -> Result<RasterMap> {
    check_category(config, category)?;
    let present: Vec<ResolvedInput> = tiles.cells.iter().flatten().cloned().collect();
    let missing = tiles.cells.len() - present.len();
    if missing > 0 {
        log::warn!("{missing} of {} grid cells have no tile; marked as no-data", tiles.cells.len());
    }
    let mut predicted = expected_counts(weights, config, &present)?.into_iter();
    let values = tiles
        .cells
        .iter()
        .map(|cell| cell.as_ref().map(|_| predicted.next().expect("one prediction per tile")[category]))
        .collect();
    RasterMap::new(tiles.grid, MapValues::Real(values), format!("expected count category {category}"))
}

/// The `k` inputs with the highest expected count of `category`, ties by ascending id.
pub fn top_k_tiles(
    weights: &ModelWeights,
    config: &ModelConfig,
    tiles: &[(String, ResolvedInput)],
    category: usize,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    check_category(config, category)?;
    if k > tiles.len() {
        return Err(Error::Parameter(format!("k = {k} exceeds the {} available tiles", tiles.len())));
    }
    let inputs: Vec<ResolvedInput> = tiles.iter().map(|(_, t)| t.clone()).collect();
    let predicted = expected_counts(weights, config, &inputs)?;
    let mut ranked: Vec<(String, f64)> = tiles
        .iter()
        .zip(predicted)
        .map(|((id, _), p)| (id.clone(), p[category]))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests;

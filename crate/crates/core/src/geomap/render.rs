//! Raster rendering to binary PPM, plus metadata sidecars.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use super::{MapValues, RasterMap, Scaling};
use crate::error::{Error, Result};
use crate::geo::GeoBounds;

pub type Rgb = [u8; 3];

/// Color of the lowest value on the green scale.
pub const GREEN_LOW: Rgb = [247, 252, 245];
/// Color of the highest value on the green scale.
pub const GREEN_HIGH: Rgb = [0, 68, 27];
/// Reserved for no-data cells; absent from both palettes.
pub const NO_DATA_COLOR: Rgb = [0, 0, 0];

pub const TAB10: [Rgb; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    GreenScale,
    Categorical,
}

fn lerp(t: f64) -> Rgb {
    let mut out = [0u8; 3];
    for (o, (&lo, &hi)) in out.iter_mut().zip(GREEN_LOW.iter().zip(&GREEN_HIGH)) {
        *o = (f64::from(lo) + t * (f64::from(hi) - f64::from(lo))).round() as u8;
    }
    out
}

fn green_colors(values: &[Option<f64>]) -> Result<Vec<Rgb>> {
    if let Some(bad) = values.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::Render(format!("map holds non-finite value {bad}")));
    }
    let present = || values.iter().flatten().copied();
    let lo = present().fold(f64::INFINITY, f64::min);
    let hi = present().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Ok(values
        .iter()
        .map(|v| match v {
            None => NO_DATA_COLOR,
            Some(_) if span <= 0.0 => GREEN_LOW,
            Some(x) => lerp((x - lo) / span),
        })
        .collect())
}

/// Binary PPM of `map`; one pixel per cell, row 0 at the top (north).
pub fn render_raster(map: &RasterMap, palette: Palette) -> Result<Vec<u8>> {
    map.grid.validate()?;
    if map.values.len() != map.grid.len() {
        return Err(Error::Render(format!(
            "{} values for a {}x{} grid",
            map.values.len(),
            map.grid.rows,
            map.grid.cols
        )));
    }
    let colors = match (&map.values, palette) {
        (MapValues::Real(v), Palette::GreenScale) => green_colors(v)?,
        (MapValues::Cluster(v), Palette::Categorical) => v
            .iter()
            .map(|c| c.map_or(NO_DATA_COLOR, |id| TAB10[id % TAB10.len()]))
            .collect(),
        (MapValues::Real(_), Palette::Categorical) => {
            return Err(Error::Render("categorical palette needs a cluster map".into()))
        }
        (MapValues::Cluster(_), Palette::GreenScale) => {
            return Err(Error::Render("green scale needs a real-valued map".into()))
        }
    };
    let raw: Vec<u8> = colors.concat();
    let mut out = Cursor::new(Vec::new());
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&raw, map.grid.cols as u32, map.grid.rows as u32, ExtendedColorType::Rgb8)?;
    Ok(out.into_inner())
}

/// Metadata written next to a rendered raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub bounds: GeoBounds,
    pub rows: usize,
    pub cols: usize,
    pub label: String,
    pub scaling: Scaling,
    /// Min and max over present cells of a real map.
    pub value_range: Option<(f64, f64)>,
}

impl MapSidecar {
    pub fn of(map: &RasterMap) -> Self {
        let value_range = map.real().and_then(|v| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            (!present.is_empty()).then(|| {
                (
                    present.iter().copied().fold(f64::INFINITY, f64::min),
                    present.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            })
        });
        Self {
            bounds: map.grid.bounds,
            rows: map.grid.rows,
            cols: map.grid.cols,
            label: map.label.clone(),
            scaling: map.scaling,
            value_range,
        }
    }
}

pub fn write_sidecar(map: &RasterMap, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&MapSidecar::of(map))
        .map_err(|e| Error::Render(format!("cannot encode sidecar: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

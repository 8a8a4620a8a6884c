//! Tile-grid files: a JSON document naming one optional tile per grid cell.
//!
//! ```json
//! {"grid": {"bounds": {...}, "rows": 2, "cols": 3},
//!  "tiles": ["tiles/r000c000.ppm", null, ...]}
//! ```
//!
//! Paths are relative to the grid file and listed row-major, row 0 north.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use overcount::counts::{OverheadTile, ResolvedInput};
use overcount::geo::{GeoBounds, GridSpec};
use overcount::geomap::TileGrid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFile {
    pub grid: GridSpec,
    pub tiles: Vec<Option<PathBuf>>,
}

pub fn cell_bounds(grid: &GridSpec, row: usize, col: usize) -> GeoBounds {
    let (lat, lon) = grid.cell_center(row, col);
    let dlat = 0.5 * grid.bounds.lat_span() / grid.rows as f64;
    let dlon = 0.5 * grid.bounds.lon_span() / grid.cols as f64;
    GeoBounds {
        lat_min: lat - dlat,
        lat_max: lat + dlat,
        lon_min: lon - dlon,
        lon_max: lon + dlon,
    }
}

pub fn read_grid_file(path: &Path) -> Result<GridFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file: GridFile = serde_json::from_str(&text).with_context(|| format!("malformed grid file {}", path.display()))?;
    file.grid.validate()?;
    if file.tiles.len() != file.grid.len() {
        bail!(
            "{}: {} tiles listed for a {}x{} grid",
            path.display(),
            file.tiles.len(),
            file.grid.rows,
            file.grid.cols
        );
    }
    Ok(file)
}

/// Load every listed tile. Null entries and absent files become empty cells.
pub fn load_tile_grid(path: &Path) -> Result<(TileGrid, Vec<String>)> {
    let file = read_grid_file(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cells = Vec::with_capacity(file.tiles.len());
    let mut ids = Vec::with_capacity(file.tiles.len());
    for (i, entry) in file.tiles.iter().enumerate() {
        let (r, c) = (i / file.grid.cols, i % file.grid.cols);
        ids.push(format!("r{r:03}c{c:03}"));
        let cell = match entry {
            None => None,
            Some(rel) => {
                let full = base.join(rel);
                if full.exists() {
                    let tile = OverheadTile::load_pnm(&full, cell_bounds(&file.grid, r, c))?;
                    Some(ResolvedInput::Tile(tile))
                } else {
                    log::warn!("tile {} is missing", full.display());
                    None
                }
            }
        };
        cells.push(cell);
    }
    Ok((TileGrid::new(file.grid, cells)?, ids))
}

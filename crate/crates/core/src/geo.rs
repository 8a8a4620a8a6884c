//! Geographic rectangles, regular grids, and equirectangular distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned latitude/longitude rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBounds {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let bounds = Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    /// Square box of half-width `half_extent` degrees around a point, clipped to the globe.
    pub fn around(lat: f64, lon: f64, half_extent: f64) -> Self {
        Self {
            lat_min: (lat - half_extent).max(-90.0),
            lat_max: (lat + half_extent).min(90.0),
            lon_min: (lon - half_extent).max(-180.0),
            lon_max: (lon + half_extent).min(180.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parameter(format!("non-finite bounds {self:?}")));
        }
        if self.lat_min < -90.0 || self.lat_max > 90.0 {
            return Err(Error::Parameter(format!("latitude outside [-90, 90] in {self:?}")));
        }
        if self.lon_min < -180.0 || self.lon_max > 180.0 {
            return Err(Error::Parameter(format!("longitude outside [-180, 180] in {self:?}")));
        }
        if self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(Error::Parameter(format!("degenerate bounds {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn lat_span(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    pub fn lon_span(&self) -> f64 {
        self.lon_max - self.lon_min
    }
}

/// Regular raster over a [`GeoBounds`]. Row 0 is the northern edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: GeoBounds,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(bounds: GeoBounds, rows: usize, cols: usize) -> Result<Self> {
        let grid = Self { bounds, rows, cols };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Parameter(format!(
                "grid must have at least one row and column, got {}x{}",
                self.rows, self.cols
            )));
        }
        self.bounds.validate()
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (lat, lon) of the center of cell (`row`, `col`).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let dlat = self.bounds.lat_span() / self.rows as f64;
        let dlon = self.bounds.lon_span() / self.cols as f64;
        (
            self.bounds.lat_max - (row as f64 + 0.5) * dlat,
            self.bounds.lon_min + (col as f64 + 0.5) * dlon,
        )
    }

    /// Cell containing a point, if the point lies inside the bounds.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        if !self.bounds.contains(lat, lon) {
            return None;
        }
        let fr = (self.bounds.lat_max - lat) / self.bounds.lat_span() * self.rows as f64;
        let fc = (lon - self.bounds.lon_min) / self.bounds.lon_span() * self.cols as f64;
        let row = (fr as usize).min(self.rows - 1);
        let col = (fc as usize).min(self.cols - 1);
        Some((row, col))
    }
}

/// Equirectangular distance in degrees of latitude.
///
/// Longitude differences are scaled by the cosine of the mean latitude, which
/// is accurate at city scale.
pub fn equirect_distance_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let mean_lat = (0.5 * (lat1 + lat2)).to_radians();
    let dx = (lon1 - lon2) * mean_lat.cos();
    let dy = lat1 - lat2;
    dx.hypot(dy)
}

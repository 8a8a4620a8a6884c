//! Desk-scale synthetic datasets with known per-category rates.
//!
//! Each sample gets a latent intensity per channel. Its tile is that intensity
//! plus bounded uniform noise, quantized to 8 bits, and the true rate for a
//! category is an affine function of the tile's mean intensity on one channel.
//! Counts are Poisson draws from the true rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::dataset::TILE_HALF_EXTENT_DEG;
use super::{GeoSample, ObjectHistogram, OverheadTile, TileRef};
use crate::error::{Error, Result};
use crate::geo::{GeoBounds, GridSpec};

/// Rates at or below this are treated as zero: the count is always 0.
pub const RATE_FLOOR: f64 = 1e-8;

/// `rate = intercept + slope * mean(tile[.., .., channel])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryRate {
    pub channel: usize,
    pub intercept: f64,
    pub slope: f64,
}

impl CategoryRate {
    pub fn constant(rate: f64) -> Self {
        Self {
            channel: 0,
            intercept: rate,
            slope: 0.0,
        }
    }

    pub fn rate_for(&self, tile: &OverheadTile) -> f64 {
        (self.intercept + self.slope * tile.channel_mean(self.channel)).max(0.0)
    }
}

/// How latent channel intensities are assigned to samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentField {
    /// Independent uniform draw per channel and sample.
    Uniform,
    /// Every channel equals the sample's normalized longitude, west 0 to east 1.
    LonGradient,
    /// One of the listed levels, chosen uniformly, shared by all channels.
    Levels(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub categories: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub channels: usize,
    pub samples: usize,
    pub rates: Vec<CategoryRate>,
    pub latent: LatentField,
    pub bounds: GeoBounds,
    /// Half-width of the uniform pixel noise around the latent intensity.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let categories = super::DEFAULT_CATEGORIES;
        let channels = 3;
        Self {
            categories,
            tile_height: 8,
            tile_width: 8,
            channels,
            samples: 2000,
            rates: default_rates(categories, channels),
            latent: LatentField::Uniform,
            bounds: GeoBounds {
                lat_min: 37.70,
                lat_max: 37.82,
                lon_min: -122.52,
                lon_max: -122.36,
            },
            pixel_noise: 0.05,
            seed: 0,
        }
    }
}

/// Mean rates decay geometrically from 2.63 for category 0; each category
/// keys off channel `c % channels` and triples its rate from dark to bright.
pub fn default_rates(categories: usize, channels: usize) -> Vec<CategoryRate> {
    (0..categories)
        .map(|c| {
            let mean = 2.63 * 0.6f64.powi(c as i32);
            CategoryRate {
                channel: c % channels.max(1),
                intercept: 0.25 * mean,
                slope: 1.5 * mean,
            }
        })
        .collect()
}

impl SyntheticConfig {
    /// Same geometry as the default with every category's rate replaced.
    pub fn with_rates(mut self, rates: Vec<CategoryRate>) -> Self {
        self.categories = rates.len();
        self.rates = rates;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 {
            return Err(Error::Parameter("synthetic data needs at least one category".into()));
        }
        if self.rates.len() != self.categories {
            return Err(Error::Parameter(format!(
                "{} rate functions for {} categories",
                self.rates.len(),
                self.categories
            )));
        }
        if self.tile_height == 0 || self.tile_width == 0 || self.channels == 0 {
            return Err(Error::Parameter("tile dimensions must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.pixel_noise) {
            return Err(Error::Parameter(format!(
                "pixel noise {} outside [0, 0.5]",
                self.pixel_noise
            )));
        }
        for (c, r) in self.rates.iter().enumerate() {
            if r.channel >= self.channels {
                return Err(Error::Parameter(format!(
                    "category {c} reads channel {} of a {}-channel tile",
                    r.channel, self.channels
                )));
            }
            // affine on [0, 1]: non-negative at both ends means non-negative throughout
            let (lo, hi) = (r.intercept, r.intercept + r.slope);
            if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || hi < 0.0 {
                return Err(Error::Parameter(format!(
                    "category {c} rate function produces negative or non-finite rates"
                )));
            }
        }
        if let LatentField::Levels(levels) = &self.latent {
            if levels.is_empty() || levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(Error::Parameter("latent levels must be non-empty and in [0, 1]".into()));
            }
        }
        self.bounds.validate()
    }

    fn make_tile(&self, rng: &mut ChaCha8Rng, latent: &[f64], bounds: GeoBounds) -> Result<OverheadTile> {
        let n = self.tile_height * self.tile_width;
        let mut pixels = Vec::with_capacity(n * self.channels);
        for _ in 0..n {
            for &u in latent {
                let noise = if self.pixel_noise > 0.0 {
                    rng.random_range(-self.pixel_noise..=self.pixel_noise)
                } else {
                    0.0
                };
                let level = super::quantize(u + noise);
                pixels.push(f64::from(level) / 255.0);
            }
        }
        OverheadTile::new(self.tile_height, self.tile_width, self.channels, pixels, bounds)
    }

    fn latent_at(&self, rng: &mut ChaCha8Rng, lon: f64) -> Vec<f64> {
        match &self.latent {
            LatentField::Uniform => (0..self.channels).map(|_| rng.random::<f64>()).collect(),
            LatentField::LonGradient => {
                let u = ((lon - self.bounds.lon_min) / self.bounds.lon_span()).clamp(0.0, 1.0);
                vec![u; self.channels]
            }
            LatentField::Levels(levels) => {
                let u = levels[rng.random_range(0..levels.len())];
                vec![u; self.channels]
            }
        }
    }

    fn true_rates(&self, tile: &OverheadTile) -> Vec<f64> {
        self.rates.iter().map(|r| r.rate_for(tile)).collect()
    }
}

fn draw_count(rng: &mut ChaCha8Rng, rate: f64) -> u32 {
    if rate <= RATE_FLOOR {
        return 0;
    }
    // rate is finite and positive after validation
    let poisson = Poisson::new(rate).expect("validated rate");
    poisson.sample(rng) as u32
}

/// Samples plus the rate vector each histogram was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<GeoSample>,
    pub true_rates: Vec<Vec<f64>>,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let b = config.bounds;
    let mut samples = Vec::with_capacity(config.samples);
    let mut true_rates = Vec::with_capacity(config.samples);
    for i in 0..config.samples {
        let lat = rng.random_range(b.lat_min..=b.lat_max);
        let lon = rng.random_range(b.lon_min..=b.lon_max);
        let latent = config.latent_at(&mut rng, lon);
        let tile = config.make_tile(
            &mut rng,
            &latent,
            GeoBounds::around(lat, lon, TILE_HALF_EXTENT_DEG),
        )?;
        let rates = config.true_rates(&tile);
        let counts = rates.iter().map(|&r| draw_count(&mut rng, r)).collect();
        samples.push(GeoSample {
            id: format!("s{i:06}"),
            lat,
            lon,
            histogram: ObjectHistogram::new(counts),
            tile: TileRef::Inline(tile.to_pnm_bytes()?),
        });
        true_rates.push(rates);
    }
    Ok(SyntheticDataset {
        samples,
        true_rates,
    })
}

/// One synthetic tile per cell of a regular grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGrid {
    pub grid: GridSpec,
    pub tiles: Vec<OverheadTile>,
    pub true_rates: Vec<Vec<f64>>,
}

/// Dense tile coverage of the configured bounds, for heatmaps and clustering.
///
/// Uses its own random stream, so it does not perturb [`generate_synthetic`].
pub fn generate_synthetic_grid(config: &SyntheticConfig, rows: usize, cols: usize) -> Result<SyntheticGrid> {
    config.validate()?;
    let grid = GridSpec::new(config.bounds, rows, cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let dlat = grid.bounds.lat_span() / rows as f64;
    let dlon = grid.bounds.lon_span() / cols as f64;
    let mut tiles = Vec::with_capacity(grid.len());
    let mut true_rates = Vec::with_capacity(grid.len());
    for r in 0..rows {
        for c in 0..cols {
            let (lat, lon) = grid.cell_center(r, c);
            let cell = GeoBounds {
                lat_min: lat - 0.5 * dlat,
                lat_max: lat + 0.5 * dlat,
                lon_min: lon - 0.5 * dlon,
                lon_max: lon + 0.5 * dlon,
            };
            let latent = config.latent_at(&mut rng, lon);
            let tile = config.make_tile(&mut rng, &latent, cell)?;
            true_rates.push(config.true_rates(&tile));
            tiles.push(tile);
        }
    }
    Ok(SyntheticGrid {
        grid,
        tiles,
        true_rates,
    })
}

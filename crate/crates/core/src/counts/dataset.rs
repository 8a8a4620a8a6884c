//! Geotagged samples and their JSONL / CSV encodings.
//!
//! JSONL: one object per line,
//! `{"id": str, "lat": num, "lon": num, "counts": [int; C], "tile": str}`, where
//! `tile` is either a path relative to the dataset file or `base64:` followed
//! by the base64 encoding of a binary PGM/PPM. A record may carry
//! `"features": [num, ...]` instead of `tile` to supply a precomputed feature
//! vector.
//!
//! CSV: header `id,lat,lon,tile,c0,...,c{C-1}` with the same `tile` grammar.
//! Feature vectors are JSONL-only.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ObjectHistogram, OverheadTile};
use crate::error::{Error, Result};
use crate::geo::GeoBounds;

/// Prefix marking an inline base64-encoded tile in the `tile` field.
pub const INLINE_TILE_PREFIX: &str = "base64:";

/// Half-width in degrees of the footprint assigned to tiles loaded for a sample.
pub const TILE_HALF_EXTENT_DEG: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Guess from a file extension; anything other than `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

/// Where a sample's overhead view comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TileRef {
    /// PGM/PPM file, relative to the dataset file's directory unless absolute.
    Path(PathBuf),
    /// PGM/PPM bytes carried in the record itself.
    Inline(Vec<u8>),
    /// Precomputed feature vector standing in for the image.
    Features(Vec<f64>),
}

impl TileRef {
    fn to_field(&self) -> Option<String> {
        match self {
            TileRef::Path(p) => Some(p.to_string_lossy().into_owned()),
            TileRef::Inline(bytes) => Some(format!("{INLINE_TILE_PREFIX}{}", BASE64.encode(bytes))),
            TileRef::Features(_) => None,
        }
    }

    fn from_field(field: &str, line: usize) -> Result<Self> {
        match field.strip_prefix(INLINE_TILE_PREFIX) {
            Some(b64) => BASE64
                .decode(b64.trim())
                .map(TileRef::Inline)
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("inline tile is not valid base64: {e}"),
                }),
            None if field.is_empty() => Err(Error::Schema {
                line,
                message: "empty tile reference".into(),
            }),
            None => Ok(TileRef::Path(PathBuf::from(field))),
        }
    }
}

/// Decoded model input for one location.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedInput {
    Tile(OverheadTile),
    Features(Vec<f64>),
}

impl ResolvedInput {
    /// Flat vector fed to the network (HWC order for tiles).
    pub fn as_slice(&self) -> &[f64] {
        match self {
            ResolvedInput::Tile(t) => t.pixels(),
            ResolvedInput::Features(f) => f,
        }
    }
}

/// Object histogram paired with the overhead view of the same location.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoSample {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub histogram: ObjectHistogram,
    pub tile: TileRef,
}

impl GeoSample {
    /// Load the overhead view, resolving relative paths against `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedInput> {
        let bounds = GeoBounds::around(self.lat, self.lon, TILE_HALF_EXTENT_DEG);
        let tile = match &self.tile {
            TileRef::Features(f) => return Ok(ResolvedInput::Features(f.clone())),
            TileRef::Inline(bytes) => OverheadTile::from_pnm_bytes(bytes, bounds),
            TileRef::Path(p) => OverheadTile::load_pnm(&base_dir.join(p), bounds),
        };
        tile.map(ResolvedInput::Tile)
            .map_err(|e| Error::Input(format!("sample {}: cannot resolve tile: {e}", self.id)))
    }

    fn validate(&self, line: usize) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Schema {
                line,
                message: format!(
                    "sample {} has coordinates ({}, {}) outside the globe",
                    self.id, self.lat, self.lon
                ),
            });
        }
        if self.id.is_empty() {
            return Err(Error::Schema {
                line,
                message: "empty sample id".into(),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    id: String,
    lat: f64,
    lon: f64,
    counts: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
}

/// Checks histogram width (fixing it from the first record when `expected` is
/// `None`) and id uniqueness.
struct SchemaGuard {
    categories: Option<usize>,
    ids: HashSet<String>,
}

impl SchemaGuard {
    fn check(&mut self, sample: &GeoSample, line: usize) -> Result<()> {
        sample.validate(line)?;
        let width = sample.histogram.categories();
        match self.categories {
            Some(c) if c != width => {
                return Err(Error::Schema {
                    line,
                    message: format!("histogram has {width} categories, expected {c}"),
                })
            }
            Some(_) => {}
            None => self.categories = Some(width),
        }
        if !self.ids.insert(sample.id.clone()) {
            return Err(Error::Schema {
                line,
                message: format!("duplicate sample id {}", sample.id),
            });
        }
        Ok(())
    }
}

/// Parse a dataset file. `categories`, when given, is the required histogram width.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    categories: Option<usize>,
) -> Result<Vec<GeoSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut guard = SchemaGuard {
        categories,
        ids: HashSet::new(),
    };
    match format {
        DatasetFormat::Jsonl => load_jsonl(BufReader::new(file), path, &mut guard),
        DatasetFormat::Csv => load_csv(file, &mut guard),
    }
}

fn load_jsonl(reader: impl BufRead, path: &Path, guard: &mut SchemaGuard) -> Result<Vec<GeoSample>> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let tile = match (rec.tile, rec.features) {
            (Some(t), None) => TileRef::from_field(&t, lineno)?,
            (None, Some(f)) => TileRef::Features(f),
            _ => {
                return Err(Error::Schema {
                    line: lineno,
                    message: "record needs exactly one of `tile` or `features`".into(),
                })
            }
        };
        let sample = GeoSample {
            id: rec.id,
            lat: rec.lat,
            lon: rec.lon,
            histogram: ObjectHistogram::new(rec.counts),
            tile,
        };
        guard.check(&sample, lineno)?;
        samples.push(sample);
    }
    Ok(samples)
}

fn load_csv(file: File, guard: &mut SchemaGuard) -> Result<Vec<GeoSample>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let fixed = ["id", "lat", "lon", "tile"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Schema {
            line: 1,
            message: format!("CSV header must start with id,lat,lon,tile; got {headers:?}"),
        });
    }
    for (i, h) in headers.iter().skip(fixed.len()).enumerate() {
        if h != format!("c{i}") {
            return Err(Error::Schema {
                line: 1,
                message: format!("expected count column c{i}, found {h}"),
            });
        }
    }

    let mut samples = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse_f64 = |idx: usize, name: &str| -> Result<f64> {
            rec[idx].trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("{name}: {e}"),
            })
        };
        let lat = parse_f64(1, "lat")?;
        let lon = parse_f64(2, "lon")?;
        let counts = (fixed.len()..rec.len())
            .map(|i| {
                rec[i].trim().parse::<u32>().map_err(|e| Error::Parse {
                    line,
                    message: format!("c{}: {e}", i - fixed.len()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sample = GeoSample {
            id: rec[0].to_string(),
            lat,
            lon,
            histogram: ObjectHistogram::new(counts),
            tile: TileRef::from_field(&rec[3], line)?,
        };
        guard.check(&sample, line)?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn save_dataset(path: &Path, samples: &[GeoSample], format: DatasetFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        DatasetFormat::Jsonl => {
            for s in samples {
                let (tile, features) = match &s.tile {
                    TileRef::Features(f) => (None, Some(f.clone())),
                    other => (other.to_field(), None),
                };
                let rec = JsonRecord {
                    id: s.id.clone(),
                    lat: s.lat,
                    lon: s.lon,
                    counts: s.histogram.counts().to_vec(),
                    tile,
                    features,
                };
                let line = serde_json::to_string(&rec)
                    .map_err(|e| Error::Input(format!("sample {}: {e}", s.id)))?;
                writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
            }
        }
        DatasetFormat::Csv => {
            let categories = samples.first().map_or(0, |s| s.histogram.categories());
            let mut w = csv::Writer::from_writer(&mut out);
            let mut header: Vec<String> = ["id", "lat", "lon", "tile"].map(String::from).to_vec();
            header.extend((0..categories).map(|i| format!("c{i}")));
            let to_err = |e: csv::Error| Error::Input(format!("CSV write: {e}"));
            w.write_record(&header).map_err(to_err)?;
            for s in samples {
                let tile = s.tile.to_field().ok_or_else(|| {
                    Error::Input(format!(
                        "sample {}: feature vectors cannot be stored in CSV",
                        s.id
                    ))
                })?;
                let mut row = vec![s.id.clone(), s.lat.to_string(), s.lon.to_string(), tile];
                row.extend(s.histogram.counts().iter().map(|c| c.to_string()));
                w.write_record(&row).map_err(to_err)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Index partition behind [`split_dataset`]: `(train, test)`, each ascending.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test fraction must lie strictly between 0 and 1, got {test_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Parameter(format!(
            "splitting needs at least 2 samples, got {n}"
        )));
    }
    // round half up
    let n_test = (test_fraction * n as f64 + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Seeded random train/test partition with `round(test_fraction * n)` test items.
pub fn split_dataset<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = split_indices(items.len(), test_fraction, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| items[i].clone()).collect();
    Ok((pick(train), pick(test)))
}

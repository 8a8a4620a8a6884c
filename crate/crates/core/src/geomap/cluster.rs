//! K-means over predicted parameter vectors: k-means++ seeding, Lloyd
//! iterations, best of several restarts.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 8;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Cluster `ln(x)` instead of `x`; inputs must then be positive.
    pub log_space: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            log_space: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// In the clustered space (log space when `log_space`).
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub restarts: usize,
    pub log_space: bool,
    /// Lloyd iterations of the kept run.
    pub iterations: usize,
    /// Inertia after each assignment step of the kept run.
    pub history: Vec<f64>,
}

/// One seeded Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        let c = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(p, centroids)).unzip()
}

fn update(points: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        sizes[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for j in 0..k {
        if sizes[j] > 0 {
            centroids[j] = sums[j].iter().map(|s| s / sizes[j] as f64).collect();
        }
    }
    // empty clusters take the point farthest from its current centroid
    let empty: Vec<usize> = (0..k).filter(|&j| sizes[j] == 0).collect();
    for j in empty {
        let far = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        if let Some(i) = far {
            sizes[assignments[i]] -= 1;
            sizes[j] = 1;
            assignments[i] = j;
            dists[i] = 0.0;
            centroids[j] = points[i].clone();
        }
    }
}

/// Lloyd iterations from the given centroids until assignments stop changing.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> LloydRun {
    let mut history = Vec::new();
    let (mut assignments, mut dists) = assign(points, &centroids);
    history.push(dists.iter().sum());
    let mut converged = false;
    for _ in 0..max_iter {
        update(points, &mut assignments, &mut dists, &mut centroids);
        let (next, next_d) = assign(points, &centroids);
        history.push(next_d.iter().sum());
        let stable = next == assignments;
        assignments = next;
        dists = next_d;
        if stable {
            converged = true;
            break;
        }
    }
    LloydRun {
        inertia: dists.iter().sum(),
        centroids,
        assignments,
        history,
        converged,
    }
}

fn validate(points: &[Vec<f64>], k: usize, options: &ClusterOptions) -> Result<()> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::Parameter(format!("k = {k} exceeds the {} vectors", points.len())));
    }
    if options.restarts == 0 || options.max_iter == 0 {
        return Err(Error::Parameter("restarts and iteration cap must be positive".into()));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::Parameter("vectors must be non-empty".into()));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Shape(format!("vector {i} has length {}, expected {dim}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite() || (options.log_space && *v <= 0.0)) {
            let need = if options.log_space { "positive finite" } else { "finite" };
            return Err(Error::Domain(format!("vector {i} has entries that are not {need}")));
        }
    }
    Ok(())
}

/// Best-inertia k-means over `restarts` seeded runs.
pub fn cluster_params(points: &[Vec<f64>], k: usize, seed: u64, options: ClusterOptions) -> Result<ClusterModel> {
    validate(points, k, &options)?;
    let transformed: Vec<Vec<f64>>;
    let space = if options.log_space {
        transformed = points.iter().map(|p| p.iter().map(|v| v.ln()).collect()).collect();
        &transformed
    } else {
        points
    };
    let mut best: Option<LloydRun> = None;
    for r in 0..options.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let run = lloyd(space, plus_plus(space, k, &mut rng), options.max_iter);
        if !run.converged {
            log::warn!("k-means restart {r} hit the {} iteration cap", options.max_iter);
        }
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterModel {
        k,
        iterations: best.history.len() - 1,
        centroids: best.centroids,
        assignments: best.assignments,
        inertia: best.inertia,
        seed,
        restarts: options.restarts,
        log_space: options.log_space,
        history: best.history,
    })
}

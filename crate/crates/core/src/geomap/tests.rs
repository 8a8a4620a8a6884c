use super::*;
use crate::counts::{ObjectHistogram, TileRef};
use crate::dists::Family;
use crate::geo::GeoBounds;
use crate::net::{glorot_init, InputSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(id: &str, lat: f64, lon: f64, count: u32) -> GeoSample {
    GeoSample {
        id: id.into(),
        lat,
        lon,
        histogram: ObjectHistogram::new(vec![count]),
        tile: TileRef::Features(vec![0.0]),
    }
}

fn unit_grid(rows: usize, cols: usize) -> GridSpec {
    GridSpec::new(GeoBounds::new(0.0, 1.0, 0.0, 1.0).unwrap(), rows, cols).unwrap()
}

#[test]
fn single_sample_gives_constant_map() {
    let m = baseline_map(&[sample("a", 0.5, 0.5, 7)], 0, &unit_grid(4, 4), 0.5).unwrap();
    assert!(m.real().unwrap().iter().all(|v| (v.unwrap() - 7.0).abs() < 1e-12));
}

#[test]
fn equidistant_pair_averages_at_midpoint() {
    let grid = GridSpec::new(GeoBounds::new(-0.5, 0.5, -1.5, 1.5).unwrap(), 1, 3).unwrap();
    let samples = [sample("a", 0.0, -1.0, 0), sample("b", 0.0, 1.0, 10)];
    let m = baseline_map(&samples, 0, &grid, 0.7).unwrap();
    assert!((m.real().unwrap()[1].unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn far_cells_are_no_data_and_bandwidth_checked() {
    let grid = GridSpec::new(GeoBounds::new(0.0, 1.0, 0.0, 10.0).unwrap(), 1, 10).unwrap();
    let m = baseline_map(&[sample("a", 0.5, 0.5, 3)], 0, &grid, 0.1).unwrap();
    let v = m.real().unwrap();
    assert!(v[0].is_some());
    assert!(v[9].is_none());
    for bw in [0.0, -1.0, f64::NAN] {
        assert!(matches!(baseline_map(&[sample("a", 0.5, 0.5, 3)], 0, &grid, bw), Err(Error::Parameter(_))));
    }
    assert!(baseline_map(&[sample("a", 0.5, 0.5, 3)], 1, &grid, 0.5).is_err());
}

#[test]
fn narrow_bandwidth_recovers_the_only_sample_in_a_cell() {
    let samples = [sample("a", 0.25, 0.25, 4), sample("b", 0.75, 0.75, 9)];
    let grid = unit_grid(2, 2);
    let mut prev = f64::INFINITY;
    for bw in [0.5, 0.2, 0.1, 0.05] {
        let m = baseline_map(&samples, 0, &grid, bw).unwrap();
        let err = (m.real().unwrap()[2].unwrap() - 4.0).abs();
        assert!(err <= prev);
        prev = err;
    }
    assert!(prev < 1e-12);
}

proptest! {
    #[test]
    fn baseline_matches_loop_and_stays_convex(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..50);
        let samples: Vec<GeoSample> = (0..n)
            .map(|i| sample(&format!("s{i}"), rng.random_range(37.0..38.0), rng.random_range(-123.0..-122.0), rng.random_range(0..20)))
            .collect();
        let grid = GridSpec::new(GeoBounds::new(37.0, 38.0, -123.0, -122.0).unwrap(), 3, 4).unwrap();
        let bw = rng.random_range(0.05..0.6);
        let m = baseline_map(&samples, 0, &grid, bw).unwrap();
        let lo = samples.iter().map(|s| s.histogram.counts()[0]).min().unwrap() as f64;
        let hi = samples.iter().map(|s| s.histogram.counts()[0]).max().unwrap() as f64;
        for r in 0..3 {
            for c in 0..4 {
                let (lat, lon) = grid.cell_center(r, c);
                let mut num = 0.0;
                let mut den = 0.0;
                let mut dmin = f64::INFINITY;
                for s in &samples {
                    let dx = (lon - s.lon) * ((lat + s.lat) / 2.0).to_radians().cos();
                    let d = (dx * dx + (lat - s.lat).powi(2)).sqrt();
                    dmin = dmin.min(d);
                    let w = (-d * d / (2.0 * bw * bw)).exp();
                    num += w * f64::from(s.histogram.counts()[0]);
                    den += w;
                }
                let got = m.real().unwrap()[r * 4 + c];
                if dmin > 5.0 * bw {
                    prop_assert!(got.is_none());
                } else {
                    let v = got.unwrap();
                    prop_assert!((v - num / den).abs() < 1e-10, "{} vs {}", v, num / den);
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }
}

fn feature_model(family: Family) -> ModelConfig {
    ModelConfig::new(InputSpec::Features { dim: 2 }, 3, family).with_hidden(4)
}

#[test]
fn zero_weight_heatmap_is_ln2_and_missing_cells_are_no_data() {
    let cfg = feature_model(Family::Poisson);
    let w = ModelWeights::zeros(&cfg).unwrap();
    let cells = vec![
        Some(ResolvedInput::Features(vec![0.1, 0.2])),
        None,
        Some(ResolvedInput::Features(vec![0.9, 0.4])),
        Some(ResolvedInput::Features(vec![0.5, 0.5])),
    ];
    let m = model_heatmap(&w, &cfg, &TileGrid::new(unit_grid(2, 2), cells).unwrap(), 1).unwrap();
    let v = m.real().unwrap();
    assert!(v[1].is_none());
    for x in [v[0], v[2], v[3]] {
        assert!((x.unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }
    assert_eq!(m.scaling, Scaling::MinMax);
}

#[test]
fn identical_tiles_give_constant_heatmap() {
    let cfg = feature_model(Family::NegBinomial);
    let w = glorot_init(&cfg, 3).unwrap();
    let cells = vec![Some(ResolvedInput::Features(vec![0.3, 0.7])); 6];
    let m = model_heatmap(&w, &cfg, &TileGrid::new(unit_grid(2, 3), cells).unwrap(), 0).unwrap();
    let v: Vec<f64> = m.real().unwrap().iter().map(|x| x.unwrap()).collect();
    assert!(v.iter().all(|&x| x == v[0]));
}

#[test]
fn heatmap_rejects_unknown_category() {
    let cfg = feature_model(Family::Poisson);
    let w = ModelWeights::zeros(&cfg).unwrap();
    let grid = TileGrid::new(unit_grid(1, 1), vec![Some(ResolvedInput::Features(vec![0.0, 0.0]))]).unwrap();
    assert!(matches!(model_heatmap(&w, &cfg, &grid, 3), Err(Error::Parameter(_))));
}

#[test]
fn top_k_ties_break_by_id() {
    let cfg = feature_model(Family::Poisson);
    let w = glorot_init(&cfg, 1).unwrap();
    let tiles: Vec<(String, ResolvedInput)> = ["d", "b", "a", "c"]
        .iter()
        .map(|id| (id.to_string(), ResolvedInput::Features(vec![0.5, 0.5])))
        .collect();
    let top = top_k_tiles(&w, &cfg, &tiles, 0, 3).unwrap();
    let ids: Vec<&str> = top.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, vec!["a", "b", "c"]);
    assert!(matches!(top_k_tiles(&w, &cfg, &tiles, 0, 5), Err(Error::Parameter(_))));
}

#[test]
fn top_k_is_prefix_of_full_sort() {
    let cfg = feature_model(Family::Gaussian);
    let w = glorot_init(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tiles: Vec<(String, ResolvedInput)> = (0..30)
        .map(|i| (format!("t{i:02}"), ResolvedInput::Features(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])))
        .collect();
    let inputs: Vec<ResolvedInput> = tiles.iter().map(|t| t.1.clone()).collect();
    let all = expected_counts(&w, &cfg, &inputs).unwrap();
    let mut oracle: Vec<(String, f64)> = tiles.iter().zip(&all).map(|(t, p)| (t.0.clone(), p[2])).collect();
    oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in [1, 5, 30] {
        assert_eq!(top_k_tiles(&w, &cfg, &tiles, 2, k).unwrap(), oracle[..k].to_vec());
    }
}

#[test]
fn top_one_finds_the_strict_maximum() {
    let cfg = ModelConfig::new(InputSpec::Features { dim: 1 }, 1, Family::Poisson).with_hidden(2);
    let mut w = ModelWeights::zeros(&cfg).unwrap();
    // route the input straight to the rate through positive weights
    w.dense[0].weight.data.fill(1.0);
    w.dense[1].weight.data.fill(1.0);
    w.norm[0].gamma.data.fill(1.0);
    w.norm[1].gamma.data.fill(1.0);
    w.heads[0].weight.data.fill(1.0);
    let tiles: Vec<(String, ResolvedInput)> = [0.1, 3.0, 0.5]
        .iter()
        .enumerate()
        .map(|(i, &v)| (format!("t{i}"), ResolvedInput::Features(vec![v])))
        .collect();
    assert_eq!(top_k_tiles(&w, &cfg, &tiles, 0, 1).unwrap()[0].0, "t1");
}

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use overcount::counts::{
    dataset_stats, default_rates, generate_synthetic, generate_synthetic_grid, load_dataset, save_dataset,
    split_indices, DatasetFormat, GeoSample, LatentField, ResolvedInput, SyntheticConfig, TileRef,
};
use overcount::dists::Family;
use overcount::geo::{GeoBounds, GridSpec};
use overcount::geomap::{
    self, baseline_map, cluster_params, model_heatmap, render_raster, top_k_tiles, ClusterOptions, MapSidecar,
    MapValues, Palette, RasterMap,
};
use overcount::net::{ConvSpec, ModelConfig};
use overcount::trainer::{evaluate, load_checkpoint, save_checkpoint, write_loss_csv, TrainConfig, TrainData, Trainer};
use serde::{Deserialize, Serialize};

use crate::grid::{load_tile_grid, GridFile};
use crate::run::Run;
use crate::{CategoryArgs, Cli, ClusterArgs, Command, EvalArgs, MapArgs, StatsArgs, SynthArgs, TopkArgs, TrainArgs};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let default_out = |name: &str, given: &Option<PathBuf>| given.clone().unwrap_or_else(|| cli.out_root.join(name));
    match &cli.command {
        Command::Synth(a) => guarded("synth", &default_out("synth", &a.out), |run| synth(run, a)),
        Command::Stats(a) => stats(a),
        Command::Train(a) => guarded("train", &default_out("train", &a.out), |run| train(run, a)),
        Command::Eval(a) => guarded("eval", &default_out("eval", &a.out), |run| eval(run, a)),
        Command::Map(a) => guarded("map", &default_out("map", &a.out), |run| map(run, a)),
        Command::Topk(a) => guarded("topk", &default_out("topk", &a.out), |run| topk(run, a)),
        Command::Cluster(a) => guarded("cluster", &default_out("cluster", &a.out), |run| cluster(run, a)),
    }
}

/// Run a command; on failure remove whatever it wrote.
fn guarded(
    command: &'static str,
    out_dir: &Path,
    body: impl FnOnce(&mut Run) -> Result<(serde_json::Value, Option<u64>)>,
) -> Result<()> {
    let mut run = Run::begin(command, out_dir)?;
    match body(&mut run) {
        Ok((config, seed)) => run.finish(config, seed),
        Err(e) => {
            run.abort();
            Err(e)
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed JSON in {}", path.display()))
}

fn load(path: &Path, categories: Option<usize>) -> Result<Vec<GeoSample>> {
    let samples = load_dataset(path, DatasetFormat::from_path(path), categories)?;
    if samples.is_empty() {
        bail!("{} holds no samples", path.display());
    }
    Ok(samples)
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn parse_grid_size(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("grid size must look like ROWSxCOLS, got {s:?}"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn pnm_ext(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"P5") {
        "pgm"
    } else {
        "ppm"
    }
}

fn synth(run: &mut Run, a: &SynthArgs) -> Result<(serde_json::Value, Option<u64>)> {
    let mut cfg: SyntheticConfig = match &a.config {
        Some(p) => {
            run.input(p);
            read_json(p)?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.samples {
        cfg.samples = n;
    }
    if let Some(c) = a.categories {
        cfg.categories = c;
    }
    if cfg.rates.len() != cfg.categories {
        cfg.rates = default_rates(cfg.categories, cfg.channels);
    }
    match a.latent.as_deref() {
        Some("uniform") => cfg.latent = LatentField::Uniform,
        Some("lon-gradient") => cfg.latent = LatentField::LonGradient,
        _ => {}
    }

    let data = generate_synthetic(&cfg)?;
    run.dir(&run.out_dir().join("tiles"))?;
    let mut samples = data.samples;
    for s in &mut samples {
        if let TileRef::Inline(bytes) = &s.tile {
            let rel = PathBuf::from("tiles").join(format!("{}.{}", s.id, pnm_ext(bytes)));
            run.write(&rel, bytes)?;
            s.tile = TileRef::Path(rel);
        }
    }
    let dataset = run.output("dataset.jsonl");
    save_dataset(&dataset, &samples, DatasetFormat::Jsonl)?;
    run.write_json("true_rates.json", &data.true_rates)?;

    if let Some(spec) = &a.grid {
        let (rows, cols) = parse_grid_size(spec)?;
        let g = generate_synthetic_grid(&cfg, rows, cols)?;
        run.dir(&run.out_dir().join("grid"))?;
        let mut tiles = Vec::with_capacity(g.tiles.len());
        for (i, tile) in g.tiles.iter().enumerate() {
            let rel = PathBuf::from("grid").join(format!("r{:03}c{:03}.{}", i / cols, i % cols, tile.pnm_extension()));
            run.write(&rel, &tile.to_pnm_bytes()?)?;
            tiles.push(Some(rel));
        }
        run.write_json("grid.json", &GridFile { grid: g.grid, tiles })?;
        run.write_json("grid_rates.json", &g.true_rates)?;
    }
    emit(&format!("wrote {} samples to {}", samples.len(), dataset.display()))?;
    Ok((serde_json::to_value(&cfg)?, Some(cfg.seed)))
}

#[derive(Serialize)]
struct StatsReport {
    #[serde(flatten)]
    stats: overcount::counts::DatasetStats,
    category_mean: Vec<f64>,
}

fn stats(a: &StatsArgs) -> Result<()> {
    let samples = load(&a.dataset, Some(a.categories))?;
    let stats = dataset_stats(&samples)?;
    let n = stats.samples as f64;
    let category_mean = stats.category_totals.iter().map(|&t| t as f64 / n).collect();
    emit(&serde_json::to_string_pretty(&StatsReport { stats, category_mean })?)?;
    Ok(())
}

/// Training config file; every field optional, flags win.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    families: Option<Vec<Family>>,
    seed: Option<u64>,
    test_fraction: Option<f64>,
    categories: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    hidden: Option<usize>,
    conv: Option<Vec<ConvSpec>>,
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Serialize)]
struct FamilyResult {
    family: Family,
    checkpoint: PathBuf,
    mean_log_likelihood: f64,
    per_category_nll: Vec<f64>,
    samples: usize,
    final_train_nll: f64,
}

fn model_for(first: &ResolvedInput, categories: usize, family: Family) -> ModelConfig {
    match first {
        ResolvedInput::Tile(t) => ModelConfig::for_tiles(t.height(), t.width(), t.channels(), categories, family),
        ResolvedInput::Features(f) => {
            ModelConfig::new(overcount::net::InputSpec::Features { dim: f.len() }, categories, family)
        }
    }
}

fn print_table(rows: &[(Family, f64)]) -> Result<()> {
    let mut text = String::from("| Family | Mean Log-Likelihood |\n|---|---|");
    for (f, ll) in rows {
        text.push_str(&format!("\n| {} | {ll:.4} |", f.display_name()));
    }
    emit(&text)
}

/// Print a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(line: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn train(run: &mut Run, a: &TrainArgs) -> Result<(serde_json::Value, Option<u64>)> {
    let file: TrainFile = match &a.config {
        Some(p) => {
            run.input(p);
            read_json(p)?
        }
        None => TrainFile::default(),
    };
    let families: Vec<Family> = if a.family.is_empty() {
        file.families.clone().unwrap_or_else(|| vec![Family::Poisson])
    } else {
        a.family.iter().map(|f| f.parse()).collect::<Result<_, _>>()?
    };
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let test_fraction = a.test_fraction.or(file.test_fraction).unwrap_or(0.25);
    let categories = a.categories.or(file.categories).unwrap_or(overcount::counts::DEFAULT_CATEGORIES);

    run.input(&a.dataset);
    let samples = load(&a.dataset, Some(categories))?;
    let (train_idx, test_idx) = split_indices(samples.len(), test_fraction, seed)?;
    let first = samples[0].resolve(base_dir(&a.dataset))?;

    let mut results = Vec::new();
    let mut configs = Vec::new();
    for family in families {
        let mut model = model_for(&first, categories, family);
        if let Some(h) = a.hidden.or(file.hidden) {
            model.hidden = h;
        }
        if let Some(conv) = &file.conv {
            model.conv = conv.clone();
        }
        let mut cfg = TrainConfig::new(model);
        cfg.seed = seed;
        cfg.epochs = a.epochs.or(file.epochs).unwrap_or(cfg.epochs);
        cfg.batch_size = a.batch_size.or(file.batch_size).unwrap_or(cfg.batch_size);
        cfg.optimizer.lr = a.lr.or(file.lr).unwrap_or(cfg.optimizer.lr);
        cfg.checkpoint_every = file.checkpoint_every;
        cfg.validate()?;

        let data = TrainData::from_samples(&samples, base_dir(&a.dataset), &cfg.model)?;
        let (train_set, test_set) = (data.subset(&train_idx), data.subset(&test_idx));
        let ckpt = run.output(format!("{}.ckpt", family.key()));
        let mut trainer = Trainer::new(cfg.clone())?;
        trainer
            .fit(&train_set, Some(&ckpt))
            .with_context(|| format!("training the {} model", family.key()))?;
        save_checkpoint(&trainer, &ckpt)?;
        let loss = run.output(format!("{}.loss.csv", family.key()));
        write_loss_csv(&loss, &trainer.loss_history)?;
        let report = evaluate(&trainer.weights, &cfg.model, &test_set)?;
        results.push(FamilyResult {
            family,
            checkpoint: ckpt,
            mean_log_likelihood: report.mean_log_likelihood,
            per_category_nll: report.per_category_nll,
            samples: report.samples,
            final_train_nll: *trainer.loss_history.last().expect("at least one epoch"),
        });
        configs.push(cfg);
    }
    run.write_json("eval.json", &results)?;
    print_table(&results.iter().map(|r| (r.family, r.mean_log_likelihood)).collect::<Vec<_>>())?;
    let echo = serde_json::json!({
        "test_fraction": test_fraction,
        "categories": categories,
        "train_samples": train_idx.len(),
        "test_samples": test_idx.len(),
        "runs": configs,
    });
    Ok((echo, Some(seed)))
}

fn eval(run: &mut Run, a: &EvalArgs) -> Result<(serde_json::Value, Option<u64>)> {
    run.input(&a.checkpoint);
    run.input(&a.dataset);
    let trainer = load_checkpoint(&a.checkpoint)?;
    let model = &trainer.config.model;
    if let Some(f) = &a.family {
        let want: Family = f.parse()?;
        if want != model.family {
            bail!(
                "checkpoint holds a {} model but --family {} was requested",
                model.family.key(),
                want.key()
            );
        }
    }
    let samples = load(&a.dataset, Some(model.categories))?;
    let data = TrainData::from_samples(&samples, base_dir(&a.dataset), model)?;
    let seed = a.seed.unwrap_or(trainer.config.seed);
    let data = if a.all {
        data
    } else {
        let (_, test) = split_indices(samples.len(), a.test_fraction, seed)?;
        data.subset(&test)
    };
    let report = evaluate(&trainer.weights, model, &data)?;
    run.write_json("eval.json", &report)?;
    print_table(&[(model.family, report.mean_log_likelihood)])?;
    let echo = serde_json::json!({
        "family": model.family,
        "test_fraction": a.test_fraction,
        "all": a.all,
    });
    Ok((echo, Some(seed)))
}

fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Resolve a category given by index or label; returns the index and a display name.
fn resolve_category(arg: &CategoryArgs, categories: usize) -> Result<(usize, String)> {
    let labels = arg.labels.as_deref().map(read_labels).transpose()?;
    let name_of = |i: usize| {
        labels
            .as_ref()
            .and_then(|l| l.get(i).cloned())
            .unwrap_or_else(|| format!("category {i}"))
    };
    let valid = || match &labels {
        Some(l) => l.iter().take(categories).cloned().collect::<Vec<_>>().join(", "),
        None => format!("indices 0..{}", categories.saturating_sub(1)),
    };
    let idx = match arg.category.parse::<usize>() {
        Ok(i) => i,
        Err(_) => labels
            .as_ref()
            .and_then(|l| l.iter().position(|n| n == &arg.category))
            .ok_or_else(|| anyhow!("unknown category {:?}; valid categories: {}", arg.category, valid()))?,
    };
    if idx >= categories {
        bail!("category {idx} out of range; valid categories: {}", valid());
    }
    Ok((idx, name_of(idx)))
}

fn dataset_bounds(samples: &[GeoSample]) -> Result<GeoBounds> {
    let lat = samples.iter().map(|s| s.lat);
    let lon = samples.iter().map(|s| s.lon);
    let (lat_min, lat_max) = lat.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lon_min, lon_max) = lon.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    // pad so a single sample still spans a non-degenerate box
    let pad = 1e-3;
    Ok(GeoBounds::new(lat_min - pad, lat_max + pad, lon_min - pad, lon_max + pad)?)
}

fn write_map(run: &mut Run, map: &RasterMap, stem: &str, palette: Palette) -> Result<()> {
    let bytes = render_raster(map, palette)?;
    run.write(format!("{stem}.ppm"), &bytes)?;
    run.write_json(format!("{stem}.map.json"), &MapSidecar::of(map))?;
    Ok(())
}

fn map(run: &mut Run, a: &MapArgs) -> Result<(serde_json::Value, Option<u64>)> {
    let (mut raster, label) = if let Some(ds) = &a.baseline {
        run.input(ds);
        let samples = load(ds, Some(a.categories))?;
        let (category, label) = resolve_category(&a.category, a.categories)?;
        let grid = match &a.grid {
            Some(g) => {
                run.input(g);
                crate::grid::read_grid_file(g)?.grid
            }
            None => GridSpec::new(dataset_bounds(&samples)?, a.rows, a.cols)?,
        };
        (baseline_map(&samples, category, &grid, a.bandwidth)?, label)
    } else {
        let ckpt = a.checkpoint.as_ref().expect("clap enforces one source");
        let grid_path = a.grid.as_ref().expect("clap requires --grid with --checkpoint");
        run.input(ckpt);
        run.input(grid_path);
        let trainer = load_checkpoint(ckpt)?;
        let (category, label) = resolve_category(&a.category, trainer.config.model.categories)?;
        let (tiles, _) = load_tile_grid(grid_path)?;
        (model_heatmap(&trainer.weights, &trainer.config.model, &tiles, category)?, label)
    };
    raster.label = label;
    write_map(run, &raster, "map", Palette::GreenScale)?;
    let echo = serde_json::json!({
        "source": if a.baseline.is_some() { "baseline" } else { "model" },
        "bandwidth": a.bandwidth,
        "category": a.category.category,
    });
    Ok((echo, None))
}

#[derive(Serialize)]
struct Ranked {
    rank: usize,
    id: String,
    expected_count: f64,
}

fn topk(run: &mut Run, a: &TopkArgs) -> Result<(serde_json::Value, Option<u64>)> {
    run.input(&a.checkpoint);
    run.input(&a.dataset);
    let trainer = load_checkpoint(&a.checkpoint)?;
    let model = &trainer.config.model;
    let (category, label) = resolve_category(&a.category, model.categories)?;
    let samples = load(&a.dataset, None)?;
    let tiles = samples
        .iter()
        .map(|s| Ok((s.id.clone(), s.resolve(base_dir(&a.dataset))?)))
        .collect::<Result<Vec<_>>>()?;
    let ranked: Vec<Ranked> = top_k_tiles(&trainer.weights, model, &tiles, category, a.k)?
        .into_iter()
        .enumerate()
        .map(|(i, (id, expected_count))| Ranked {
            rank: i + 1,
            id,
            expected_count,
        })
        .collect();
    emit(&format!("rank\tid\texpected {label}"))?;
    for r in &ranked {
        emit(&format!("{}\t{}\t{:.6}", r.rank, r.id, r.expected_count))?;
    }
    run.write_json("topk.json", &ranked)?;
    Ok((serde_json::json!({ "k": a.k, "category": category }), None))
}

fn cluster(run: &mut Run, a: &ClusterArgs) -> Result<(serde_json::Value, Option<u64>)> {
    run.input(&a.checkpoint);
    run.input(&a.grid);
    let trainer = load_checkpoint(&a.checkpoint)?;
    let (tiles, _) = load_tile_grid(&a.grid)?;
    let present: Vec<ResolvedInput> = tiles.cells.iter().flatten().cloned().collect();
    let vectors = geomap::expected_counts(&trainer.weights, &trainer.config.model, &present)?;
    let options = ClusterOptions {
        restarts: a.restarts,
        log_space: a.log_space,
        ..ClusterOptions::default()
    };
    let model = cluster_params(&vectors, a.k, a.seed, options)?;
    let mut ids = model.assignments.iter().copied();
    let cells = tiles.cells.iter().map(|c| c.as_ref().map(|_| ids.next().expect("one id per tile"))).collect();
    let raster = RasterMap::new(tiles.grid, MapValues::Cluster(cells), format!("k-means k={}", a.k))?;
    write_map(run, &raster, "clusters", Palette::Categorical)?;
    run.write_json("clusters.json", &model)?;
    emit(&format!("k={} inertia={:.6} iterations={}", model.k, model.inertia, model.iterations))?;
    Ok((serde_json::to_value(options)?, Some(a.seed)))
}

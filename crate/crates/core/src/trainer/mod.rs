//! Mini-batch NLL training and held-out evaluation.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counts::{GeoSample, ObjectHistogram};
use crate::dists::{per_category_nll, sample_nll_raw};
use crate::error::{Error, Result};
use crate::net::{self, encode_batch, glorot_init, ModelConfig, ModelWeights};
use crate::optim::{init_state, nadam_step, NadamConfig, NadamState};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub optimizer: NadamConfig,
    /// Save a checkpoint every this many epochs when a path is given.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub const DEFAULT_EPOCHS: usize = 30;
    pub const DEFAULT_BATCH_SIZE: usize = 32;
    /// Learning rate used for desk-scale runs.
    pub const DESK_LR: f64 = 1e-3;

    pub fn new(model: ModelConfig) -> Self {
        Self {
            epochs: Self::DEFAULT_EPOCHS,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            seed: 0,
            model,
            optimizer: NadamConfig::default().with_lr(Self::DESK_LR),
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Parameter(format!(
                "batch size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Parameter("checkpoint cadence must be positive".into()));
        }
        self.model.validate()?;
        self.optimizer.validate()
    }
}

/// Encoded inputs with their observed counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub inputs: Matrix,
    pub histograms: Vec<ObjectHistogram>,
}

impl TrainData {
    pub fn new(inputs: Matrix, histograms: Vec<ObjectHistogram>) -> Result<Self> {
        if inputs.rows != histograms.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} histograms",
                inputs.rows,
                histograms.len()
            )));
        }
        Ok(Self { inputs, histograms })
    }

    /// Resolve and encode every sample's tile against `model`.
    pub fn from_samples(samples: &[GeoSample], base_dir: &Path, model: &ModelConfig) -> Result<Self> {
        let resolved = samples
            .iter()
            .map(|s| s.resolve(base_dir))
            .collect::<Result<Vec<_>>>()?;
        let inputs = encode_batch(&model.input, &resolved)?;
        let histograms = samples
            .iter()
            .map(|s| {
                if s.histogram.categories() == model.categories {
                    Ok(s.histogram.clone())
                } else {
                    Err(Error::Shape(format!(
                        "sample {} has {} categories, model has {}",
                        s.id,
                        s.histogram.categories(),
                        model.categories
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(inputs, histograms)
    }

    pub fn len(&self) -> usize {
        self.histograms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histograms.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            histograms: indices.iter().map(|&i| self.histograms[i].clone()).collect(),
        }
    }
}

/// Mean batch NLL and its gradient with respect to the raw head outputs.
pub fn batch_loss(config: &ModelConfig, raw: &Matrix, histograms: &[ObjectHistogram]) -> Result<(f64, Matrix)> {
    let n = histograms.len() as f64;
    let mut grad = Matrix::zeros(raw.rows, raw.cols);
    let mut loss = 0.0;
    for (r, h) in histograms.iter().enumerate() {
        let (l, g) = sample_nll_raw(config.family, raw.row(r), h)?;
        loss += l;
        for (d, v) in grad.row_mut(r).iter_mut().zip(g) {
            *d = v / n;
        }
    }
    Ok((loss / n, grad))
}

/// Batch index lists for one epoch. A trailing singleton joins the previous batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("at least one batch").extend(last);
    }
    batches
}

/// A training run in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub weights: ModelWeights,
    pub optimizer: NadamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Mean training NLL of each completed epoch.
    pub loss_history: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let weights = glorot_init(&config.model, config.seed)?;
        let optimizer = init_state(&weights, config.optimizer)?;
        Ok(Self {
            config,
            weights,
            optimizer,
            epoch: 0,
            loss_history: Vec::new(),
        })
    }

    /// One optimizer step on a batch; returns the batch's mean NLL before the update.
    pub fn step(&mut self, inputs: &Matrix, histograms: &[ObjectHistogram]) -> Result<f64> {
        self.step_at(inputs, histograms, 0)
    }

    fn step_at(&mut self, inputs: &Matrix, histograms: &[ObjectHistogram], batch: usize) -> Result<f64> {
        let model = &self.config.model;
        let (out, cache) = net::forward_batch_stats(&self.weights, model, inputs)?;
        let (loss, grad_raw) = batch_loss(model, &out.raw, histograms)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                batch,
                loss,
            });
        }
        let grads = net::backward(&self.weights, model, &cache, &grad_raw)?;
        if grads.tensors.iter().flat_map(|t| &t.data).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: self.epoch,
                batch,
                loss,
            });
        }
        net::update_running_stats(&mut self.weights, model, &cache);
        nadam_step(&mut self.optimizer, &mut self.weights, &grads)?;
        Ok(loss)
    }

    /// One pass over `data`; returns the sample-weighted mean training NLL.
    pub fn run_epoch(&mut self, data: &TrainData) -> Result<f64> {
        if data.len() < 2 {
            return Err(Error::Parameter(format!(
                "training needs at least 2 samples, got {}",
                data.len()
            )));
        }
        let mut total = 0.0;
        for (b, idx) in epoch_batches(data.len(), self.config.batch_size, self.config.seed, self.epoch)
            .iter()
            .enumerate()
        {
            let batch = data.subset(idx);
            total += self.step_at(&batch.inputs, &batch.histograms, b)? * idx.len() as f64;
        }
        let mean = total / data.len() as f64;
        self.loss_history.push(mean);
        self.epoch += 1;
        log::debug!("epoch {} mean nll {mean:.6}", self.epoch);
        Ok(mean)
    }

    /// Run until `config.epochs` epochs are complete, checkpointing on the configured cadence.
    pub fn fit(&mut self, data: &TrainData, checkpoint_path: Option<&Path>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(data)?;
            if let (Some(path), Some(every)) = (checkpoint_path, self.config.checkpoint_every) {
                if self.epoch % every == 0 {
                    save_checkpoint(self, path)?;
                }
            }
        }
        Ok(())
    }
}

/// Train from scratch for `config.epochs` epochs.
pub fn train(config: TrainConfig, data: &TrainData) -> Result<Trainer> {
    let mut trainer = Trainer::new(config)?;
    trainer.fit(data, None)?;
    Ok(trainer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Negated mean of per-sample NLL (category-averaged).
    pub mean_log_likelihood: f64,
    pub per_category_nll: Vec<f64>,
    pub samples: usize,
}

/// Chunk size for inference over large sets; results do not depend on it.
const EVAL_CHUNK: usize = 512;

/// Held-out evaluation with running statistics. Mutates nothing.
pub fn evaluate(weights: &ModelWeights, config: &ModelConfig, data: &TrainData) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Parameter("evaluation needs at least one sample".into()));
    }
    let mut per_category = vec![0.0; config.categories];
    let mut total = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let part = data.subset(chunk);
        let out = net::forward_infer(weights, config, &part.inputs)?;
        for (params, hist) in out.params.iter().zip(&part.histograms) {
            let nll = per_category_nll(params, hist)?;
            total += nll.iter().sum::<f64>() / nll.len() as f64;
            for (acc, v) in per_category.iter_mut().zip(nll) {
                *acc += v;
            }
        }
    }
    let n = data.len() as f64;
    for v in &mut per_category {
        *v /= n;
    }
    Ok(EvalReport {
        mean_log_likelihood: -total / n,
        per_category_nll: per_category,
        samples: data.len(),
    })
}

/// Write `epoch,mean_nll` rows, epochs numbered from 1.
pub fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("epoch,mean_nll\n");
    for (i, v) in history.iter().enumerate() {
        body.push_str(&format!("{},{v}\n", i + 1));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::{sample_nll, Family};
    use crate::net::{InputSpec, ModelWeights};
    use rand::Rng;
    use rand_distr::{Distribution, Poisson};

    fn feature_config(dim: usize, categories: usize, family: Family) -> TrainConfig {
        let mut cfg = TrainConfig::new(ModelConfig::new(InputSpec::Features { dim }, categories, family).with_hidden(8));
        cfg.epochs = 3;
        cfg.batch_size = 8;
        cfg
    }

    fn random_data(seed: u64, n: usize, dim: usize, categories: usize) -> TrainData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let hists = rows
            .iter()
            .map(|r| {
                let lam = 0.5 + 4.0 * r[0];
                let p = Poisson::new(lam).unwrap();
                ObjectHistogram::new((0..categories).map(|_| p.sample(&mut rng) as u32).collect())
            })
            .collect();
        TrainData::new(Matrix::from_rows(&rows).unwrap(), hists).unwrap()
    }

    #[test]
    fn batches_partition_and_merge_singleton() {
        let b = epoch_batches(9, 4, 3, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        assert_ne!(epoch_batches(9, 4, 3, 0), epoch_batches(9, 4, 3, 1));
        assert_eq!(epoch_batches(9, 4, 3, 2), epoch_batches(9, 4, 3, 2));
    }

    #[test]
    fn config_rules() {
        let mut cfg = feature_config(2, 2, Family::Poisson);
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 2;
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn one_epoch_on_two_samples_is_reproducible() {
        let data = random_data(1, 2, 3, 2);
        let mut cfg = feature_config(3, 2, Family::Poisson);
        cfg.epochs = 1;
        let trained = train(cfg.clone(), &data).unwrap();
        let init = glorot_init(&cfg.model, cfg.seed).unwrap();
        let order = &epoch_batches(2, cfg.batch_size, cfg.seed, 0)[0];
        let batch = data.subset(order);
        let (out, _) = net::forward_batch_stats(&init, &cfg.model, &batch.inputs).unwrap();
        let (loss, _) = batch_loss(&cfg.model, &out.raw, &batch.histograms).unwrap();
        assert_eq!(trained.loss_history, vec![loss]);
        assert_eq!(train(cfg, &data).unwrap(), trained);
    }

    #[test]
    fn poisson_loss_decreases_over_first_epochs() {
        let data = random_data(2, 128, 4, 3);
        let mut cfg = feature_config(4, 3, Family::Poisson);
        cfg.epochs = 5;
        cfg.batch_size = 16;
        let t = train(cfg, &data).unwrap();
        for w in t.loss_history.windows(2) {
            assert!(w[1] < w[0], "{:?}", t.loss_history);
        }
    }

    #[test]
    fn zero_weights_zero_counts_give_minus_ln2() {
        let cfg = feature_config(2, 3, Family::Poisson);
        let w = ModelWeights::zeros(&cfg.model).unwrap();
        let data = TrainData::new(
            Matrix::from_vec(4, 2, vec![0.5; 8]).unwrap(),
            vec![ObjectHistogram::zeros(3); 4],
        )
        .unwrap();
        let r = evaluate(&w, &cfg.model, &data).unwrap();
        assert!((r.mean_log_likelihood + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r.samples, 4);
    }

    #[test]
    fn evaluate_matches_loop_oracle_and_is_pure() {
        let data = random_data(3, 40, 3, 4);
        let cfg = feature_config(3, 4, Family::NegBinomial);
        let t = train(cfg.clone(), &data).unwrap();
        let before = t.weights.clone();
        let a = evaluate(&t.weights, &cfg.model, &data).unwrap();
        let b = evaluate(&t.weights, &cfg.model, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.weights, before);
        let mut total = 0.0;
        for i in 0..data.len() {
            let one = data.subset(&[i]);
            let out = net::forward_infer(&t.weights, &cfg.model, &one.inputs).unwrap();
            total += sample_nll(&out.params[0], &one.histograms[0]).unwrap();
        }
        let oracle = -total / data.len() as f64;
        assert!((a.mean_log_likelihood - oracle).abs() < 1e-12, "{} vs {oracle}", a.mean_log_likelihood);
    }

    #[test]
    fn two_level_tiles_beat_intercept_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 600;
        let mut rows = Vec::new();
        let mut hists = Vec::new();
        for i in 0..n {
            let bright = i % 2 == 0;
            let level = if bright { 0.9 } else { 0.1 };
            rows.push(vec![level + rng.random_range(-0.02..0.02)]);
            let lam = if bright { 8.0 } else { 1.0 };
            hists.push(ObjectHistogram::new(vec![Poisson::new(lam).unwrap().sample(&mut rng) as u32]));
        }
        let data = TrainData::new(Matrix::from_rows(&rows).unwrap(), hists).unwrap();
        let (train_idx, test_idx) = crate::counts::split_indices(n, 0.25, 0).unwrap();
        let (train_set, test_set) = (data.subset(&train_idx), data.subset(&test_idx));
        let mut cfg = feature_config(1, 1, Family::Poisson);
        cfg.epochs = 40;
        cfg.batch_size = 32;
        cfg.optimizer.lr = 5e-3;
        let t = train(cfg.clone(), &train_set).unwrap();
        let report = evaluate(&t.weights, &cfg.model, &test_set).unwrap();

        let lam: f64 = train_set.histograms.iter().map(|h| f64::from(h.counts()[0])).sum::<f64>() / train_set.len() as f64;
        let intercept_nll: f64 = test_set
            .histograms
            .iter()
            .map(|h| crate::dists::nll_poisson(lam, h.counts()[0]).unwrap().0)
            .sum::<f64>()
            / test_set.len() as f64;
        assert!(-report.mean_log_likelihood < intercept_nll, "{} vs {intercept_nll}", -report.mean_log_likelihood);
    }

    #[test]
    fn loss_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &[1.5, 0.25]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,mean_nll\n1,1.5\n2,0.25\n");
    }

    #[test]
    fn histogram_width_checked() {
        let cfg = feature_config(2, 3, Family::Poisson);
        let samples = vec![GeoSample {
            id: "a".into(),
            lat: 0.0,
            lon: 0.0,
            histogram: ObjectHistogram::zeros(2),
            tile: crate::counts::TileRef::Features(vec![0.0, 0.0]),
        }];
        assert!(matches!(
            TrainData::from_samples(&samples, Path::new("."), &cfg.model),
            Err(Error::Shape(_))
        ));
    }
}

//! Count-distribution network with hand-written backpropagation.
//!
//! Pipeline: optional conv extractor (conv, leaky ReLU; flattened HWC) →
//! dense(h) → batch-norm → leaky ReLU → dense(h) → batch-norm → leaky ReLU →
//! one dense head per parameter block → softplus link.

pub mod layers;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counts::ResolvedInput;
use crate::dists::{CountParams, Family};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor};
use layers::{BatchNormCache, ConvGeometry};

/// Number of Dense-BatchNorm-LeakyReLU blocks before the heads.
pub const HIDDEN_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InputSpec {
    /// Raw tile pixels, flattened HWC.
    Tile {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// Precomputed feature vector.
    Features { dim: usize },
}

impl InputSpec {
    pub fn len(&self) -> usize {
        match *self {
            InputSpec::Tile {
                height,
                width,
                channels,
            } => height * width * channels,
            InputSpec::Features { dim } => dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Check a resolved input against this spec and return its flat vector.
    pub fn encode<'a>(&self, input: &'a ResolvedInput) -> Result<&'a [f64]> {
        match (self, input) {
            (
                InputSpec::Tile {
                    height,
                    width,
                    channels,
                },
                ResolvedInput::Tile(t),
            ) => {
                if (t.height(), t.width(), t.channels()) != (*height, *width, *channels) {
                    return Err(Error::Shape(format!(
                        "tile is {}x{}x{}, model expects {height}x{width}x{channels}",
                        t.height(),
                        t.width(),
                        t.channels()
                    )));
                }
                Ok(t.pixels())
            }
            (InputSpec::Features { dim }, ResolvedInput::Features(f)) => {
                if f.len() != *dim {
                    return Err(Error::Shape(format!(
                        "feature vector has {} entries, model expects {dim}",
                        f.len()
                    )));
                }
                Ok(f)
            }
            (InputSpec::Tile { .. }, ResolvedInput::Features(_)) => Err(Error::Shape(
                "model expects tiles but the input is a feature vector".into(),
            )),
            (InputSpec::Features { .. }, ResolvedInput::Tile(_)) => Err(Error::Shape(
                "model expects feature vectors but the input is a tile".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub conv: Vec<ConvSpec>,
    pub hidden: usize,
    pub categories: usize,
    pub family: Family,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
    pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_BN_EPS: f64 = 1e-5;

    /// Desk-scale defaults with no convolutional extractor.
    pub fn new(input: InputSpec, categories: usize, family: Family) -> Self {
        Self {
            input,
            conv: Vec::new(),
            hidden: Self::DEFAULT_HIDDEN,
            categories,
            family,
            leaky_slope: Self::DEFAULT_LEAKY_SLOPE,
            bn_momentum: Self::DEFAULT_BN_MOMENTUM,
            bn_eps: Self::DEFAULT_BN_EPS,
        }
    }

    /// Desk-scale defaults for tiles: two 3x3 convolutions, the second strided.
    pub fn for_tiles(height: usize, width: usize, channels: usize, categories: usize, family: Family) -> Self {
        let mut cfg = Self::new(
            InputSpec::Tile {
                height,
                width,
                channels,
            },
            categories,
            family,
        );
        if height >= 5 && width >= 5 {
            cfg.conv = vec![
                ConvSpec {
                    filters: 8,
                    kernel: 3,
                    stride: 1,
                },
                ConvSpec {
                    filters: 8,
                    kernel: 3,
                    stride: 2,
                },
            ];
        }
        cfg
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_conv(mut self, conv: Vec<ConvSpec>) -> Self {
        self.conv = conv;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.categories == 0 {
            return Err(Error::Parameter("hidden width and category count must be positive".into()));
        }
        if self.input.is_empty() {
            return Err(Error::Parameter("input must have at least one value".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Parameter(format!(
                "leaky slope {} outside (0, 1)",
                self.leaky_slope
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Parameter(format!(
                "batch-norm momentum {} outside (0, 1)",
                self.bn_momentum
            )));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::Parameter("batch-norm epsilon must be positive".into()));
        }
        self.conv_geometry().map(|_| ())
    }

    /// Shapes of each convolution, in order.
    pub fn conv_geometry(&self) -> Result<Vec<ConvGeometry>> {
        if self.conv.is_empty() {
            return Ok(Vec::new());
        }
        let InputSpec::Tile {
            height,
            width,
            channels,
        } = self.input
        else {
            return Err(Error::Parameter(
                "convolutional layers need tile input".into(),
            ));
        };
        let (mut h, mut w, mut c) = (height, width, channels);
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.filters == 0 || spec.kernel == 0 || spec.stride == 0 {
                return Err(Error::Parameter(format!("conv layer {i} has a zero dimension")));
            }
            if spec.kernel > h || spec.kernel > w {
                return Err(Error::Parameter(format!(
                    "conv layer {i}: kernel {} does not fit a {h}x{w} input",
                    spec.kernel
                )));
            }
            let g = ConvGeometry {
                in_height: h,
                in_width: w,
                in_channels: c,
                out_height: (h - spec.kernel) / spec.stride + 1,
                out_width: (w - spec.kernel) / spec.stride + 1,
                filters: spec.filters,
                kernel: spec.kernel,
                stride: spec.stride,
            };
            (h, w, c) = (g.out_height, g.out_width, g.filters);
            out.push(g);
        }
        Ok(out)
    }

    /// Width of the flattened extractor output.
    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self
            .conv_geometry()?
            .last()
            .map_or(self.input.len(), ConvGeometry::out_len))
    }

    /// Raw outputs per sample: `blocks * categories`.
    pub fn output_width(&self) -> usize {
        self.family.blocks() * self.categories
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[filters, kernel, kernel, in_channels]`
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    fn zeros(name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(format!("{name}.weight"), &[output, input]),
            bias: Tensor::zeros(format!("{name}.bias"), &[output]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Every tensor of the network, trainable or not.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub conv: Vec<ConvLayer>,
    pub dense: Vec<DenseLayer>,
    pub norm: Vec<NormLayer>,
    pub heads: Vec<DenseLayer>,
    generation: u64,
}

impl ModelWeights {
    /// All-zero weights, unit running variance.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let conv = config
            .conv_geometry()?
            .iter()
            .enumerate()
            .map(|(i, g)| ConvLayer {
                kernel: Tensor::zeros(format!("conv{i}.kernel"), &[g.filters, g.kernel, g.kernel, g.in_channels]),
                bias: Tensor::zeros(format!("conv{i}.bias"), &[g.filters]),
            })
            .collect();
        let h = config.hidden;
        let mut input = config.feature_dim()?;
        let mut dense = Vec::with_capacity(HIDDEN_LAYERS);
        let mut norm = Vec::with_capacity(HIDDEN_LAYERS);
        for i in 0..HIDDEN_LAYERS {
            dense.push(DenseLayer::zeros(&format!("dense{i}"), input, h));
            norm.push(NormLayer {
                gamma: Tensor::zeros(format!("norm{i}.gamma"), &[h]),
                beta: Tensor::zeros(format!("norm{i}.beta"), &[h]),
                running_mean: Tensor::zeros(format!("norm{i}.running_mean"), &[h]),
                running_var: Tensor::filled(format!("norm{i}.running_var"), &[h], 1.0),
            });
            input = h;
        }
        let heads = (0..config.family.blocks())
            .map(|b| DenseLayer::zeros(&format!("head{b}"), h, config.categories))
            .collect();
        Ok(Self {
            conv,
            dense,
            norm,
            heads,
            generation: 0,
        })
    }

    /// Trainable tensors in a fixed order shared with [`Gradients`].
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.extend([&c.kernel, &c.bias]);
        }
        for (d, n) in self.dense.iter().zip(&self.norm) {
            out.extend([&d.weight, &d.bias, &n.gamma, &n.beta]);
        }
        for h in &self.heads {
            out.extend([&h.weight, &h.bias]);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.extend([&mut c.kernel, &mut c.bias]);
        }
        for (d, n) in self.dense.iter_mut().zip(&mut self.norm) {
            out.extend([&mut d.weight, &mut d.bias, &mut n.gamma, &mut n.beta]);
        }
        for h in &mut self.heads {
            out.extend([&mut h.weight, &mut h.bias]);
        }
        out
    }

    /// Trainable tensors followed by the normalization running statistics.
    pub fn all_tensors(&self) -> Vec<&Tensor> {
        let mut out = self.trainable();
        for n in &self.norm {
            out.extend([&n.running_mean, &n.running_var]);
        }
        out
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mut running = Vec::new();
        for c in &mut self.conv {
            out.extend([&mut c.kernel, &mut c.bias]);
        }
        for (d, n) in self.dense.iter_mut().zip(self.norm.iter_mut()) {
            out.extend([&mut d.weight, &mut d.bias, &mut n.gamma, &mut n.beta]);
            running.extend([&mut n.running_mean, &mut n.running_var]);
        }
        for h in &mut self.heads {
            out.extend([&mut h.weight, &mut h.bias]);
        }
        out.extend(running);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Bumped whenever trainable values change; caches record it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn mark_updated(&mut self) {
        self.generation = self.generation.wrapping_add(1);
    }

    /// Verify every tensor has the shape `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let reference = Self::zeros(config)?;
        let mine = self.all_tensors();
        let want = reference.all_tensors();
        if mine.len() != want.len() {
            return Err(Error::Shape(format!(
                "weights hold {} tensors, config implies {}",
                mine.len(),
                want.len()
            )));
        }
        for (a, b) in mine.iter().zip(&want) {
            if a.name != b.name || a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }
}

/// Gradients aligned with [`ModelWeights::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(weights: &ModelWeights) -> Self {
        Self {
            tensors: weights.trainable().iter().map(|t| t.zeros_like()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Half-width of the Glorot uniform interval.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `len` draws from `U[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let a = glorot_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-a, a).expect("finite positive bound");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// Glorot-uniform weights, zero biases, unit scale and zero shift.
pub fn glorot_init(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    let mut w = ModelWeights::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (layer, g) in w.conv.iter_mut().zip(config.conv_geometry()?) {
        let k2 = g.kernel * g.kernel;
        let n = layer.kernel.len();
        layer.kernel.data = glorot_uniform(&mut rng, g.in_channels * k2, g.filters * k2, n);
    }
    for layer in w.dense.iter_mut().chain(w.heads.iter_mut()) {
        let (out, inp) = (layer.weight.shape[0], layer.weight.shape[1]);
        layer.weight.data = glorot_uniform(&mut rng, inp, out, out * inp);
    }
    for n in &mut w.norm {
        n.gamma.data.fill(1.0);
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Pre-link head outputs, `batch x blocks*C`, blocks concatenated per row.
    pub raw: Matrix,
    pub params: Vec<CountParams>,
}

/// Intermediate values from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    batch: usize,
    conv_inputs: Vec<Matrix>,
    conv_pre: Vec<Matrix>,
    dense_inputs: Vec<Matrix>,
    norm: Vec<BatchNormCache>,
    norm_out: Vec<Matrix>,
    head_input: Matrix,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Per-layer `(mean, biased variance)` observed in the batch.
    pub fn batch_statistics(&self) -> Vec<(&[f64], &[f64])> {
        self.norm
            .iter()
            .map(|c| (c.mean.as_slice(), c.var.as_slice()))
            .collect()
    }
}

fn check_inputs(config: &ModelConfig, inputs: &Matrix) -> Result<()> {
    if inputs.cols != config.input.len() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, model expects {}",
            inputs.cols,
            config.input.len()
        )));
    }
    if inputs.rows == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(bad) = inputs.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite input value {bad}")));
    }
    Ok(())
}

fn run(weights: &ModelWeights, config: &ModelConfig, inputs: &Matrix, mode: Mode) -> Result<(ForwardOutput, Option<ForwardCache>)> {
    check_inputs(config, inputs)?;
    if mode == Mode::Train && inputs.rows < 2 {
        return Err(Error::Parameter(format!(
            "train-mode batch statistics need at least 2 samples, got {}",
            inputs.rows
        )));
    }
    let train = mode == Mode::Train;
    let slope = config.leaky_slope;
    let geometry = config.conv_geometry()?;

    let mut conv_inputs = Vec::new();
    let mut conv_pre = Vec::new();
    let mut x = inputs.clone();
    for (layer, g) in weights.conv.iter().zip(&geometry) {
        let pre = layers::conv2d_forward(&x, g, &layer.kernel, &layer.bias);
        let act = layers::leaky_relu_matrix(&pre, slope);
        if train {
            conv_inputs.push(std::mem::replace(&mut x, act));
            conv_pre.push(pre);
        } else {
            x = act;
        }
    }

    let mut dense_inputs = Vec::new();
    let mut norm_caches = Vec::new();
    let mut norm_out = Vec::new();
    for (dense, norm) in weights.dense.iter().zip(&weights.norm) {
        let z = layers::dense_forward(&x, &dense.weight, &dense.bias);
        let y = if train {
            let (y, cache) = layers::batch_norm_train(&z, &norm.gamma.data, &norm.beta.data, config.bn_eps);
            norm_caches.push(cache);
            y
        } else {
            layers::batch_norm_infer(
                &z,
                &norm.gamma.data,
                &norm.beta.data,
                &norm.running_mean.data,
                &norm.running_var.data,
                config.bn_eps,
            )
        };
        let act = layers::leaky_relu_matrix(&y, slope);
        if train {
            dense_inputs.push(std::mem::replace(&mut x, act));
            norm_out.push(y);
        } else {
            x = act;
        }
    }

    let c = config.categories;
    let width = config.output_width();
    let mut raw = Matrix::zeros(inputs.rows, width);
    for (b, head) in weights.heads.iter().enumerate() {
        let out = layers::dense_forward(&x, &head.weight, &head.bias);
        for r in 0..inputs.rows {
            raw.row_mut(r)[b * c..(b + 1) * c].copy_from_slice(out.row(r));
        }
    }
    let params = (0..raw.rows)
        .map(|r| CountParams::from_raw(config.family, raw.row(r), c))
        .collect::<Result<Vec<_>>>()?;

    let cache = train.then(|| ForwardCache {
        generation: weights.generation,
        batch: inputs.rows,
        conv_inputs,
        conv_pre,
        dense_inputs,
        norm: norm_caches,
        norm_out,
        head_input: x,
    });
    Ok((ForwardOutput { raw, params }, cache))
}

/// Inference with running statistics. Accepts any batch size, mutates nothing.
pub fn forward_infer(weights: &ModelWeights, config: &ModelConfig, inputs: &Matrix) -> Result<ForwardOutput> {
    run(weights, config, inputs, Mode::Infer).map(|(out, _)| out)
}

/// Train-mode arithmetic (batch statistics) without touching running statistics.
pub fn forward_batch_stats(
    weights: &ModelWeights,
    config: &ModelConfig,
    inputs: &Matrix,
) -> Result<(ForwardOutput, ForwardCache)> {
    let (out, cache) = run(weights, config, inputs, Mode::Train)?;
    Ok((out, cache.expect("train mode always caches")))
}

/// Fold a batch's statistics into the running estimates.
pub fn update_running_stats(weights: &mut ModelWeights, config: &ModelConfig, cache: &ForwardCache) {
    let m = config.bn_momentum;
    for (norm, stats) in weights.norm.iter_mut().zip(&cache.norm) {
        for (r, &b) in norm.running_mean.data.iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, &b) in norm.running_var.data.iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// Train-mode forward that also updates running statistics.
pub fn forward_train(
    weights: &mut ModelWeights,
    config: &ModelConfig,
    inputs: &Matrix,
) -> Result<(ForwardOutput, ForwardCache)> {
    let (out, cache) = forward_batch_stats(weights, config, inputs)?;
    update_running_stats(weights, config, &cache);
    Ok((out, cache))
}

/// Mode-dispatching forward; the cache is present exactly in train mode.
pub fn forward(
    weights: &mut ModelWeights,
    config: &ModelConfig,
    inputs: &Matrix,
    mode: Mode,
) -> Result<(ForwardOutput, Option<ForwardCache>)> {
    match mode {
        Mode::Train => forward_train(weights, config, inputs).map(|(o, c)| (o, Some(c))),
        Mode::Infer => forward_infer(weights, config, inputs).map(|o| (o, None)),
    }
}

/// Gradients of a scalar loss given its gradient with respect to the raw
/// head outputs of the cached forward pass.
pub fn backward(
    weights: &ModelWeights,
    config: &ModelConfig,
    cache: &ForwardCache,
    grad_raw: &Matrix,
) -> Result<Gradients> {
    if cache.generation != weights.generation {
        return Err(Error::State(format!(
            "forward cache is from weight generation {}, weights are at {}",
            cache.generation, weights.generation
        )));
    }
    if cache.norm.len() != weights.norm.len() || cache.conv_pre.len() != weights.conv.len() {
        return Err(Error::State("forward cache does not match the network layout".into()));
    }
    if grad_raw.rows != cache.batch || grad_raw.cols != config.output_width() {
        return Err(Error::Shape(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            grad_raw.rows,
            grad_raw.cols,
            cache.batch,
            config.output_width()
        )));
    }
    let slope = config.leaky_slope;
    let c = config.categories;
    let n = cache.batch;

    let mut head_grads = Vec::with_capacity(weights.heads.len());
    let mut dx = Matrix::zeros(n, config.hidden);
    for (b, head) in weights.heads.iter().enumerate() {
        let mut dy = Matrix::zeros(n, c);
        for r in 0..n {
            dy.row_mut(r).copy_from_slice(&grad_raw.row(r)[b * c..(b + 1) * c]);
        }
        let (dw, db, dxh) = layers::dense_backward(&cache.head_input, &head.weight, &dy);
        for (acc, v) in dx.data.iter_mut().zip(&dxh.data) {
            *acc += v;
        }
        head_grads.push((dw, db));
    }

    let mut hidden_grads = Vec::with_capacity(HIDDEN_LAYERS);
    for i in (0..weights.dense.len()).rev() {
        layers::leaky_relu_backward(&mut dx, &cache.norm_out[i], slope);
        let (dz, dgamma, dbeta) = layers::batch_norm_backward(&dx, &cache.norm[i], &weights.norm[i].gamma.data);
        let (dw, db, dinput) = layers::dense_backward(&cache.dense_inputs[i], &weights.dense[i].weight, &dz);
        hidden_grads.push((dw, db, dgamma, dbeta));
        dx = dinput;
    }
    hidden_grads.reverse();

    let geometry = config.conv_geometry()?;
    let mut conv_grads = Vec::with_capacity(weights.conv.len());
    for i in (0..weights.conv.len()).rev() {
        layers::leaky_relu_backward(&mut dx, &cache.conv_pre[i], slope);
        let (dk, db, dinput) =
            layers::conv2d_backward(&cache.conv_inputs[i], &geometry[i], &weights.conv[i].kernel, &dx, i > 0);
        conv_grads.push((dk, db));
        if let Some(d) = dinput {
            dx = d;
        }
    }
    conv_grads.reverse();

    let mut flat: Vec<Vec<f64>> = Vec::new();
    for (dk, db) in conv_grads {
        flat.extend([dk, db]);
    }
    for (dw, db, dg, dbeta) in hidden_grads {
        flat.extend([dw, db, dg, dbeta]);
    }
    for (dw, db) in head_grads {
        flat.extend([dw, db]);
    }
    let tensors = weights
        .trainable()
        .into_iter()
        .zip(flat)
        .map(|(t, data)| Tensor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data,
        })
        .collect();
    Ok(Gradients { tensors })
}

/// Flatten resolved inputs into a batch matrix after checking them against `spec`.
pub fn encode_batch(spec: &InputSpec, inputs: &[ResolvedInput]) -> Result<Matrix> {
    let rows = inputs
        .iter()
        .map(|i| spec.encode(i))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, spec.len()));
    }
    Matrix::from_rows(&rows)
}

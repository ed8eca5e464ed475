//! Dense feed-forward scorer with a tanh-bounded scalar output.
//!
//! The final pre-activation `a` maps to the output `o = tanh(a / T)` where
//! `T` is the scorer temperature (1 unless fitted post hoc). With a
//! Bregman-calibrated loss, `o` estimates `2P(y=1|x) - 1` under the
//! training imbalance ratio stored in [`CalibratedScorer::training_qp`].

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{log_lr_from_output, posterior_from_output};
use crate::dataset::LabeledDataset;
use crate::error::{ObilError, Result};
use crate::losses::LossKind;

/// Largest `f64` strictly below 1; public outputs are clamped to it so that
/// `|forward(x)| < 1` holds in floating point too.
const OUTPUT_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 64, 32]
}

fn default_dropout() -> f64 {
    0.1
}

impl NetworkConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: default_hidden(),
            activation: Activation::Relu,
            dropout_rate: default_dropout(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(ObilError::InvalidConfig("input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(ObilError::InvalidConfig("need at least one non-empty hidden layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ObilError::InvalidConfig(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_val_fraction")]
    pub validation_fraction: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    64
}
fn default_patience() -> usize {
    10
}
fn default_val_fraction() -> f64 {
    0.15
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            max_epochs: default_epochs(),
            batch_size: default_batch(),
            early_stop_patience: default_patience(),
            validation_fraction: default_val_fraction(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ObilError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(ObilError::InvalidConfig("max_epochs and batch_size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(ObilError::InvalidConfig("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim] }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, b)| {
            row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b
        }));
    }
}

/// Per-hidden-layer keep flags for one stochastic forward pass.
pub type DropoutMasks = Vec<Vec<bool>>;

/// A trained scorer: network parameters plus the metadata needed to turn
/// its output into a likelihood ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScorer {
    pub config: NetworkConfig,
    pub layers: Vec<DenseLayer>,
    pub training_qp: f64,
    pub loss: LossKind,
    pub temperature: f64,
}

impl CalibratedScorer {
    /// Randomly initialized scorer (Glorot-uniform weights, zero biases).
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = Vec::with_capacity(config.hidden_dims.len() + 1);
        let mut prev = config.input_dim;
        for &h in &config.hidden_dims {
            layers.push(DenseLayer::glorot(prev, h, &mut rng));
            prev = h;
        }
        layers.push(DenseLayer::glorot(prev, 1, &mut rng));
        Ok(Self { config: config.clone(), layers, training_qp: 1.0, loss: LossKind::Squared, temperature: 1.0 })
    }

    /// All parameters zero; the output is `tanh(0) = 0` everywhere.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        let mut s = Self::init(config)?;
        for l in &mut s.layers {
            *l = DenseLayer::zeros(l.in_dim, l.out_dim);
        }
        Ok(s)
    }

    /// Checks every structural invariant; used after decoding.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected: Vec<usize> = self.config.hidden_dims.iter().copied().chain(std::iter::once(1)).collect();
        if self.layers.len() != expected.len() {
            return Err(ObilError::Decode(format!("expected {} layers, found {}", expected.len(), self.layers.len())));
        }
        let mut prev = self.config.input_dim;
        for (layer, &out) in self.layers.iter().zip(&expected) {
            let n = layer.in_dim.checked_mul(layer.out_dim).ok_or_else(|| ObilError::Decode("layer too large".into()))?;
            if layer.in_dim != prev || layer.out_dim != out || layer.weights.len() != n || layer.bias.len() != out {
                return Err(ObilError::Decode("layer shape mismatch".into()));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(ObilError::Decode("non-finite parameter".into()));
            }
            prev = out;
        }
        if !(self.training_qp.is_finite() && self.training_qp > 0.0) {
            return Err(ObilError::Decode(format!("training_qp {} must be positive", self.training_qp)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ObilError::Decode(format!("temperature {} must be positive", self.temperature)));
        }
        if let LossKind::SquaredCostWeighted { qc_tilde } = self.loss {
            if !(qc_tilde.is_finite() && qc_tilde > 0.0) {
                return Err(ObilError::InvalidWeight(qc_tilde));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.config.dropout_rate
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(ObilError::Shape { expected: self.config.input_dim, got: x.len() });
        }
        Ok(())
    }

    /// Draws keep/drop flags for every hidden unit, layer by layer.
    pub fn sample_dropout_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> DropoutMasks {
        let p = self.config.dropout_rate;
        self.config
            .hidden_dims
            .iter()
            .map(|&h| (0..h).map(|_| rng.random::<f64>() >= p).collect())
            .collect()
    }

    /// Final pre-activation (before temperature and tanh).
    fn pre_activation(&self, x: &[f64], masks: Option<&DropoutMasks>) -> f64 {
        let keep_scale = 1.0 / (1.0 - self.config.dropout_rate);
        let mut h = x.to_vec();
        let mut z = Vec::new();
        let (hidden, out) = self.layers.split_at(self.layers.len() - 1);
        for (l, layer) in hidden.iter().enumerate() {
            layer.affine(&h, &mut z);
            h.clear();
            h.extend(z.iter().map(|&v| self.config.activation.apply(v)));
            if let Some(m) = masks {
                for (v, &keep) in h.iter_mut().zip(&m[l]) {
                    *v = if keep { *v * keep_scale } else { 0.0 };
                }
            }
        }
        out[0].affine(&h, &mut z);
        z[0]
    }

    fn output_from(&self, a: f64) -> Result<f64> {
        let o = (a / self.temperature).tanh();
        if o.is_nan() {
            // finite but huge weights can overflow to inf - inf
            return Err(ObilError::NonFinite("network pre-activation".into()));
        }
        Ok(o.clamp(-OUTPUT_BOUND, OUTPUT_BOUND))
    }

    /// Deterministic forward pass; the result lies strictly inside (-1, 1).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.output_from(self.pre_activation(x, None))
    }

    /// Forward pass with optional inverted dropout after every hidden
    /// activation. With `dropout_active == false` no randomness is consumed.
    pub fn forward_dropout<R: Rng + ?Sized>(&self, x: &[f64], dropout_active: bool, rng: &mut R) -> Result<f64> {
        self.check_dim(x)?;
        if !dropout_active || self.config.dropout_rate == 0.0 {
            return self.forward(x);
        }
        let masks = self.sample_dropout_masks(rng);
        self.output_from(self.pre_activation(x, Some(&masks)))
    }

    /// Forward pass under explicit dropout masks.
    pub fn forward_with_masks(&self, x: &[f64], masks: &DropoutMasks) -> Result<f64> {
        self.check_dim(x)?;
        if masks.len() != self.config.hidden_dims.len()
            || masks.iter().zip(&self.config.hidden_dims).any(|(m, &h)| m.len() != h)
        {
            return Err(ObilError::InvalidConfig("dropout mask shape mismatch".into()));
        }
        self.output_from(self.pre_activation(x, Some(masks)))
    }

    /// Uncalibrated logit `2a`, so that `σ(logit / T)` is the posterior.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(2.0 * self.pre_activation(x, None))
    }

    /// `P(y=1|x)` under the training imbalance ratio.
    pub fn posterior(&self, x: &[f64]) -> Result<f64> {
        posterior_from_output(self.forward(x)?)
    }

    /// `ln q^_L(x)` recovered from the clamped output and `training_qp`.
    pub fn log_lr(&self, x: &[f64]) -> Result<f64> {
        Ok(log_lr_from_output(self.forward(x)?, self.training_qp))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
    }
}

/// Mean loss over `data` and its gradient (flattened like
/// [`CalibratedScorer::parameters`]), without dropout.
pub fn loss_and_gradient(scorer: &CalibratedScorer, data: &LabeledDataset, loss: &LossKind) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(ObilError::DegenerateData("empty dataset".into()));
    }
    if data.dim() != scorer.input_dim() {
        return Err(ObilError::Shape { expected: scorer.input_dim(), got: data.dim() });
    }
    let mut grads: Vec<DenseLayer> = scorer.layers.iter().map(|l| DenseLayer::zeros(l.in_dim, l.out_dim)).collect();
    let mut ws = Workspace::default();
    let mut total = 0.0;
    for (x, y) in data.iter() {
        total += backprop(scorer, x, y, loss, None, &mut grads, &mut ws);
    }
    let n = data.len() as f64;
    let flat = grads.iter().flat_map(|l| l.weights.iter().chain(&l.bias).map(|g| g / n)).collect();
    Ok((total / n, flat))
}

#[derive(Default)]
struct Workspace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

/// Accumulates the gradient of one sample's loss into `grads`; returns the
/// loss value.
fn backprop(
    scorer: &CalibratedScorer,
    x: &[f64],
    y: u8,
    loss: &LossKind,
    masks: Option<&DropoutMasks>,
    grads: &mut [DenseLayer],
    ws: &mut Workspace,
) -> f64 {
    let act = scorer.config.activation;
    let keep_scale = 1.0 / (1.0 - scorer.config.dropout_rate);
    let n_layers = scorer.layers.len();
    ws.pre.resize_with(n_layers, Vec::new);
    ws.post.resize_with(n_layers, Vec::new);

    // forward, caching pre-activations and (masked) activations
    for l in 0..n_layers {
        let (before, rest) = ws.post.split_at_mut(l);
        let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
        scorer.layers[l].affine(input, &mut ws.pre[l]);
        let out = &mut rest[0];
        out.clear();
        if l + 1 < n_layers {
            out.extend(ws.pre[l].iter().map(|&z| act.apply(z)));
            if let Some(m) = masks {
                for (v, &keep) in out.iter_mut().zip(&m[l]) {
                    *v = if keep { *v * keep_scale } else { 0.0 };
                }
            }
        } else {
            out.push(ws.pre[l][0]);
        }
    }
    let a = ws.pre[n_layers - 1][0] / scorer.temperature;
    let eval = loss.eval_pre_activation(a, y);

    ws.delta.clear();
    ws.delta.push(eval.derivative / scorer.temperature);
    for l in (0..n_layers).rev() {
        let layer = &scorer.layers[l];
        let input: &[f64] = if l == 0 { x } else { &ws.post[l - 1] };
        let g = &mut grads[l];
        for (o, &d) in ws.delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (gw, &xi) in row.iter_mut().zip(input) {
                *gw += d * xi;
            }
        }
        if l == 0 {
            break;
        }
        ws.next_delta.clear();
        ws.next_delta.resize(layer.in_dim, 0.0);
        for (o, &d) in ws.delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (nd, &w) in ws.next_delta.iter_mut().zip(row) {
                *nd += d * w;
            }
        }
        for (j, nd) in ws.next_delta.iter_mut().enumerate() {
            let mut factor = act.derivative(ws.pre[l - 1][j]);
            if let Some(m) = masks {
                factor *= if m[l - 1][j] { keep_scale } else { 0.0 };
            }
            *nd *= factor;
        }
        std::mem::swap(&mut ws.delta, &mut ws.next_delta);
    }
    eval.value
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, layers: &mut [DenseLayer], grads: &[DenseLayer], scale: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let params = layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
        let gs = grads.iter().flat_map(|l| l.weights.iter().chain(&l.bias));
        for (((p, &g), m), v) in params.zip(gs).zip(&mut self.m).zip(&mut self.v) {
            let g = g * scale;
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn mean_loss(scorer: &CalibratedScorer, data: &LabeledDataset, loss: &LossKind) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(x, y)| loss.eval_pre_activation(scorer.pre_activation(x, None) / scorer.temperature, y).value)
        .sum();
    total / data.len() as f64
}

/// Trains a scorer with Adam on mini-batches, early-stopping on a stratified
/// validation split and keeping the best-validation weights.
///
/// The resulting `training_qp` is the dataset's `N_0 / N_1` (times the cost
/// weight for `squared_costweighted`). Identical inputs and seeds give
/// bit-identical scorers.
pub fn train(
    dataset: &LabeledDataset,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainingConfig,
    loss: &LossKind,
) -> Result<CalibratedScorer> {
    net_cfg.validate()?;
    train_cfg.validate()?;
    if dataset.dim() != net_cfg.input_dim {
        return Err(ObilError::Shape { expected: net_cfg.input_dim, got: dataset.dim() });
    }
    let (n0, n1) = dataset.class_counts();
    if n0 < 2 || n1 < 2 {
        return Err(ObilError::DegenerateData(format!(
            "training needs at least two samples of each class (have {n0}/{n1})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(net_cfg.seed ^ 0x00D1_CE0F_7EA1_u64);
    let vf = train_cfg.validation_fraction;
    let parts = dataset.stratified_split(&[1.0 - vf, vf], &mut rng)?;
    let (train_set, val_set) = (&parts[0], &parts[1]);

    let mut scorer = CalibratedScorer::init(net_cfg)?;
    scorer.loss = *loss;
    scorer.training_qp = dataset.imbalance_ratio() * loss.odds_deflation();

    let mut adam = Adam::new(scorer.parameter_count(), train_cfg.learning_rate);
    let mut grads: Vec<DenseLayer> = scorer.layers.iter().map(|l| DenseLayer::zeros(l.in_dim, l.out_dim)).collect();
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (mean_loss(&scorer, val_set, loss), scorer.layers.clone());
    let mut stale = 0;
    let use_dropout = net_cfg.dropout_rate > 0.0;

    for _epoch in 0..train_cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(train_cfg.batch_size) {
            for g in &mut grads {
                g.weights.iter_mut().for_each(|v| *v = 0.0);
                g.bias.iter_mut().for_each(|v| *v = 0.0);
            }
            for &i in batch {
                let masks = use_dropout.then(|| scorer.sample_dropout_masks(&mut rng));
                backprop(&scorer, train_set.row(i), train_set.label(i), loss, masks.as_ref(), &mut grads, &mut ws);
            }
            adam.step(&mut scorer.layers, &grads, 1.0 / batch.len() as f64);
        }
        let val = mean_loss(&scorer, val_set, loss);
        if val < best.0 {
            best = (val, scorer.layers.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale > train_cfg.early_stop_patience {
                break;
            }
        }
    }
    scorer.layers = best.1;
    Ok(scorer)
}

/// Largest relative discrepancy between the backprop gradient and a central
/// finite difference (step `1e-5`) over all parameters.
pub fn gradient_check(scorer: &CalibratedScorer, data: &LabeledDataset, loss: &LossKind) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, analytic) = loss_and_gradient(scorer, data, loss)?;
    let mut probe = scorer.clone();
    let base = scorer.parameters();
    let mut params = base.clone();
    let mut worst: f64 = 0.0;
    for (i, &g) in analytic.iter().enumerate() {
        params[i] = base[i] + STEP;
        probe.set_parameters(&params);
        let up = mean_loss(&probe, data, loss);
        params[i] = base[i] - STEP;
        probe.set_parameters(&params);
        let down = mean_loss(&probe, data, loss);
        params[i] = base[i];
        let fd = (up - down) / (2.0 * STEP);
        let denom = g.abs().max(fd.abs()).max(1e-8);
        worst = worst.max((g - fd).abs() / denom);
    }
    Ok(worst)
}

/// Variance (`1/M` normalisation) of `ln q^_L(x)` over `m` dropout passes.
/// Scorers without dropout return 0 without touching `rng`.
pub fn mc_dropout_log_lr_variance<R: RngCore + ?Sized>(
    scorer: &CalibratedScorer,
    x: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    scorer.check_dim(x)?;
    if m < 2 {
        return Err(ObilError::InvalidConfig(format!("mc sample count {m} must be at least 2")));
    }
    if scorer.config.dropout_rate == 0.0 {
        return Ok(0.0);
    }
    let samples: Vec<f64> = (0..m)
        .map(|_| {
            let masks = scorer.sample_dropout_masks(rng);
            Ok(log_lr_from_output(scorer.output_from(scorer.pre_activation(x, Some(&masks)))?, scorer.training_qp))
        })
        .collect::<Result<_>>()?;
    Ok(population_variance(&samples))
}

pub(crate) fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n
}

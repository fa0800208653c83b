//! Small fully connected networks: forward and backward passes, the one-cycle
//! learning-rate policy, a deterministic SGD training loop and evaluation
//! metrics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::indexed_rng;

/// Fraction of a phase spent warming up.
pub const WARMUP_FRACTION: f64 = 0.25;
/// Starting learning rate is `lr_max / DIV_START`.
pub const DIV_START: f64 = 25.0;
/// Final learning rate is `lr_max / DIV_FINAL`.
pub const DIV_FINAL: f64 = 1e4;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_MOMENTUM_RANGE: (f64, f64) = (0.95, 0.85);

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {step} outside 0..{total}")]
    InvalidStep { step: usize, total: usize },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("label {label} outside the {classes} output classes")]
    LabelMismatch { label: usize, classes: usize },
    #[error("target kind does not match the network output")]
    TargetKind,
    #[error("training diverged (non-finite loss)")]
    Diverged,
}

pub type Result<T> = std::result::Result<T, LearnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    SoftmaxClassifier,
    ScalarRegressor,
}

/// Layer widths of a ReLU network. `hidden` may be empty (a linear head).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output_kind: OutputKind,
}

impl MlpSpec {
    pub fn classifier(input_dim: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self { input_dim, hidden, output_dim: classes, output_kind: OutputKind::SoftmaxClassifier }
    }

    pub fn regressor(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden, output_dim: 1, output_kind: OutputKind::ScalarRegressor }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(LearnError::InvalidSpec("all widths must be at least 1".into()));
        }
        if self.output_kind == OutputKind::ScalarRegressor && self.output_dim != 1 {
            return Err(LearnError::InvalidSpec("a scalar regressor has one output".into()));
        }
        Ok(())
    }

    /// (inputs, outputs) of each affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Network parameters (also used for gradients, which share the shape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self { layers: spec.layer_shapes().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect() }
    }

    /// Seeded He-style uniform initialisation, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = indexed_rng(seed, 0);
        let mut p = Self::zeros(spec);
        for layer in &mut p.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn from_flat(spec: &MlpSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.num_params() {
            return Err(LearnError::DimensionMismatch { expected: spec.num_params(), got: flat.len() });
        }
        let mut p = Self::zeros(spec);
        let mut it = flat.iter().copied();
        for layer in &mut p.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(p)
    }

    /// Rounds every parameter to f32 precision, the precision models are
    /// stored at.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *w as f32 as f64;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn axpy(&mut self, alpha: f64, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += alpha * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += alpha * y;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w *= alpha;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_params(spec: &MlpSpec, params: &MlpParams) -> Result<()> {
    let shapes = spec.layer_shapes();
    if shapes.len() != params.layers.len()
        || shapes.iter().zip(&params.layers).any(|(&(i, o), l)| l.inputs != i || l.outputs != o)
    {
        return Err(LearnError::DimensionMismatch {
            expected: spec.num_params(),
            got: params.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum(),
        });
    }
    Ok(())
}

/// Activations of every layer; the last entry holds the raw (pre-softmax)
/// outputs.
fn forward_trace(params: &MlpParams, x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(x.to_vec());
    let last = params.layers.len() - 1;
    for (k, layer) in params.layers.iter().enumerate() {
        let mut out = Vec::with_capacity(layer.outputs);
        layer.apply(acts.last().expect("input pushed"), &mut out);
        if k < last {
            for v in &mut out {
                *v = v.max(0.0);
            }
        }
        acts.push(out);
    }
    acts
}

/// Affine + ReLU per hidden layer, then softmax or identity.
pub fn mlp_forward(spec: &MlpSpec, params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    if x.len() != spec.input_dim {
        return Err(LearnError::DimensionMismatch { expected: spec.input_dim, got: x.len() });
    }
    let raw = forward_trace(params, x).pop().expect("output layer");
    Ok(match spec.output_kind {
        OutputKind::SoftmaxClassifier => softmax(&raw),
        OutputKind::ScalarRegressor => raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    Value(f64),
}

fn check_target(spec: &MlpSpec, t: &Target) -> Result<()> {
    match (spec.output_kind, t) {
        (OutputKind::SoftmaxClassifier, Target::Class(c)) if *c >= spec.output_dim => {
            Err(LearnError::LabelMismatch { label: *c, classes: spec.output_dim })
        }
        (OutputKind::SoftmaxClassifier, Target::Class(_)) => Ok(()),
        (OutputKind::ScalarRegressor, Target::Value(_)) => Ok(()),
        _ => Err(LearnError::TargetKind),
    }
}

/// Per-sample loss: cross-entropy for classifiers, squared error for
/// regressors.
fn sample_loss(spec: &MlpSpec, raw: &[f64], t: &Target) -> f64 {
    match (spec.output_kind, t) {
        (OutputKind::SoftmaxClassifier, Target::Class(c)) => {
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + raw.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            lse - raw[*c]
        }
        (OutputKind::ScalarRegressor, Target::Value(v)) => (raw[0] - v) * (raw[0] - v),
        _ => unreachable!("targets are checked before use"),
    }
}

/// Mean batch loss and its exact gradient.
pub fn mlp_backward(
    spec: &MlpSpec,
    params: &MlpParams,
    batch: &[(&[f64], Target)],
) -> Result<(f64, MlpParams)> {
    check_params(spec, params)?;
    if batch.is_empty() {
        return Err(LearnError::EmptySet("batch"));
    }
    let mut grad = MlpParams::zeros(spec);
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for (x, t) in batch {
        if x.len() != spec.input_dim {
            return Err(LearnError::DimensionMismatch { expected: spec.input_dim, got: x.len() });
        }
        check_target(spec, t)?;
        let acts = forward_trace(params, x);
        let raw = acts.last().expect("output layer");
        loss += sample_loss(spec, raw, t) * inv;
        let mut delta: Vec<f64> = match (spec.output_kind, t) {
            (OutputKind::SoftmaxClassifier, Target::Class(c)) => {
                let mut p = softmax(raw);
                p[*c] -= 1.0;
                p
            }
            (OutputKind::ScalarRegressor, Target::Value(v)) => vec![2.0 * (raw[0] - v)],
            _ => unreachable!("targets are checked before use"),
        };
        for d in &mut delta {
            *d *= inv;
        }
        for k in (0..params.layers.len()).rev() {
            let layer = &params.layers[k];
            let input = &acts[k];
            let g = &mut grad.layers[k];
            for o in 0..layer.outputs {
                g.bias[o] += delta[o];
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, a) in row.iter_mut().zip(input) {
                    *w += delta[o] * a;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * delta[o];
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    Ok((loss, grad))
}

fn cosine_anneal(start: f64, end: f64, pct: f64) -> f64 {
    // endpoints returned exactly rather than through rounding
    if pct <= 0.0 {
        return start;
    }
    if pct >= 1.0 {
        return end;
    }
    end + (start - end) / 2.0 * (1.0 + (std::f64::consts::PI * pct).cos())
}

fn cycle_position(step: usize, total: usize) -> Result<(bool, f64)> {
    if step >= total {
        return Err(LearnError::InvalidStep { step, total });
    }
    let peak = WARMUP_FRACTION * total as f64;
    let s = step as f64;
    if s <= peak {
        Ok((true, if peak > 0.0 { s / peak } else { 1.0 }))
    } else {
        let rest = (total - 1) as f64 - peak;
        Ok((false, if rest > 0.0 { ((s - peak) / rest).min(1.0) } else { 1.0 }))
    }
}

/// One-cycle learning rate: cosine warm-up from `lr_max/25` to `lr_max` over
/// the first quarter of the steps, then cosine annealing to `lr_max/1e4` at
/// the final step.
pub fn one_cycle_lr(step: usize, total_steps: usize, lr_max: f64) -> Result<f64> {
    let (warming, pct) = cycle_position(step, total_steps)?;
    Ok(if warming {
        cosine_anneal(lr_max / DIV_START, lr_max, pct)
    } else {
        cosine_anneal(lr_max, lr_max / DIV_FINAL, pct)
    })
}

/// Momentum cycled inversely to the learning rate: `range.0` at the ends,
/// `range.1` at the learning-rate peak.
pub fn one_cycle_momentum(step: usize, total_steps: usize, range: (f64, f64)) -> Result<f64> {
    let (warming, pct) = cycle_position(step, total_steps)?;
    Ok(if warming {
        cosine_anneal(range.0, range.1, pct)
    } else {
        cosine_anneal(range.1, range.0, pct)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub epochs: usize,
    pub lr_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub phases: Vec<Phase>,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum_range: (f64, f64),
}

impl TrainSchedule {
    pub fn new(phases: &[(usize, f64)], seed: u64) -> Self {
        Self {
            phases: phases.iter().map(|&(epochs, lr_max)| Phase { epochs, lr_max }).collect(),
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
            momentum_range: DEFAULT_MOMENTUM_RANGE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(LearnError::InvalidSchedule("no phases".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidSchedule("batch size must be positive".into()));
        }
        for p in &self.phases {
            if p.epochs == 0 || !(p.lr_max > 0.0) || !p.lr_max.is_finite() {
                return Err(LearnError::InvalidSchedule(format!(
                    "phase ({}, {}) needs epochs >= 1 and lr_max > 0",
                    p.epochs, p.lr_max
                )));
            }
        }
        Ok(())
    }

    /// `(epochs, lr_max)` pairs.
    pub fn echo(&self) -> Vec<(usize, f64)> {
        self.phases.iter().map(|p| (p.epochs, p.lr_max)).collect()
    }
}

/// Labelled samples with stable ids (ids break ties in quartile ordering).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Samples {
    pub ids: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
}

impl Samples {
    pub fn new(ids: Vec<String>, inputs: Vec<Vec<f64>>, targets: Vec<Target>) -> Self {
        assert_eq!(ids.len(), inputs.len(), "one id per input");
        assert_eq!(inputs.len(), targets.len(), "one target per input");
        Self { ids, inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self, spec: &MlpSpec, what: &'static str) -> Result<()> {
        if self.is_empty() {
            return Err(LearnError::EmptySet(what));
        }
        for (x, t) in self.inputs.iter().zip(&self.targets) {
            if x.len() != spec.input_dim {
                return Err(LearnError::DimensionMismatch { expected: spec.input_dim, got: x.len() });
            }
            check_target(spec, t)?;
        }
        Ok(())
    }
}

/// How class outputs map onto a numeric score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Unordered categories; no RMSE.
    Category,
    /// Class `k` is score `k`; predictions decode to the probability-weighted
    /// expectation.
    ExpectedScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub rmse: Option<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Accuracy per confidence quartile, highest-confidence quartile first.
    pub per_quartile_accuracy: Option<[f64; 4]>,
    pub loss: f64,
    pub n: usize,
}

/// Top-1 minus top-2 probability.
pub fn confidence(distribution: &[f64]) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in distribution {
        if p > a {
            b = a;
            a = p;
        } else if p > b {
            b = p;
        }
    }
    if b.is_finite() { a - b } else { a.max(0.0) }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn expected_class(distribution: &[f64]) -> f64 {
    distribution.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}

/// Splits items ordered by descending confidence (ties by id) into four
/// blocks whose sizes differ by at most one, larger blocks first, and returns
/// each block's accuracy. Needs at least four items.
pub fn quartile_accuracy_of(confidences: &[f64], correct: &[bool], ids: &[String]) -> Option<[f64; 4]> {
    let n = confidences.len();
    if n < 4 {
        return None;
    }
    let blocks = quartile_blocks(confidences, ids);
    let mut out = [0.0; 4];
    for (q, block) in blocks.iter().enumerate() {
        out[q] = block.iter().filter(|&&i| correct[i]).count() as f64 / block.len() as f64;
    }
    Some(out)
}

/// Index blocks of the confidence quartiles, highest first.
pub fn quartile_blocks(confidences: &[f64], ids: &[String]) -> [Vec<usize>; 4] {
    let n = confidences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then_with(|| ids[a].cmp(&ids[b])));
    let base = n / 4;
    let extra = n % 4;
    let mut blocks: [Vec<usize>; 4] = Default::default();
    let mut start = 0;
    for (q, block) in blocks.iter_mut().enumerate() {
        let len = base + usize::from(q < extra);
        *block = order[start..start + len].to_vec();
        start += len;
    }
    blocks
}

pub fn evaluate(spec: &MlpSpec, params: &MlpParams, set: &Samples, decoding: Decoding) -> Result<EvalReport> {
    check_params(spec, params)?;
    set.validate(spec, "validation")?;
    let n = set.len();
    let classes = if spec.output_kind == OutputKind::SoftmaxClassifier { spec.output_dim } else { 0 };
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = Vec::with_capacity(n);
    let mut confidences = Vec::with_capacity(n);
    let mut sq_err = 0.0;
    let mut loss = 0.0;
    for (x, t) in set.inputs.iter().zip(&set.targets) {
        let raw = forward_trace(params, x).pop().expect("output layer");
        loss += sample_loss(spec, &raw, t) / n as f64;
        match (spec.output_kind, t) {
            (OutputKind::SoftmaxClassifier, Target::Class(c)) => {
                let p = softmax(&raw);
                let pred = argmax(&p);
                confusion[*c][pred] += 1;
                correct.push(pred == *c);
                confidences.push(confidence(&p));
                if decoding == Decoding::ExpectedScore {
                    let e = expected_class(&p) - *c as f64;
                    sq_err += e * e;
                }
            }
            (OutputKind::ScalarRegressor, Target::Value(v)) => {
                correct.push(raw[0].round() == v.round());
                confidences.push(0.0);
                sq_err += (raw[0] - v) * (raw[0] - v);
            }
            _ => unreachable!("targets validated"),
        }
    }
    let hits = correct.iter().filter(|&&c| c).count();
    let rmse = (decoding == Decoding::ExpectedScore || spec.output_kind == OutputKind::ScalarRegressor)
        .then(|| (sq_err / n as f64).sqrt());
    Ok(EvalReport {
        accuracy: hits as f64 / n as f64,
        rmse,
        confusion,
        per_quartile_accuracy: quartile_accuracy_of(&confidences, &correct, &set.ids),
        loss,
        n,
    })
}

/// Mean loss over a whole sample set.
pub fn dataset_loss(spec: &MlpSpec, params: &MlpParams, set: &Samples) -> Result<f64> {
    check_params(spec, params)?;
    set.validate(spec, "loss")?;
    Ok(set
        .inputs
        .iter()
        .zip(&set.targets)
        .map(|(x, t)| sample_loss(spec, &forward_trace(params, x).pop().expect("output"), t))
        .sum::<f64>()
        / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: MlpParams,
    /// Validation report after each phase.
    pub reports: Vec<EvalReport>,
}

pub fn train(
    spec: &MlpSpec,
    schedule: &TrainSchedule,
    train_set: &Samples,
    val_set: &Samples,
    decoding: Decoding,
) -> Result<TrainOutcome> {
    train_with_progress(spec, schedule, train_set, val_set, decoding, &mut |_| {})
}

/// SGD with heavy-ball momentum under a one-cycle policy per phase. Shuffles
/// come from a stream keyed by (seed, phase, epoch) so runs are
/// bit-reproducible. Parameters are rounded to f32 precision at the end.
pub fn train_with_progress(
    spec: &MlpSpec,
    schedule: &TrainSchedule,
    train_set: &Samples,
    val_set: &Samples,
    decoding: Decoding,
    progress: &mut dyn FnMut(f64),
) -> Result<TrainOutcome> {
    spec.validate()?;
    schedule.validate()?;
    train_set.validate(spec, "training")?;
    val_set.validate(spec, "validation")?;

    let mut params = MlpParams::init(spec, schedule.seed);
    let mut velocity = MlpParams::zeros(spec);
    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(schedule.batch_size);
    let total_epochs: usize = schedule.phases.iter().map(|p| p.epochs).sum();
    let mut epochs_done = 0;
    let mut reports = Vec::with_capacity(schedule.phases.len());
    let mut order: Vec<usize> = (0..n).collect();

    for (phase_idx, phase) in schedule.phases.iter().enumerate() {
        let total_steps = phase.epochs * steps_per_epoch;
        let mut step = 0;
        for epoch in 0..phase.epochs {
            let stream = ((phase_idx as u64) << 32) | epoch as u64;
            order.sort_unstable();
            order.shuffle(&mut indexed_rng(schedule.seed ^ 0x5eed_0f_5a17, stream));
            for chunk in order.chunks(schedule.batch_size) {
                let lr = one_cycle_lr(step, total_steps, phase.lr_max)?;
                let mom = one_cycle_momentum(step, total_steps, schedule.momentum_range)?;
                let batch: Vec<(&[f64], Target)> = chunk
                    .iter()
                    .map(|&i| (train_set.inputs[i].as_slice(), train_set.targets[i]))
                    .collect();
                let (loss, grad) = mlp_backward(spec, &params, &batch)?;
                if !loss.is_finite() {
                    return Err(LearnError::Diverged);
                }
                velocity.scale(mom);
                velocity.axpy(1.0, &grad);
                params.axpy(-lr, &velocity);
                step += 1;
            }
            epochs_done += 1;
            progress(epochs_done as f64 / total_epochs as f64);
        }
        let mut snapshot = params.clone();
        snapshot.round_to_f32();
        reports.push(evaluate(spec, &snapshot, val_set, decoding)?);
    }
    params.round_to_f32();
    Ok(TrainOutcome { params, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let spec = MlpSpec::classifier(4, vec![3], 3);
        let p = mlp_forward(&spec, &MlpParams::zeros(&spec), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec { input_dim: 3, hidden: vec![], output_dim: 3, output_kind: OutputKind::ScalarRegressor };
        // Regressors must have one output.
        assert!(spec.validate().is_err());
        let spec = MlpSpec::regressor(1, vec![]);
        let mut p = MlpParams::zeros(&spec);
        p.layers[0].weights[0] = 1.0;
        assert_eq!(mlp_forward(&spec, &p, &[-2.5]).unwrap(), vec![-2.5]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let spec = MlpSpec::classifier(4, vec![], 2);
        let p = MlpParams::zeros(&spec);
        assert!(matches!(
            mlp_forward(&spec, &p, &[1.0]),
            Err(LearnError::DimensionMismatch { expected: 4, got: 1 })
        ));
    }

    #[test]
    fn one_cycle_endpoints() {
        let total = 100;
        assert!((one_cycle_lr(0, total, 0.01).unwrap() - 0.01 / 25.0).abs() < 1e-15);
        assert!((one_cycle_lr(25, total, 0.01).unwrap() - 0.01).abs() < 1e-15);
        assert!((one_cycle_lr(99, total, 0.01).unwrap() - 0.01 / 1e4).abs() < 1e-12);
        assert!(one_cycle_lr(100, total, 0.01).is_err());
        assert!((one_cycle_momentum(25, total, (0.95, 0.85)).unwrap() - 0.85).abs() < 1e-12);
        assert!((one_cycle_momentum(0, total, (0.95, 0.85)).unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn confidence_values() {
        assert!((confidence(&[0.7, 0.2, 0.1]) - 0.5).abs() < 1e-12);
        assert_eq!(confidence(&[0.25; 4]), 0.0);
        assert!(confidence(&[1.0 - 1e-12, 1e-12]) > 0.999_999);
    }

    #[test]
    fn quartile_blocks_cover_once() {
        let ids: Vec<String> = (0..10).map(|i| format!("{i:02}")).collect();
        let conf = vec![0.5; 10];
        let blocks = quartile_blocks(&conf, &ids);
        let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        // Equal confidences: id-ordered blocks.
        assert_eq!(blocks[0], vec![0, 1, 2]);
        assert_eq!(blocks[3], vec![8, 9]);
    }

    #[test]
    fn schedule_validation() {
        assert!(TrainSchedule::new(&[], 0).validate().is_err());
        assert!(TrainSchedule::new(&[(0, 0.1)], 0).validate().is_err());
        assert!(TrainSchedule::new(&[(1, 0.0)], 0).validate().is_err());
        assert!(TrainSchedule::new(&[(1, 0.1)], 0).validate().is_ok());
    }

    #[test]
    fn train_rejects_empty_and_bad_labels() {
        let spec = MlpSpec::classifier(2, vec![], 2);
        let sched = TrainSchedule::new(&[(1, 0.1)], 0);
        let empty = Samples::default();
        let one = Samples::new(vec!["a".into()], vec![vec![0.0, 1.0]], vec![Target::Class(1)]);
        assert_eq!(
            train(&spec, &sched, &empty, &one, Decoding::Category).unwrap_err(),
            LearnError::EmptySet("training")
        );
        let bad = Samples::new(vec!["a".into()], vec![vec![0.0, 1.0]], vec![Target::Class(5)]);
        assert!(matches!(
            train(&spec, &sched, &bad, &one, Decoding::Category),
            Err(LearnError::LabelMismatch { .. })
        ));
    }

    #[test]
    fn flat_round_trip() {
        let spec = MlpSpec::classifier(5, vec![4, 3], 2);
        let p = MlpParams::init(&spec, 3);
        let q = MlpParams::from_flat(&spec, &p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(MlpParams::from_flat(&spec, &[0.0]).is_err());
    }
}

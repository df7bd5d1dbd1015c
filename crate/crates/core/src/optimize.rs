//! Stochastic gradient training.
//!
//! Sampling schemes: full-batch steepest descent, single samples drawn with
//! replacement, single samples in a fresh shuffled order every epoch, and
//! mini-batches (with or without replacement). Updates use classical momentum
//! `v ← μ v − η g; p ← p + v`, which is plain SGD for `μ = 0`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::backprop::{self, GradientBundle};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::loss::{self, Loss};
use crate::network::{Layer, NetworkSpec};
use crate::rng::{self, Rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    FullBatch,
    SingleWithReplacement,
    EpochShuffle,
    MiniBatch { size: usize, with_replacement: bool },
}

impl Scheme {
    /// Steps that make up one epoch over `n` training points.
    pub fn steps_per_epoch(self, n: usize) -> usize {
        match self {
            Scheme::FullBatch => 1,
            Scheme::SingleWithReplacement | Scheme::EpochShuffle => n,
            Scheme::MiniBatch { size, .. } => n.div_ceil(size.max(1)),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::FullBatch => f.write_str("full_batch"),
            Scheme::SingleWithReplacement => f.write_str("single_with_replacement"),
            Scheme::EpochShuffle => f.write_str("epoch_shuffle"),
            Scheme::MiniBatch { size, with_replacement: false } => write!(f, "minibatch:{size}"),
            Scheme::MiniBatch { size, with_replacement: true } => write!(f, "minibatch:{size}:replace"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("scheme", format!("unknown sampling scheme `{s}`"));
        match s {
            "full_batch" => Ok(Scheme::FullBatch),
            "single_with_replacement" => Ok(Scheme::SingleWithReplacement),
            "epoch_shuffle" => Ok(Scheme::EpochShuffle),
            _ => {
                let mut parts = s.split(':');
                if parts.next() != Some("minibatch") {
                    return Err(bad());
                }
                let size = parts.next().and_then(|m| m.parse().ok()).ok_or_else(bad)?;
                let with_replacement = match parts.next() {
                    None => false,
                    Some("replace") => true,
                    Some(_) => return Err(bad()),
                };
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(Scheme::MiniBatch { size, with_replacement })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleUnit {
    Epoch,
    Step,
}

/// Piecewise-constant learning rate: `segments[i] = (length, η)`. The last
/// rate stays in force once the listed lengths are used up.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub unit: ScheduleUnit,
    pub segments: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(eta: f64) -> Self {
        LrSchedule {
            unit: ScheduleUnit::Step,
            segments: vec![(usize::MAX, eta)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::config("lr_schedule", "needs at least one learning rate"));
        }
        for &(len, eta) in &self.segments {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config("lr_schedule", format!("learning rates must be positive, got {eta}")));
            }
            if len == 0 {
                return Err(Error::config("lr_schedule", "segment lengths must be positive"));
            }
        }
        Ok(())
    }

    pub fn eta_at(&self, step: usize, epoch: usize) -> f64 {
        let mut t = match self.unit {
            ScheduleUnit::Epoch => epoch,
            ScheduleUnit::Step => step,
        };
        for &(len, eta) in &self.segments {
            if t < len {
                return eta;
            }
            t -= len;
        }
        self.segments.last().map_or(f64::NAN, |s| s.1)
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let [(usize::MAX, eta)] = self.segments[..] {
            return write!(f, "{eta}");
        }
        f.write_str(match self.unit {
            ScheduleUnit::Epoch => "epochs",
            ScheduleUnit::Step => "steps",
        })?;
        for (len, eta) in &self.segments {
            write!(f, " {len}:{eta}")?;
        }
        Ok(())
    }
}

/// `0.05`, or `epochs 30:0.05 10:0.005 5:0.0005`, or `steps 1000:0.1 …`.
impl FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::config("lr_schedule", format!("cannot parse `{what}`"));
        let mut words = s.split_whitespace();
        let first = words.next().ok_or_else(|| bad(s))?;
        let unit = match first {
            "epochs" => ScheduleUnit::Epoch,
            "steps" => ScheduleUnit::Step,
            _ => {
                if words.next().is_some() {
                    return Err(bad(s));
                }
                let eta: f64 = first.parse().map_err(|_| bad(first))?;
                let sched = LrSchedule::constant(eta);
                sched.validate()?;
                return Ok(sched);
            }
        };
        let segments = words
            .map(|w| {
                let (len, eta) = w.split_once(':').ok_or_else(|| bad(w))?;
                Ok((len.parse().map_err(|_| bad(w))?, eta.parse().map_err(|_| bad(w))?))
            })
            .collect::<Result<Vec<(usize, f64)>>>()?;
        let sched = LrSchedule { unit, segments };
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    Steps(usize),
    Epochs(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub lr_schedule: LrSchedule,
    /// In `[0, 1)`.
    pub momentum: f64,
    /// Drop probability for each layer's output; missing entries mean 0.
    pub dropout: Vec<f64>,
    pub budget: Budget,
    pub seed: u64,
    pub cost_log_stride: usize,
    /// Keep the sampled training indices in [`TrainReport::sample_log`].
    pub record_samples: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheme: Scheme::SingleWithReplacement,
            lr_schedule: LrSchedule::constant(0.05),
            momentum: 0.0,
            dropout: Vec::new(),
            budget: Budget::Steps(1000),
            seed: 0,
            cost_log_stride: 1,
            record_samples: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &NetworkSpec, n_train: usize) -> Result<()> {
        self.lr_schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if self.cost_log_stride == 0 {
            return Err(Error::config("cost_log_stride", "must be at least 1"));
        }
        if let Scheme::MiniBatch { size, .. } = self.scheme {
            if size == 0 || size > n_train {
                return Err(Error::config(
                    "scheme",
                    format!("mini-batch size {size} must lie in 1..={n_train} (training set size)"),
                ));
            }
        }
        if self.dropout.len() > net.num_layers() {
            return Err(Error::config(
                "dropout",
                format!("{} probabilities given for {} layers", self.dropout.len(), net.num_layers()),
            ));
        }
        for (l, &p) in self.dropout.iter().enumerate() {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config("dropout", format!("layer {l}: probability must lie in [0, 1), got {p}")));
            }
            if p > 0.0 && next_weighted_layer(net, l).is_none() {
                return Err(Error::config(
                    "dropout",
                    format!("layer {l} has no later weighted layer to rescale; the output layer cannot use dropout"),
                ));
            }
        }
        Ok(())
    }

    fn dropout_active(&self) -> bool {
        self.dropout.iter().any(|&p| p > 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostRecord {
    pub step: usize,
    pub train_cost: f64,
    pub val_cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub cost_history: Vec<CostRecord>,
    /// Inference-ready network (dropout rescaling already applied).
    pub final_net: NetworkSpec,
    pub steps_taken: usize,
    pub sample_log: Vec<usize>,
}

impl TrainReport {
    pub fn final_cost(&self) -> f64 {
        self.cost_history.last().map_or(f64::NAN, |r| r.train_cost)
    }
}

/// Zeroes each coordinate independently with probability `p_drop`.
/// Returns the masked activations and the 0/1 mask.
pub fn apply_dropout(a: &Vector, p_drop: f64, rng: &mut Rng) -> (Vector, Vector) {
    if p_drop == 0.0 {
        return (a.clone(), Vector::ones(a.len()));
    }
    let mask = Vector::new((0..a.len()).map(|_| if rng.random::<f64>() < p_drop { 0.0 } else { 1.0 }).collect());
    let masked = linalg::hadamard(a, &mask).expect("same length");
    (masked, mask)
}

fn next_weighted_layer(net: &NetworkSpec, l: usize) -> Option<usize> {
    (l + 1..net.num_layers()).find(|&j| !matches!(net.layers()[j], Layer::Pool(_)))
}

/// Rescales for use without dropout: the weights that read a layer trained
/// with drop probability `p` are multiplied by `1 − p`. Pool layers in
/// between pass the scaling through.
pub fn scale_for_inference(net: &NetworkSpec, dropout: &[f64]) -> Result<NetworkSpec> {
    let mut out = net.clone();
    for (l, &p) in dropout.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let j = next_weighted_layer(net, l)
            .ok_or_else(|| Error::config("dropout", format!("layer {l} has no later weighted layer")))?;
        for w in out.params_mut(j).0 {
            *w *= 1.0 - p;
        }
    }
    Ok(out)
}

/// Mean gradient over `indices` (in that order), with optional per-sample
/// dropout masks drawn from `dropout_rng`.
pub fn batch_gradient(
    net: &NetworkSpec,
    data: &LabeledDataset,
    indices: &[usize],
    loss: &Loss,
    dropout: Option<(&[f64], &mut Rng)>,
) -> Result<GradientBundle> {
    if indices.is_empty() {
        return Err(Error::Domain("cannot take a gradient over an empty batch".into()));
    }
    let n = data.len();
    let seeds: Option<(&[f64], Vec<u64>)> = dropout.map(|(p, r)| (p, indices.iter().map(|_| r.random()).collect()));
    let one = |k: usize| -> Result<GradientBundle> {
        let i = indices[k];
        let trace = match &seeds {
            None => net.forward(data.input(i))?,
            Some((probs, s)) => {
                let mut r = rng::from_u64(s[k]);
                net.forward_with(data.input(i), |l, a| match probs.get(l) {
                    Some(&p) if p > 0.0 => {
                        let (a, m) = apply_dropout(&a, p, &mut r);
                        (a, Some(m))
                    }
                    _ => (a, None),
                })?
            }
        };
        backprop::backward(net, &trace, data.target(i), loss, n)
    };
    let grads: Vec<GradientBundle> = if indices.len() >= 16 {
        (0..indices.len()).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..indices.len()).map(one).collect::<Result<_>>()?
    };
    let mut iter = grads.into_iter();
    let mut total = iter.next().expect("nonempty batch");
    for g in iter {
        total.add_scaled(1.0, &g)?;
    }
    if indices.len() > 1 {
        total.scale(1.0 / indices.len() as f64);
    }
    Ok(total)
}

/// Gradient of the dataset cost: the mean over every sample.
pub fn full_gradient(net: &NetworkSpec, data: &LabeledDataset, loss: &Loss) -> Result<GradientBundle> {
    let all: Vec<usize> = (0..data.len()).collect();
    batch_gradient(net, data, &all, loss, None)
}

/// `v ← μ v − η g`, `p ← p + v`.
pub fn apply_update(net: &mut NetworkSpec, grad: &GradientBundle, eta: f64, momentum: f64, velocity: &mut GradientBundle) {
    for l in 0..net.num_layers() {
        let (w, b) = net.params_mut(l);
        let gw = grad.weight_grads[l].as_slice();
        let gb = grad.bias_grads[l].as_slice();
        let vw = velocity.weight_grads[l].as_mut_slice();
        assert!(gw.len() == w.len() && vw.len() == w.len(), "gradient does not match layer {l}");
        for ((p, &g), v) in w.iter_mut().zip(gw).zip(vw.iter_mut()) {
            *v = momentum * *v - eta * g;
            *p += *v;
        }
        let vb = velocity.bias_grads[l].as_mut_slice();
        assert!(gb.len() == b.len() && vb.len() == b.len(), "gradient does not match layer {l}");
        for ((p, &g), v) in b.iter_mut().zip(gb).zip(vb.iter_mut()) {
            *v = momentum * *v - eta * g;
            *p += *v;
        }
    }
}

/// One update from the mean gradient over `indices`.
pub fn sgd_step(
    net: &mut NetworkSpec,
    data: &LabeledDataset,
    indices: &[usize],
    loss: &Loss,
    eta: f64,
    momentum: f64,
    velocity: &mut GradientBundle,
) -> Result<()> {
    let g = batch_gradient(net, data, indices, loss, None)?;
    apply_update(net, &g, eta, momentum, velocity);
    Ok(())
}

struct Sampler {
    scheme: Scheme,
    n: usize,
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(scheme: Scheme, n: usize, seed: u64) -> Self {
        Sampler {
            scheme,
            n,
            rng: rng::stream(seed, Stream::Sampling),
            order: (0..n).collect(),
            pos: 0,
        }
    }

    fn next_batch(&mut self, out: &mut Vec<usize>) {
        out.clear();
        match self.scheme {
            Scheme::FullBatch => out.extend(0..self.n),
            Scheme::SingleWithReplacement => out.push(self.rng.random_range(0..self.n)),
            Scheme::MiniBatch { size, with_replacement: true } => {
                out.extend((0..size).map(|_| self.rng.random_range(0..self.n)));
            }
            Scheme::EpochShuffle => self.take_in_order(1, out),
            Scheme::MiniBatch { size, with_replacement: false } => self.take_in_order(size, out),
        }
    }

    /// Next `size` indices of the current permutation, reshuffling at each
    /// epoch start. The last batch of an epoch may be short.
    fn take_in_order(&mut self, size: usize, out: &mut Vec<usize>) {
        if self.pos == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.pos + size).min(self.n);
        out.extend_from_slice(&self.order[self.pos..end]);
        self.pos = if end == self.n { 0 } else { end };
    }
}

/// Runs the configured scheme from `net` and returns the cost history and the
/// trained network. Deterministic in `config.seed`.
pub fn train(
    net: &NetworkSpec,
    train_data: &LabeledDataset,
    val_data: Option<&LabeledDataset>,
    loss: &Loss,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if train_data.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    train_data.check_network(net)?;
    let val_data = val_data.filter(|v| !v.is_empty());
    if let Some(v) = val_data {
        v.check_network(net)?;
    }
    loss.check_network(net)?;
    config.validate(net, train_data.len())?;
    for layer in net.layers() {
        if !layer.activation().is_differentiable() {
            return Err(Error::UnsupportedDerivative);
        }
    }

    let n = train_data.len();
    let steps_per_epoch = config.scheme.steps_per_epoch(n);
    let total_steps = match config.budget {
        Budget::Steps(s) => s,
        Budget::Epochs(e) => e * steps_per_epoch,
    };
    let dropout = config.dropout_active().then_some(config.dropout.as_slice());

    let mut current = net.clone();
    let mut velocity = GradientBundle::zeros_like(net);
    let mut sampler = Sampler::new(config.scheme, n, config.seed);
    let mut dropout_rng = rng::stream(config.seed, Stream::Dropout);
    let mut batch = Vec::new();
    let mut history = Vec::new();
    let mut sample_log = Vec::new();

    let log = |net: &NetworkSpec, step: usize, with_val: bool, history: &mut Vec<CostRecord>| -> Result<()> {
        let inference;
        let eval_net = match dropout {
            Some(p) => {
                inference = scale_for_inference(net, p)?;
                &inference
            }
            None => net,
        };
        let train_cost = loss::dataset_cost(loss, eval_net, train_data)?;
        if !train_cost.is_finite() {
            return Err(Error::Diverged { step, cost: train_cost });
        }
        let val_cost = match val_data {
            Some(v) if with_val => Some(loss::dataset_cost(loss, eval_net, v)?),
            _ => None,
        };
        history.push(CostRecord { step, train_cost, val_cost });
        Ok(())
    };

    log(&current, 0, true, &mut history)?;
    for step in 0..total_steps {
        let epoch = step / steps_per_epoch;
        let eta = config.lr_schedule.eta_at(step, epoch);
        sampler.next_batch(&mut batch);
        if config.record_samples {
            sample_log.extend_from_slice(&batch);
        }
        let grad = batch_gradient(&current, train_data, &batch, loss, dropout.map(|p| (p, &mut dropout_rng)))?;
        apply_update(&mut current, &grad, eta, config.momentum, &mut velocity);

        let done = step + 1;
        let epoch_end = done % steps_per_epoch == 0;
        let on_stride = done % config.cost_log_stride == 0 || done == total_steps;
        if on_stride || (epoch_end && val_data.is_some()) {
            log(&current, done, epoch_end, &mut history)?;
        }
    }

    let final_net = match dropout {
        Some(p) => scale_for_inference(&current, p)?,
        None => current,
    };
    Ok(TrainReport {
        cost_history: history,
        final_net,
        steps_taken: total_steps,
        sample_log,
    })
}

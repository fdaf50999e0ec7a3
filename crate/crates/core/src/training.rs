//! Adversarial training against one or several perturbation models.
//!
//! The inner maximisation is approximated per example by an attack; the
//! outer step differentiates the loss at the returned points only. Four
//! ways of combining several norms are supported:
//!
//! - `single`: PGD for one norm.
//! - `max`: PGD for each norm independently, train on the highest-loss one.
//! - `avg`: PGD for each norm, train on all copies with the loss averaged.
//! - `msd`: multi steepest descent over the union of balls.
//!
//! Adversarial examples use RNG streams addressed by (epoch, batch,
//! position, norm), so example-parallel generation matches a serial run.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::adversary::{msd, pgd, AttackOutcome, MsdConfig, PerturbationSpec};
use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{build, forward, Classifier, ModelSpec, Network, ParameterSet};
use crate::rng::{derive_seed, stream};
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 1;
const ADVERSARY_STREAM: u64 = 2;
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Clean,
    Single,
    Max,
    Avg,
    Msd,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Clean => "clean",
            Strategy::Single => "single",
            Strategy::Max => "max",
            Strategy::Avg => "avg",
            Strategy::Msd => "msd",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clean" => Strategy::Clean,
            "single" => Strategy::Single,
            "max" => Strategy::Max,
            "avg" => Strategy::Avg,
            "msd" => Strategy::Msd,
            other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    /// Heavy-ball SGD with L2 weight decay added to the gradient.
    Sgd { momentum: f64, weight_decay: f64 },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Piecewise-linear learning rate over (fractional) epochs, constant
/// beyond the first and last breakpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    points: Vec<(f64, f64)>,
}

impl LrSchedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("learning-rate schedule is empty".into()));
        }
        if points.iter().any(|&(e, lr)| !e.is_finite() || !(lr >= 0.0 && lr.is_finite())) {
            return Err(Error::Config("schedule epochs must be finite and rates non-negative".into()));
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("schedule epochs must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn constant(lr: f64) -> Result<Self> {
        Self::new(vec![(0.0, lr)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn at(&self, epoch: f64) -> f64 {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if epoch <= first.0 {
            return first.1;
        }
        if epoch >= last.0 {
            return last.1;
        }
        let i = self.points.partition_point(|&(e, _)| e <= epoch);
        let (e0, l0) = self.points[i - 1];
        if e0 == epoch {
            return l0;
        }
        let (e1, l1) = self.points[i];
        l0 + (l1 - l0) * ((epoch - e0) / (e1 - e0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// One spec per norm; `single` uses the first.
    pub specs: Vec<PerturbationSpec>,
    pub msd_iterations: usize,
    pub msd_restarts: usize,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        for s in &self.specs {
            s.validate()?;
        }
        let need = match self.strategy {
            Strategy::Clean => 0,
            Strategy::Single | Strategy::Avg | Strategy::Msd => 1,
            Strategy::Max => 2,
        };
        if self.specs.len() < need {
            return Err(Error::Config(format!(
                "strategy {} needs at least {need} adversary spec(s), got {}",
                self.strategy,
                self.specs.len()
            )));
        }
        if self.strategy == Strategy::Msd {
            self.msd_config()?;
        }
        Ok(())
    }

    pub fn msd_config(&self) -> Result<MsdConfig> {
        MsdConfig::new(self.specs.clone(), self.msd_iterations, self.msd_restarts)
    }
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub clean_accuracy: f64,
    /// Mean training loss on the strategy's inputs.
    pub adv_loss: f64,
    /// Rate used for the last batch of the epoch.
    pub lr: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// `key=value` record; `with_time` controls the wall-clock field.
    pub fn record(&self, with_time: bool) -> String {
        let mut line = format!(
            "epoch={} clean_acc={:.6} adv_loss={:.6} lr={:e}",
            self.epoch, self.clean_accuracy, self.adv_loss, self.lr
        );
        if with_time {
            line.push_str(&format!(" wall_s={:.3}", self.wall_seconds));
        }
        line
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

/// Optimizer with its running moments.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, params: &ParameterSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            kind,
            step: 0,
            second: zeros.clone(),
            first: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        for (i, (p, g)) in params.tensors_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            match self.kind {
                Optimizer::Sgd {
                    momentum,
                    weight_decay,
                } => {
                    for ((w, &gv), buf) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        let d = gv + weight_decay * *w;
                        *buf = momentum * *buf + d;
                        *w -= lr * *buf;
                    }
                }
                Optimizer::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let bc1 = 1.0 - beta1.powi(self.step);
                    let bc2 = 1.0 - beta2.powi(self.step);
                    for (((w, &gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let d = gv + weight_decay * *w;
                        *mv = beta1 * *mv + (1.0 - beta1) * d;
                        *vv = beta2 * *vv + (1.0 - beta2) * d * d;
                        let denom = vv.sqrt() / bc2.sqrt() + eps;
                        *w -= (lr / bc1) * *mv / denom;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy on a batch and its gradient for every parameter.
pub fn loss_and_param_grads(net: &Network, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = forward(&net.spec, &net.params, &mut tape, xv, true)?;
    let loss = tape.softmax_cross_entropy(out.logits, labels)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let per_param = out
        .params
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
        .collect();
    Ok((value, per_param))
}

fn example_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// Runs `attack` on every example of a batch in parallel, in order.
fn per_example<M, T>(
    model: &M,
    x: &Tensor,
    labels: &[usize],
    seed: u64,
    attack: impl Fn(&M, &Tensor, usize, u64) -> Result<T> + Sync,
) -> Result<Vec<T>>
where
    M: Classifier + ?Sized,
    T: Send,
{
    if x.shape()[0] != labels.len() {
        return Err(Error::Dimension(format!(
            "{} inputs with {} labels",
            x.shape()[0],
            labels.len()
        )));
    }
    (0..labels.len())
        .into_par_iter()
        .map(|i| attack(model, &x.batch_item(i)?, labels[i], example_seed(seed, i)))
        .collect()
}

fn perturbed(x: &Tensor, outcomes: &[AttackOutcome]) -> Result<Tensor> {
    let deltas: Vec<Tensor> = outcomes.iter().map(|o| o.delta.clone()).collect();
    x.add(&Tensor::stack_batch(&deltas)?)
}

/// PGD for one spec on every example; returns `x + delta`.
pub fn adv_example_single<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    labels: &[usize],
    spec: &PerturbationSpec,
    seed: u64,
) -> Result<Tensor> {
    let outcomes = per_example(model, x, labels, seed, |m, xi, yi, s| {
        pgd(m, xi, yi, spec, &mut stream(s, &[0]))
    })?;
    perturbed(x, &outcomes)
}

/// The `max` choice for one example: independent PGD per spec, keeping the
/// highest loss (first on ties). Returns the winner, its index and every
/// candidate loss.
pub fn max_strategy_example<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    y: usize,
    specs: &[PerturbationSpec],
    seed: u64,
) -> Result<(AttackOutcome, usize, Vec<f64>)> {
    let mut best: Option<(AttackOutcome, usize)> = None;
    let mut losses = Vec::with_capacity(specs.len());
    for (p, spec) in specs.iter().enumerate() {
        let out = pgd(model, x, y, spec, &mut stream(seed, &[p as u64]))?;
        losses.push(out.loss);
        if best.as_ref().is_none_or(|(b, _)| out.loss > b.loss) {
            best = Some((out, p));
        }
    }
    let (out, chosen) =
        best.ok_or_else(|| Error::InvalidArgument("max strategy needs adversary specs".into()))?;
    Ok((out, chosen, losses))
}

pub fn adv_example_max<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    labels: &[usize],
    specs: &[PerturbationSpec],
    seed: u64,
) -> Result<Tensor> {
    if specs.len() < 2 {
        return Err(Error::InvalidArgument("max strategy needs at least two specs".into()));
    }
    let outcomes = per_example(model, x, labels, seed, |m, xi, yi, s| {
        max_strategy_example(m, xi, yi, specs, s).map(|(o, _, _)| o)
    })?;
    perturbed(x, &outcomes)
}

/// One perturbed copy of the batch per spec.
pub fn adv_example_avg<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    labels: &[usize],
    specs: &[PerturbationSpec],
    seed: u64,
) -> Result<Vec<Tensor>> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("avg strategy needs adversary specs".into()));
    }
    let per_spec = per_example(model, x, labels, seed, |m, xi, yi, s| {
        specs
            .iter()
            .enumerate()
            .map(|(p, spec)| pgd(m, xi, yi, spec, &mut stream(s, &[p as u64])))
            .collect::<Result<Vec<_>>>()
    })?;
    (0..specs.len())
        .map(|p| {
            let column: Vec<AttackOutcome> = per_spec.iter().map(|row| row[p].clone()).collect();
            perturbed(x, &column)
        })
        .collect()
}

pub fn adv_example_msd<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    labels: &[usize],
    config: &MsdConfig,
    seed: u64,
) -> Result<Tensor> {
    let outcomes = per_example(model, x, labels, seed, |m, xi, yi, s| {
        msd(m, xi, yi, config, &mut stream(s, &[0]))
    })?;
    perturbed(x, &outcomes)
}

/// Fraction of `data` classified correctly, evaluated in chunks.
pub fn accuracy<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk)?;
        let pred = model.predict(&x)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

fn training_inputs(net: &Network, config: &TrainConfig, x: Tensor, y: &[usize], seed: u64) -> Result<Vec<Tensor>> {
    Ok(match config.strategy {
        Strategy::Clean => vec![x],
        Strategy::Single => vec![adv_example_single(net, &x, y, &config.specs[0], seed)?],
        Strategy::Max => vec![adv_example_max(net, &x, y, &config.specs, seed)?],
        Strategy::Avg => adv_example_avg(net, &x, y, &config.specs, seed)?,
        Strategy::Msd => vec![adv_example_msd(net, &x, y, &config.msd_config()?, seed)?],
    })
}

pub fn train(config: &TrainConfig, spec: &ModelSpec, data: &Dataset) -> Result<(ParameterSet, TrainLog)> {
    train_with(config, spec, data, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    config: &TrainConfig,
    spec: &ModelSpec,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ParameterSet, TrainLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if data.example_shape() != spec.input_shape {
        return Err(Error::Dimension(format!(
            "data examples {:?} do not match model input {:?}",
            data.example_shape(),
            spec.input_shape
        )));
    }
    if data.classes() > spec.classes {
        return Err(Error::Index(format!(
            "labels reach {} but the model has {} classes",
            data.classes() - 1,
            spec.classes
        )));
    }
    let mut net = Network::new(spec.clone(), build(spec, config.seed)?)?;
    let mut opt = OptimizerState::new(config.optimizer, &net.params);
    let n = data.len();
    let batches = n.div_ceil(config.batch_size);
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = data.batch(idx)?;
            lr = config.schedule.at(epoch as f64 + (b + 1) as f64 / batches as f64);
            let seed = derive_seed(config.seed, &[ADVERSARY_STREAM, epoch as u64, b as u64]);
            let inputs = training_inputs(&net, config, x, &y, seed)?;
            let copies = inputs.len() as f64;
            let mut total_loss = 0.0;
            let mut total_grads: Option<Vec<Tensor>> = None;
            for input in &inputs {
                let (loss, grads) = loss_and_param_grads(&net, input, &y)?;
                total_loss += loss;
                match &mut total_grads {
                    None => total_grads = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let loss = total_loss / copies;
            let grads: Vec<Tensor> = total_grads
                .expect("at least one input copy")
                .iter()
                .map(|g| g.scale(1.0 / copies))
                .collect();
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    epoch: epoch + 1,
                    batch: b + 1,
                    detail: format!("loss {loss} under strategy {}", config.strategy),
                });
            }
            loss_sum += loss * idx.len() as f64;
            opt.step(&mut net.params, &grads, lr)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            clean_accuracy: accuracy(&net, data)?,
            adv_loss: loss_sum / n as f64,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((net.params, log))
}

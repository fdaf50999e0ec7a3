//! Attacks on a single example.
//!
//! Every attack takes one input `x` with a leading batch extent of one,
//! pixel values in `[0, 1]`, and its true label. The returned
//! [`AttackOutcome`] always satisfies the attack's own norm budget and keeps
//! `x + delta` inside the pixel box.
//!
//! Gradient attacks ([`pgd`], [`fgsm`], [`mim`], [`msd`]) ascend the
//! cross-entropy loss by projected steepest ascent. Restart `0` starts from
//! `delta = 0`; later restarts start from a random point of the ball. Each
//! restart draws its own sub-stream seed from the caller's RNG in order, so
//! the first `R` restarts of a longer run coincide with an `R`-restart run.
//!
//! The gradient-free attacks ([`gaussian_noise_attack`],
//! [`salt_pepper_attack`], [`pointwise_attack`]) only query predictions and
//! losses.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{
    clamp_to_image, project, project_l2, project_linf, random_in_ball, steepest_l1, steepest_l2,
    steepest_linf, BallSpec, NormKind, Norms,
};
use crate::models::Classifier;
use crate::rng::StreamRng;
use crate::tensor::{argmax, Tensor};

/// Budget and schedule of one lp adversary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub ball: BallSpec,
    /// Step size, in the same units as `ball.epsilon`.
    pub alpha: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Range for the number of coordinates moved per l1 step.
    pub k_range: (usize, usize),
    /// Momentum decay, used by [`mim`] only.
    pub momentum: f64,
}

impl PerturbationSpec {
    pub fn new(norm: NormKind, epsilon: f64, alpha: f64, iterations: usize) -> Result<Self> {
        let spec = Self {
            ball: BallSpec::new(norm, epsilon)?,
            alpha,
            iterations,
            restarts: 1,
            k_range: (1, 1),
            momentum: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_k_range(mut self, k1: usize, k2: usize) -> Self {
        self.k_range = (k1, k2);
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.ball.epsilon = epsilon;
        self
    }

    pub fn norm(&self) -> NormKind {
        self.ball.norm
    }

    pub fn validate(&self) -> Result<()> {
        BallSpec::new(self.ball.norm, self.ball.epsilon)?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("step size must be positive, got {}", self.alpha));
        }
        if self.iterations == 0 || self.restarts == 0 {
            return bad("iterations and restarts must be at least 1".into());
        }
        if self.k_range.0 == 0 || self.k_range.0 > self.k_range.1 {
            return bad(format!("bad k range {:?}", self.k_range));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }
}

/// Result of attacking one example.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub delta: Tensor,
    /// Cross-entropy loss at `x + delta`.
    pub loss: f64,
    pub norms: Norms,
    /// Whether `x + delta` is assigned a class other than the label.
    pub misclassified: bool,
    pub restarts_used: usize,
}

impl AttackOutcome {
    /// Misclassification first, then loss. Ties keep `self`.
    fn beats(&self, other: &AttackOutcome) -> bool {
        match (self.misclassified, other.misclassified) {
            (true, false) => true,
            (false, true) => false,
            _ => self.loss > other.loss,
        }
    }
}

fn expect_single(x: &Tensor) -> Result<()> {
    if x.shape().first() != Some(&1) {
        return Err(Error::Dimension(format!(
            "attacks take a single example, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Scores `x + delta`.
pub fn assess<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    y: usize,
    delta: Tensor,
    restarts_used: usize,
) -> Result<AttackOutcome> {
    let logits = model.logits(&x.add(&delta)?)?;
    let loss = crate::autodiff::cross_entropy(&logits, &[y])?;
    let misclassified = argmax(logits.data()) != y;
    Ok(AttackOutcome {
        norms: Norms::of(&delta),
        delta,
        loss,
        misclassified,
        restarts_used,
    })
}

fn is_misclassified<M: Classifier + ?Sized>(model: &M, x: &Tensor, delta: &Tensor, y: usize) -> Result<bool> {
    Ok(model.predict(&x.add(delta)?)?[0] != y)
}

/// One projected steepest-ascent step for `spec` from `delta`, given the loss
/// gradient at `x + delta`: `clamp_to_image(P(delta + v(delta)))`.
pub fn ascent_step<R: Rng + ?Sized>(
    spec: &PerturbationSpec,
    x: &Tensor,
    delta: &Tensor,
    grad: &Tensor,
    rng: &mut R,
) -> Result<Tensor> {
    let v = match spec.ball.norm {
        NormKind::Linf => steepest_linf(grad, spec.alpha),
        NormKind::L2 => steepest_l2(grad, spec.alpha),
        NormKind::L1 => steepest_l1(grad, spec.alpha, spec.k_range, &x.add(delta)?, rng),
    };
    let moved = delta.add(&v)?;
    clamp_to_image(x, &project(spec.ball.norm, &moved, spec.ball.epsilon))
}

fn initial_delta<R: Rng + ?Sized>(x: &Tensor, ball: &BallSpec, restart: usize, rng: &mut R) -> Result<Tensor> {
    if restart == 0 {
        Ok(Tensor::zeros(x.shape()))
    } else {
        clamp_to_image(x, &random_in_ball(ball, x.shape(), rng))
    }
}

fn keep_best(best: &mut Option<AttackOutcome>, candidate: AttackOutcome) {
    match best {
        Some(current) if !candidate.beats(current) => {}
        _ => *best = Some(candidate),
    }
}

fn finish(best: Option<AttackOutcome>, restarts: usize) -> AttackOutcome {
    let mut out = best.expect("at least one restart");
    out.restarts_used = restarts;
    out
}

/// Projected steepest ascent under a single norm, with restarts.
pub fn pgd<M, R>(model: &M, x: &Tensor, y: usize, spec: &PerturbationSpec, rng: &mut R) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    spec.validate()?;
    expect_single(x)?;
    let mut best = None;
    for restart in 0..spec.restarts {
        let mut stream = StreamRng::seed_from_u64(rng.next_u64());
        let mut delta = initial_delta(x, &spec.ball, restart, &mut stream)?;
        for _ in 0..spec.iterations {
            let (_, grad) = model.loss_and_input_grad(&x.add(&delta)?, &[y])?;
            delta = ascent_step(spec, x, &delta, &grad, &mut stream)?;
        }
        keep_best(&mut best, assess(model, x, y, delta, restart + 1)?);
    }
    Ok(finish(best, spec.restarts))
}

/// Fast gradient sign method: one l-infinity step of size `epsilon`.
pub fn fgsm<M: Classifier + ?Sized>(model: &M, x: &Tensor, y: usize, epsilon: f64) -> Result<AttackOutcome> {
    expect_single(x)?;
    BallSpec::new(NormKind::Linf, epsilon)?;
    let (_, grad) = model.loss_and_input_grad(x, &[y])?;
    let step = project_linf(&steepest_linf(&grad, epsilon), epsilon);
    assess(model, x, y, clamp_to_image(x, &step)?, 1)
}

/// `g <- mu * g + grad / ||grad||_1`. A zero gradient contributes nothing.
pub fn accumulate_momentum(g: &mut Tensor, grad: &Tensor, mu: f64) -> Result<()> {
    let l1 = NormKind::L1.norm(grad.data());
    *g = g.zip_map(grad, |gv, dv| {
        let unit = if l1 > 0.0 { dv / l1 } else { 0.0 };
        mu * gv + unit
    })?;
    Ok(())
}

/// Momentum iterative method (l-infinity only).
pub fn mim<M, R>(model: &M, x: &Tensor, y: usize, spec: &PerturbationSpec, rng: &mut R) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    spec.validate()?;
    expect_single(x)?;
    if spec.ball.norm != NormKind::Linf {
        return Err(Error::InvalidArgument("MIM is defined for l-infinity only".into()));
    }
    let eps = spec.ball.epsilon;
    let mut best = None;
    for restart in 0..spec.restarts {
        let mut stream = StreamRng::seed_from_u64(rng.next_u64());
        let mut delta = initial_delta(x, &spec.ball, restart, &mut stream)?;
        let mut g = Tensor::zeros(x.shape());
        for _ in 0..spec.iterations {
            let (_, grad) = model.loss_and_input_grad(&x.add(&delta)?, &[y])?;
            accumulate_momentum(&mut g, &grad, spec.momentum)?;
            let moved = delta.add(&steepest_linf(&g, spec.alpha))?;
            delta = clamp_to_image(x, &project_linf(&moved, eps))?;
        }
        keep_best(&mut best, assess(model, x, y, delta, restart + 1)?);
    }
    Ok(finish(best, spec.restarts))
}

/// Settings for multi steepest descent over a union of balls.
#[derive(Clone, Debug, PartialEq)]
pub struct MsdConfig {
    /// At most one spec per norm; each spec's `iterations` and `restarts`
    /// are ignored in favour of the fields below.
    pub specs: Vec<PerturbationSpec>,
    pub iterations: usize,
    pub restarts: usize,
}

impl MsdConfig {
    pub fn new(specs: Vec<PerturbationSpec>, iterations: usize, restarts: usize) -> Result<Self> {
        let config = Self {
            specs,
            iterations,
            restarts,
        };
        config.validated_specs()?;
        Ok(config)
    }

    /// Specs sorted into the canonical norm order, after validation.
    fn validated_specs(&self) -> Result<Vec<PerturbationSpec>> {
        if self.specs.is_empty() {
            return Err(Error::InvalidArgument("MSD needs at least one norm".into()));
        }
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument(
                "MSD iterations and restarts must be at least 1".into(),
            ));
        }
        let mut specs = self.specs.clone();
        for s in &specs {
            s.validate()?;
        }
        specs.sort_by_key(|s| s.ball.norm);
        if specs.windows(2).any(|w| w[0].ball.norm == w[1].ball.norm) {
            return Err(Error::InvalidArgument("MSD takes one spec per norm".into()));
        }
        Ok(specs)
    }
}

/// One MSD iteration: the loss of each norm's candidate and the pick.
#[derive(Clone, Debug, PartialEq)]
pub struct MsdStep {
    pub candidate_losses: Vec<(NormKind, f64)>,
    pub chosen: usize,
}

/// Multi steepest descent.
///
/// Each iteration takes one projected steepest-ascent step per norm from the
/// current `delta` and keeps the candidate with the highest loss (first
/// maximum in the order linf, l2, l1). Later restarts initialise in the
/// balls in turn.
pub fn msd<M, R>(model: &M, x: &Tensor, y: usize, config: &MsdConfig, rng: &mut R) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    msd_run(model, x, y, config, rng, None)
}

/// [`msd`] that also records every iteration, one list per restart.
pub fn msd_traced<M, R>(
    model: &M,
    x: &Tensor,
    y: usize,
    config: &MsdConfig,
    rng: &mut R,
    trace: &mut Vec<Vec<MsdStep>>,
) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    msd_run(model, x, y, config, rng, Some(trace))
}

fn msd_run<M, R>(
    model: &M,
    x: &Tensor,
    y: usize,
    config: &MsdConfig,
    rng: &mut R,
    mut trace: Option<&mut Vec<Vec<MsdStep>>>,
) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    let specs = config.validated_specs()?;
    expect_single(x)?;
    let mut best = None;
    for restart in 0..config.restarts {
        let mut stream = StreamRng::seed_from_u64(rng.next_u64());
        let init_ball = specs[restart.saturating_sub(1) % specs.len()].ball;
        let mut delta = initial_delta(x, &init_ball, restart, &mut stream)?;
        let mut steps = Vec::new();
        for _ in 0..config.iterations {
            let (_, grad) = model.loss_and_input_grad(&x.add(&delta)?, &[y])?;
            let mut chosen = 0;
            let mut chosen_delta = None;
            let mut losses = Vec::with_capacity(specs.len());
            for (i, spec) in specs.iter().enumerate() {
                let candidate = ascent_step(spec, x, &delta, &grad, &mut stream)?;
                let loss = model.loss(&x.add(&candidate)?, &[y])?;
                if i == 0 || loss > losses[chosen] {
                    chosen = i;
                    chosen_delta = Some(candidate);
                }
                losses.push(loss);
            }
            delta = chosen_delta.expect("at least one spec");
            if trace.is_some() {
                steps.push(MsdStep {
                    candidate_losses: specs.iter().map(|s| s.ball.norm).zip(losses).collect(),
                    chosen,
                });
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(steps);
        }
        keep_best(&mut best, assess(model, x, y, delta, restart + 1)?);
    }
    Ok(finish(best, config.restarts))
}

/// Number of scales tried per trial by the noise-based attacks.
pub const LADDER_STEPS: usize = 10;

/// Additive Gaussian noise at `LADDER_STEPS` geometrically spaced l2 radii
/// from `epsilon / 10` to `epsilon`, projected onto the l2 ball and the
/// pixel box. Returns the first misclassifying sample, else the sample with
/// the highest loss.
pub fn gaussian_noise_attack<M, R>(model: &M, x: &Tensor, y: usize, epsilon: f64, trials: usize, rng: &mut R) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    expect_single(x)?;
    BallSpec::new(NormKind::L2, epsilon)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let n = x.len() as f64;
    let mut best: Option<AttackOutcome> = None;
    for trial in 0..trials {
        for j in 0..LADDER_STEPS {
            let radius = epsilon * 10f64.powf((j as f64 - (LADDER_STEPS - 1) as f64) / (LADDER_STEPS - 1) as f64);
            let normal = Normal::new(0.0, radius / n.sqrt()).expect("finite scale");
            let noise = Tensor::new(x.shape().to_vec(), (0..x.len()).map(|_| normal.sample(&mut *rng)).collect())?;
            let delta = clamp_to_image(x, &project_l2(&noise, epsilon))?;
            let candidate = assess(model, x, y, delta, trial + 1)?;
            if candidate.misclassified {
                return Ok(candidate);
            }
            if best.as_ref().is_none_or(|b| candidate.loss > b.loss) {
                best = Some(candidate);
            }
        }
    }
    Ok(finish(best, trials))
}

/// Sets `ceil(fraction * n)` randomly chosen pixels (at least one) to 0 or 1
/// with equal probability, returning the perturbation.
pub fn salt_pepper_candidate<R: Rng + ?Sized>(x: &Tensor, fraction: f64, rng: &mut R) -> Tensor {
    let n = x.len();
    let count = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut delta = Tensor::zeros(x.shape());
    let xd = x.data();
    let dd = delta.data_mut();
    for i in index::sample(rng, n, count) {
        let target = if rng.random::<bool>() { 1.0 } else { 0.0 };
        dd[i] = target - xd[i];
    }
    delta
}

/// Flip fractions from one pixel up to every pixel, geometrically spaced.
fn flip_fractions(n: usize) -> impl Iterator<Item = f64> {
    let lo = 1.0 / n as f64;
    (0..LADDER_STEPS).map(move |j| lo.powf(1.0 - j as f64 / (LADDER_STEPS - 1) as f64))
}

/// First misclassifying salt-and-pepper sample along the fraction ladder.
fn salt_pepper_search<M, R>(model: &M, x: &Tensor, y: usize, rng: &mut R) -> Result<Option<Tensor>>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    for fraction in flip_fractions(x.len()) {
        let delta = salt_pepper_candidate(x, fraction, rng);
        if is_misclassified(model, x, &delta, y)? {
            return Ok(Some(delta));
        }
    }
    Ok(None)
}

fn perturbed_coords(delta: &Tensor) -> Vec<usize> {
    (0..delta.len()).filter(|&i| delta.data()[i] != 0.0).collect()
}

fn clean_outcome<M: Classifier + ?Sized>(model: &M, x: &Tensor, y: usize, restarts: usize) -> Result<AttackOutcome> {
    assess(model, x, y, Tensor::zeros(x.shape()), restarts)
}

/// Salt-and-pepper noise at increasing flip fractions. The first
/// misclassifying sample of a trial is thinned greedily, restoring pixels
/// in random order while the misclassification holds. Succeeds when the
/// thinned perturbation fits in the l1 budget; otherwise the clean point is
/// returned.
pub fn salt_pepper_attack<M, R>(model: &M, x: &Tensor, y: usize, epsilon_l1: f64, trials: usize, rng: &mut R) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    expect_single(x)?;
    BallSpec::new(NormKind::L1, epsilon_l1)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let clean = clean_outcome(model, x, y, 1)?;
    if clean.misclassified {
        return Ok(clean);
    }
    for trial in 0..trials {
        let Some(mut delta) = salt_pepper_search(model, x, y, rng)? else {
            continue;
        };
        let mut coords = perturbed_coords(&delta);
        coords.shuffle(rng);
        for i in coords {
            let saved = delta.data()[i];
            delta.data_mut()[i] = 0.0;
            if !is_misclassified(model, x, &delta, y)? {
                delta.data_mut()[i] = saved;
            }
        }
        if NormKind::L1.norm(delta.data()) <= epsilon_l1 {
            return assess(model, x, y, delta, trial + 1);
        }
    }
    clean_outcome(model, x, y, trials)
}

/// Decision-based pointwise attack.
///
/// Starts from a misclassifying salt-and-pepper sample and sweeps the
/// perturbed pixels in a fresh random order, resetting each one to its clean
/// value whenever the example stays misclassified. Sweeps repeat until one
/// changes nothing, so the final perturbation is minimal with respect to
/// single-pixel resets. Returns the successful restart with the smallest l1
/// norm, or the clean point when no restart fits the budget.
pub fn pointwise_attack<M, R>(model: &M, x: &Tensor, y: usize, epsilon_l1: f64, restarts: usize, rng: &mut R) -> Result<AttackOutcome>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    expect_single(x)?;
    BallSpec::new(NormKind::L1, epsilon_l1)?;
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let clean = clean_outcome(model, x, y, 1)?;
    if clean.misclassified {
        return Ok(clean);
    }
    let mut best: Option<AttackOutcome> = None;
    for restart in 0..restarts {
        let mut stream = StreamRng::seed_from_u64(rng.next_u64());
        let Some(mut delta) = salt_pepper_search(model, x, y, &mut stream)? else {
            continue;
        };
        delta = minimize_by_resets(model, x, y, delta, &mut stream)?;
        let l1 = NormKind::L1.norm(delta.data());
        if l1 <= epsilon_l1 && best.as_ref().is_none_or(|b| l1 < b.norms.l1) {
            best = Some(assess(model, x, y, delta, restart + 1)?);
        }
    }
    match best {
        Some(b) => Ok(finish(Some(b), restarts)),
        None => clean_outcome(model, x, y, restarts),
    }
}

/// Repeated reset sweeps of the pointwise attack on a misclassifying `delta`.
pub fn minimize_by_resets<M, R>(model: &M, x: &Tensor, y: usize, mut delta: Tensor, rng: &mut R) -> Result<Tensor>
where
    M: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    loop {
        let mut coords = perturbed_coords(&delta);
        coords.shuffle(rng);
        let mut changed = false;
        for i in coords {
            let saved = delta.data()[i];
            delta.data_mut()[i] = 0.0;
            if is_misclassified(model, x, &delta, y)? {
                changed = true;
            } else {
                delta.data_mut()[i] = saved;
            }
        }
        if !changed {
            return Ok(delta);
        }
    }
}

/// Seed source for code that needs an RNG only to hand sub-stream seeds on.
pub fn seed_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, ModelSpec, Network};

    fn tiny_net(seed: u64) -> Network {
        let spec = ModelSpec::mlp([1, 1, 4], vec![8], 3);
        Network::new(spec.clone(), build(&spec, seed).unwrap()).unwrap()
    }

    fn point() -> Tensor {
        Tensor::new(vec![1, 1, 1, 4], vec![0.2, 0.7, 0.5, 0.9]).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(PerturbationSpec::new(NormKind::Linf, 0.3, 0.0, 10).is_err());
        assert!(PerturbationSpec::new(NormKind::Linf, 0.3, 0.1, 0).is_err());
        let s = PerturbationSpec::new(NormKind::L1, 1.0, 0.1, 3).unwrap();
        assert!(s.with_k_range(3, 2).validate().is_err());
        assert!(s.with_momentum(1.0).validate().is_err());
    }

    #[test]
    fn tiny_epsilon_pgd_is_clean() {
        let net = tiny_net(1);
        let x = point();
        let spec = PerturbationSpec::new(NormKind::Linf, 1e-12, 1e-12, 5).unwrap();
        let out = pgd(&net, &x, 0, &spec, &mut seed_rng(0)).unwrap();
        assert!(out.norms.linf <= 1e-12);
        let clean_wrong = net.predict(&x).unwrap()[0] != 0;
        assert_eq!(out.misclassified, clean_wrong);
    }

    #[test]
    fn msd_rejects_empty_and_duplicates() {
        assert!(MsdConfig::new(vec![], 5, 1).is_err());
        let s = PerturbationSpec::new(NormKind::L2, 1.0, 0.1, 3).unwrap();
        assert!(MsdConfig::new(vec![s, s], 5, 1).is_err());
    }

    #[test]
    fn mim_rejects_other_norms() {
        let net = tiny_net(2);
        let spec = PerturbationSpec::new(NormKind::L2, 1.0, 0.1, 3).unwrap();
        assert!(mim(&net, &point(), 0, &spec, &mut seed_rng(0)).is_err());
    }

    #[test]
    fn salt_pepper_full_fraction() {
        let x = Tensor::full(&[1, 1, 4, 4], 0.5);
        let d = salt_pepper_candidate(&x, 1.0, &mut seed_rng(3));
        assert!(d.data().iter().all(|v| v.abs() == 0.5));
        assert_eq!(NormKind::L1.norm(d.data()), 8.0);
    }

    #[test]
    fn gaussian_zero_budget() {
        let net = tiny_net(4);
        let out = gaussian_noise_attack(&net, &point(), 1, 0.0, 2, &mut seed_rng(0)).unwrap();
        assert!(out.delta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_ladder_spans_one_pixel_to_all() {
        let f: Vec<f64> = flip_fractions(100).collect();
        assert!((f[0] - 0.01).abs() < 1e-15);
        assert!((f[LADDER_STEPS - 1] - 1.0).abs() < 1e-15);
        assert!(f.windows(2).all(|w| w[0] < w[1]));
    }
}

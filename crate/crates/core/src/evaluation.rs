//! Union worst-case evaluation.
//!
//! Every example is attacked by every member of an [`AttackSuite`]. An
//! attack succeeds on an example when the example is already misclassified,
//! or when the attack returns a misclassifying perturbation that passes a
//! post-hoc budget and pixel-box check. An example counts as robust for a
//! norm group (or for the union) only if no attack in that set succeeds.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::adversary::{
    fgsm, gaussian_noise_attack, mim, pgd, pointwise_attack, salt_pepper_attack, AttackOutcome, PerturbationSpec,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{BallSpec, NormKind};
use crate::models::{Classifier, ModelSpec, ParameterSet};
use crate::rng::{derive_seed, stream};
use crate::tensor::{argmax, Tensor};

/// Relative slack allowed on `||delta|| <= epsilon` when scoring.
pub const BUDGET_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 10.0;

const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum Attack {
    Pgd(PerturbationSpec),
    Fgsm { epsilon: f64 },
    /// Momentum iterative method (l-infinity).
    Mim(PerturbationSpec),
    GaussianNoise { epsilon: f64, trials: usize },
    SaltPepper { epsilon: f64, trials: usize },
    Pointwise { epsilon: f64, restarts: usize },
}

impl Attack {
    /// The norm group the attack is scored in.
    pub fn group(&self) -> NormKind {
        match self {
            Attack::Pgd(s) | Attack::Mim(s) => s.norm(),
            Attack::Fgsm { .. } => NormKind::Linf,
            Attack::GaussianNoise { .. } => NormKind::L2,
            Attack::SaltPepper { .. } | Attack::Pointwise { .. } => NormKind::L1,
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Attack::Pgd(s) | Attack::Mim(s) => s.ball.epsilon,
            Attack::Fgsm { epsilon }
            | Attack::GaussianNoise { epsilon, .. }
            | Attack::SaltPepper { epsilon, .. }
            | Attack::Pointwise { epsilon, .. } => *epsilon,
        }
    }

    pub fn budget(&self) -> BallSpec {
        BallSpec {
            norm: self.group(),
            epsilon: self.epsilon(),
        }
    }

    pub fn with_epsilon(&self, eps: f64) -> Attack {
        let mut out = self.clone();
        match &mut out {
            Attack::Pgd(s) | Attack::Mim(s) => *s = s.with_epsilon(eps),
            Attack::Fgsm { epsilon }
            | Attack::GaussianNoise { epsilon, .. }
            | Attack::SaltPepper { epsilon, .. }
            | Attack::Pointwise { epsilon, .. } => *epsilon = eps,
        }
        out
    }

    pub fn run<M, R>(&self, model: &M, x: &Tensor, y: usize, rng: &mut R) -> Result<AttackOutcome>
    where
        M: Classifier + ?Sized,
        R: Rng + ?Sized,
    {
        match self {
            Attack::Pgd(s) => pgd(model, x, y, s, rng),
            Attack::Fgsm { epsilon } => fgsm(model, x, y, *epsilon),
            Attack::Mim(s) => mim(model, x, y, s, rng),
            Attack::GaussianNoise { epsilon, trials } => gaussian_noise_attack(model, x, y, *epsilon, *trials, rng),
            Attack::SaltPepper { epsilon, trials } => salt_pepper_attack(model, x, y, *epsilon, *trials, rng),
            Attack::Pointwise { epsilon, restarts } => pointwise_attack(model, x, y, *epsilon, *restarts, rng),
        }
    }

    /// Whether `outcome` counts as a successful attack on `x`.
    pub fn scores_success(&self, x: &Tensor, outcome: &AttackOutcome) -> bool {
        let in_box = x
            .data()
            .iter()
            .zip(outcome.delta.data())
            .all(|(&xi, &di)| (0.0..=1.0).contains(&(xi + di)));
        outcome.misclassified && in_box && self.budget().contains(&outcome.delta, BUDGET_TOLERANCE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub id: String,
    pub attack: Attack,
}

/// Named attacks, each scored in exactly one norm group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttackSuite {
    entries: Vec<SuiteEntry>,
}

impl AttackSuite {
    pub fn new(entries: Vec<SuiteEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Config(format!("duplicate attack id {:?}", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The default suite: l-inf {PGD, FGSM, MIM}, l2 {PGD, Gaussian noise},
    /// l1 {PGD, salt-and-pepper, pointwise}, restricted to the norms in
    /// `specs` (one evaluation-strength PGD spec per norm).
    pub fn standard(specs: &[PerturbationSpec], trials: usize, pointwise_restarts: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for s in specs {
            let eps = s.ball.epsilon;
            let mut push = |name: &str, attack: Attack| {
                entries.push(SuiteEntry {
                    id: format!("{}.{name}", s.norm()),
                    attack,
                })
            };
            push("pgd", Attack::Pgd(*s));
            match s.norm() {
                NormKind::Linf => {
                    push("fgsm", Attack::Fgsm { epsilon: eps });
                    push("mim", Attack::Mim(*s));
                }
                NormKind::L2 => push("gaussian", Attack::GaussianNoise { epsilon: eps, trials }),
                NormKind::L1 => {
                    push("salt_pepper", Attack::SaltPepper { epsilon: eps, trials });
                    push(
                        "pointwise",
                        Attack::Pointwise {
                            epsilon: eps,
                            restarts: pointwise_restarts,
                        },
                    );
                }
            }
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[SuiteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Attack> {
        self.entries.iter().find(|e| e.id == id).map(|e| &e.attack)
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// The sub-suite with the given ids, in the given order.
    pub fn select(&self, ids: &[&str]) -> Result<Self> {
        let entries = ids
            .iter()
            .map(|id| {
                self.entries
                    .iter()
                    .find(|e| e.id == *id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown attack id {id:?}; known: {}", self.ids().join(", "))))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    /// Members of one norm group.
    pub fn group(&self, norm: NormKind) -> Self {
        Self {
            entries: self.entries.iter().filter(|e| e.attack.group() == norm).cloned().collect(),
        }
    }

    pub fn with_epsilon(&self, eps: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| SuiteEntry {
                    id: e.id.clone(),
                    attack: e.attack.with_epsilon(eps),
                })
                .collect(),
        }
    }
}

/// Accuracies under a suite together with the success bitmap they derive from.
#[derive(Clone, Debug, PartialEq)]
pub struct UnionReport {
    pub attack_ids: Vec<String>,
    pub attack_groups: Vec<NormKind>,
    pub clean_correct: Vec<bool>,
    /// `success[example][attack]`.
    pub success: Vec<Vec<bool>>,
    pub clean_accuracy: f64,
    pub attack_accuracy: Vec<f64>,
    /// `None` for groups without attacks.
    pub group_accuracy: Vec<(NormKind, Option<f64>)>,
    pub union_accuracy: f64,
}

impl UnionReport {
    /// Assembles a report; clean misclassifications are folded into every
    /// attack's column.
    pub fn from_bitmap(
        attack_ids: Vec<String>,
        attack_groups: Vec<NormKind>,
        clean_correct: Vec<bool>,
        success: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let n = clean_correct.len();
        let a = attack_ids.len();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot report on zero examples".into()));
        }
        if attack_groups.len() != a || success.len() != n || success.iter().any(|row| row.len() != a) {
            return Err(Error::Dimension(format!(
                "bitmap is not {n} x {a} or groups do not match attacks"
            )));
        }
        let success: Vec<Vec<bool>> = success
            .into_iter()
            .zip(&clean_correct)
            .map(|(row, &ok)| row.into_iter().map(|s| s || !ok).collect())
            .collect();
        let fraction = |robust: &dyn Fn(usize) -> bool| (0..n).filter(|&i| robust(i)).count() as f64 / n as f64;
        let clean_accuracy = fraction(&|i| clean_correct[i]);
        let attack_accuracy = (0..a).map(|j| fraction(&|i| !success[i][j])).collect();
        let group_accuracy = NormKind::ALL
            .iter()
            .map(|&g| {
                let members: Vec<usize> = (0..a).filter(|&j| attack_groups[j] == g).collect();
                let acc = (!members.is_empty())
                    .then(|| fraction(&|i| clean_correct[i] && members.iter().all(|&j| !success[i][j])));
                (g, acc)
            })
            .collect();
        let union_accuracy = fraction(&|i| clean_correct[i] && success[i].iter().all(|s| !s));
        Ok(Self {
            attack_ids,
            attack_groups,
            clean_correct,
            success,
            clean_accuracy,
            attack_accuracy,
            group_accuracy,
            union_accuracy,
        })
    }

    pub fn examples(&self) -> usize {
        self.clean_correct.len()
    }

    pub fn group(&self, norm: NormKind) -> Option<f64> {
        self.group_accuracy.iter().find(|(g, _)| *g == norm).and_then(|(_, a)| *a)
    }

    pub fn attack(&self, id: &str) -> Option<f64> {
        self.attack_ids.iter().position(|a| a == id).map(|j| self.attack_accuracy[j])
    }

    /// Checks the accuracy ordering and that rebuilding from the bitmap is
    /// the identity.
    pub fn verify(&self) -> Result<()> {
        let rebuilt = Self::from_bitmap(
            self.attack_ids.clone(),
            self.attack_groups.clone(),
            self.clean_correct.clone(),
            self.success.clone(),
        )?;
        if rebuilt != *self {
            return Err(Error::Invariant("report differs from its own bitmap".into()));
        }
        if self.union_accuracy > self.clean_accuracy {
            return Err(Error::Invariant("union accuracy exceeds clean accuracy".into()));
        }
        for (g, acc) in &self.group_accuracy {
            let Some(acc) = acc else { continue };
            if self.union_accuracy > *acc {
                return Err(Error::Invariant(format!("union accuracy exceeds {g} group accuracy")));
            }
            for (j, _) in self.attack_groups.iter().enumerate().filter(|(_, ag)| *ag == g) {
                if *acc > self.attack_accuracy[j] {
                    return Err(Error::Invariant(format!(
                        "{g} group accuracy exceeds member {}",
                        self.attack_ids[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Human-readable summary: clean row, per-attack rows, per-group rows
    /// and the union row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:<6} {:>9}", "attack", "group", "accuracy");
        let _ = writeln!(out, "{:<20} {:<6} {:>8.2}%", "clean", "-", 100.0 * self.clean_accuracy);
        for ((id, g), acc) in self.attack_ids.iter().zip(&self.attack_groups).zip(&self.attack_accuracy) {
            let _ = writeln!(out, "{id:<20} {:<6} {:>8.2}%", g.name(), 100.0 * acc);
        }
        for (g, acc) in &self.group_accuracy {
            if let Some(acc) = acc {
                let _ = writeln!(out, "{:<20} {:<6} {:>8.2}%", format!("all {g} attacks"), g.name(), 100.0 * acc);
            }
        }
        if !self.attack_ids.is_empty() {
            let _ = writeln!(out, "{:<20} {:<6} {:>8.2}%", "All attacks", "union", 100.0 * self.union_accuracy);
        }
        out
    }

    /// One `key=value` record per line, in the same order as [`Self::table`].
    pub fn records(&self) -> Vec<String> {
        let mut out = vec![format!(
            "kind=clean examples={} accuracy={:.6}",
            self.examples(),
            self.clean_accuracy
        )];
        for ((id, g), acc) in self.attack_ids.iter().zip(&self.attack_groups).zip(&self.attack_accuracy) {
            out.push(format!("kind=attack id={id} group={g} accuracy={acc:.6}"));
        }
        for (g, acc) in &self.group_accuracy {
            if let Some(acc) = acc {
                out.push(format!("kind=group group={g} accuracy={acc:.6}"));
            }
        }
        if !self.attack_ids.is_empty() {
            out.push(format!("kind=union accuracy={:.6}", self.union_accuracy));
        }
        out
    }
}

/// Per-example predicted labels.
pub fn predictions<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let (x, _) = data.batch(chunk)?;
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

fn clean_correctness<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<Vec<bool>> {
    let classes = model_classes(model, data)?;
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Index(format!("label {bad} out of range")));
    }
    Ok(predictions(model, data)?
        .iter()
        .zip(&data.labels)
        .map(|(p, y)| p == y)
        .collect())
}

fn model_classes<M: Classifier + ?Sized>(model: &M, data: &Dataset) -> Result<usize> {
    let (x, _) = data.example(0)?;
    Ok(model.logits(&x)?.len())
}

/// Stream for one (example, attack, grid point) cell. A one-point curve
/// uses the same streams as [`evaluate`].
fn cell_seed(seed: u64, example: usize, attack: usize, grid: usize) -> u64 {
    derive_seed(seed, &[example as u64, attack as u64, grid as u64])
}

fn attack_example<M: Classifier + ?Sized>(
    model: &M,
    attack: &Attack,
    x: &Tensor,
    y: usize,
    seed: u64,
) -> Result<bool> {
    let outcome = attack.run(model, x, y, &mut stream(seed, &[]))?;
    Ok(attack.scores_success(x, &outcome))
}

/// Runs the whole suite over `data` and returns the verified report.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, data: &Dataset, suite: &AttackSuite, seed: u64) -> Result<UnionReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let clean = clean_correctness(model, data)?;
    let success = (0..data.len())
        .into_par_iter()
        .map(|i| {
            if !clean[i] {
                return Ok(vec![true; suite.len()]);
            }
            let (x, y) = data.example(i)?;
            suite
                .entries()
                .iter()
                .enumerate()
                .map(|(a, e)| attack_example(model, &e.attack, &x, y, cell_seed(seed, i, a, 0)))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let report = UnionReport::from_bitmap(
        suite.ids(),
        suite.entries().iter().map(|e| e.attack.group()).collect(),
        clean,
        success,
    )?;
    report.verify()?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub accuracy: f64,
}

/// Accuracy against a family of attacks as a function of the budget.
///
/// For each example the smallest grid index at which any attack succeeds is
/// found by scanning upwards; success is then assumed for all larger
/// budgets, so the curve is non-increasing by construction.
pub fn robustness_curve<M: Classifier + ?Sized>(
    model: &M,
    data: &Dataset,
    family: &AttackSuite,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("epsilon grid is empty".into()));
    }
    if grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "epsilon grid must be non-negative and strictly increasing".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let clean = clean_correctness(model, data)?;
    let first_success: Vec<Option<usize>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            if !clean[i] {
                return Ok(Some(0));
            }
            let (x, y) = data.example(i)?;
            for (j, &eps) in grid.iter().enumerate() {
                for (a, e) in family.entries().iter().enumerate() {
                    if attack_example(model, &e.attack.with_epsilon(eps), &x, y, cell_seed(seed, i, a, j))? {
                        return Ok(Some(j));
                    }
                }
            }
            Ok(None)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    let curve: Vec<CurvePoint> = grid
        .iter()
        .enumerate()
        .map(|(j, &epsilon)| CurvePoint {
            epsilon,
            accuracy: first_success.iter().filter(|s| s.is_none_or(|k| k > j)).count() as f64 / n,
        })
        .collect();
    if curve.windows(2).any(|w| w[1].accuracy > w[0].accuracy) {
        return Err(Error::Invariant("robustness curve increased".into()));
    }
    Ok(curve)
}

/// Two-column CSV with a header.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epsilon,accuracy\n");
    for p in curve {
        let _ = writeln!(out, "{},{:.6}", p.epsilon, p.accuracy);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterReport {
    pub ratios: Vec<f64>,
    pub threshold: f64,
    pub flagged: usize,
}

/// Dominance ratio `max|w| / (sum|w| - max|w| + tiny)` of one filter.
pub fn dominance_ratio(weights: &[f64]) -> f64 {
    let abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let max = abs[argmax(&abs)];
    let total: f64 = abs.iter().sum();
    max / (total - max + 1e-12)
}

/// Ratios for every first-layer filter; errors for non-convolutional models.
pub fn filter_sparsity_report(spec: &ModelSpec, params: &ParameterSet, threshold: f64) -> Result<FilterReport> {
    if !spec.is_convolutional() {
        return Err(Error::InvalidArgument(
            "filter inspection needs a convolutional first layer; this model is an MLP".into(),
        ));
    }
    let w = params
        .get("conv1.weight")
        .ok_or_else(|| Error::InvalidArgument("checkpoint has no conv1.weight".into()))?;
    let filters = w.shape()[0];
    let per = w.len() / filters;
    let ratios: Vec<f64> = w.data().chunks(per).map(dominance_ratio).collect();
    let flagged = ratios.iter().filter(|&&r| r > threshold).count();
    Ok(FilterReport {
        ratios,
        threshold,
        flagged,
    })
}

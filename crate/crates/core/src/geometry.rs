//! Norm balls: norms, steepest-ascent directions, Euclidean projections,
//! uniform-ish sampling, and the `[0, 1]` pixel box.
//!
//! All functions are pure apart from an explicitly passed RNG.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The three supported perturbation norms, in their canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NormKind {
    Linf,
    L2,
    L1,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::Linf, NormKind::L2, NormKind::L1];

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Linf => "linf",
            NormKind::L2 => "l2",
            NormKind::L1 => "l1",
        }
    }

    pub fn norm(self, values: &[f64]) -> f64 {
        match self {
            NormKind::Linf => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            NormKind::L2 => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::L1 => values.iter().map(|v| v.abs()).sum(),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf" => Ok(NormKind::Linf),
            "l2" => Ok(NormKind::L2),
            "l1" => Ok(NormKind::L1),
            other => Err(Error::Config(format!("unknown norm {other:?}"))),
        }
    }
}

/// A closed norm ball of radius `epsilon` around the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSpec {
    pub norm: NormKind,
    pub epsilon: f64,
}

impl BallSpec {
    pub fn new(norm: NormKind, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        Ok(Self { norm, epsilon })
    }

    /// Whether `delta` lies in the ball, with relative slack `rel_tol`.
    pub fn contains(&self, delta: &Tensor, rel_tol: f64) -> bool {
        self.norm.norm(delta.data()) <= self.epsilon * (1.0 + rel_tol)
    }

    pub fn project(&self, delta: &Tensor) -> Tensor {
        project(self.norm, delta, self.epsilon)
    }
}

/// All three norms of a perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub linf: f64,
    pub l2: f64,
    pub l1: f64,
}

impl Norms {
    pub fn of(delta: &Tensor) -> Self {
        let d = delta.data();
        Self {
            linf: NormKind::Linf.norm(d),
            l2: NormKind::L2.norm(d),
            l1: NormKind::L1.norm(d),
        }
    }

    pub fn get(&self, norm: NormKind) -> f64 {
        match norm {
            NormKind::Linf => self.linf,
            NormKind::L2 => self.l2,
            NormKind::L1 => self.l1,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `alpha * sign(grad)`, with `sign(0) = 0`.
pub fn steepest_linf(grad: &Tensor, alpha: f64) -> Tensor {
    grad.map(|g| alpha * sign(g))
}

/// `alpha * grad / ||grad||_2`; a zero gradient gives a zero step.
pub fn steepest_l2(grad: &Tensor, alpha: f64) -> Tensor {
    let norm = NormKind::L2.norm(grad.data());
    if norm == 0.0 {
        return Tensor::zeros(grad.shape());
    }
    grad.map(|g| alpha * g / norm)
}

/// Sparse l1 ascent step restricted to the pixel box.
///
/// Samples `k` uniformly from `k_range` (clamped to the dimension), then
/// steps the `k` eligible coordinates of largest `|grad|` by
/// `(alpha / k) * sign(grad)`. A coordinate is eligible when its gradient is
/// nonzero and its pixel is not already on the box face the step points
/// through (at 0 moving down, or at 1 moving up); callers clamp any overshoot.
/// Ties go to the lower index. Returns zeros when nothing is eligible.
pub fn steepest_l1<R: Rng + ?Sized>(
    grad: &Tensor,
    alpha: f64,
    k_range: (usize, usize),
    x_plus_delta: &Tensor,
    rng: &mut R,
) -> Tensor {
    let n = grad.len();
    let hi = k_range.1.clamp(1, n);
    let lo = k_range.0.clamp(1, hi);
    let k = rng.random_range(lo..=hi);
    let step = alpha / k as f64;
    let g = grad.data();
    let xd = x_plus_delta.data();
    let mut eligible: Vec<usize> = (0..n)
        .filter(|&i| {
            let s = sign(g[i]);
            !(s == 0.0 || (s < 0.0 && xd[i] <= 0.0) || (s > 0.0 && xd[i] >= 1.0))
        })
        .collect();
    let by_magnitude = |a: &usize, b: &usize| g[*b].abs().total_cmp(&g[*a].abs()).then(a.cmp(b));
    if eligible.len() > k {
        eligible.select_nth_unstable_by(k - 1, by_magnitude);
        eligible.truncate(k);
    }
    let mut out = Tensor::zeros(grad.shape());
    let od = out.data_mut();
    for i in eligible {
        od[i] = step * sign(g[i]);
    }
    out
}

/// Steepest direction for `norm` without the l1 box restriction, using
/// `k = 1`. Handy where no pixel context exists.
pub fn steepest_unconstrained(norm: NormKind, grad: &Tensor, alpha: f64) -> Tensor {
    match norm {
        NormKind::Linf => steepest_linf(grad, alpha),
        NormKind::L2 => steepest_l2(grad, alpha),
        NormKind::L1 => {
            let g = grad.data();
            let mut out = Tensor::zeros(grad.shape());
            if let Some((i, _)) = g
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            {
                out.data_mut()[i] = alpha * sign(g[i]);
            }
            out
        }
    }
}

pub fn project_linf(delta: &Tensor, epsilon: f64) -> Tensor {
    delta.map(|d| d.clamp(-epsilon, epsilon))
}

/// `epsilon * delta / max(epsilon, ||delta||_2)`.
pub fn project_l2(delta: &Tensor, epsilon: f64) -> Tensor {
    let norm = NormKind::L2.norm(delta.data());
    if norm <= epsilon {
        return delta.clone();
    }
    delta.map(|d| epsilon * d / norm)
}

/// Euclidean projection onto the l1 ball by sorting and soft-thresholding.
pub fn project_l1(delta: &Tensor, epsilon: f64) -> Tensor {
    let d = delta.data();
    if NormKind::L1.norm(d) <= epsilon {
        return delta.clone();
    }
    if epsilon <= 0.0 {
        return Tensor::zeros(delta.shape());
    }
    let mut sorted: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    // rho: last j with sorted[j] > (prefix_sum(j) - eps) / j
    let mut prefix = 0.0;
    let mut rho_sum = 0.0;
    let mut rho = 0;
    for (j, &v) in sorted.iter().enumerate() {
        prefix += v;
        if v - (prefix - epsilon) / (j + 1) as f64 > 0.0 {
            rho = j + 1;
            rho_sum = prefix;
        }
    }
    let eta = (rho_sum - epsilon) / rho as f64;
    delta.map(|v| sign(v) * (v.abs() - eta).max(0.0))
}

pub fn project(norm: NormKind, delta: &Tensor, epsilon: f64) -> Tensor {
    match norm {
        NormKind::Linf => project_linf(delta, epsilon),
        NormKind::L2 => project_l2(delta, epsilon),
        NormKind::L1 => project_l1(delta, epsilon),
    }
}

/// Random point of the ball.
///
/// `Linf`: i.i.d. uniform coordinates. `L2`: Gaussian direction with radius
/// `eps * u^(1/n)`. `L1`: random signs on exponential magnitudes normalised
/// to the unit l1 sphere, radius `eps * u^(1/n)`.
pub fn random_in_ball<R: Rng + ?Sized>(ball: &BallSpec, shape: &[usize], rng: &mut R) -> Tensor {
    let mut out = Tensor::zeros(shape);
    let eps = ball.epsilon;
    if eps == 0.0 {
        return out;
    }
    let n = out.len();
    let data = out.data_mut();
    match ball.norm {
        NormKind::Linf => {
            for v in data.iter_mut() {
                *v = rng.random_range(-eps..=eps);
            }
        }
        NormKind::L2 | NormKind::L1 => {
            for v in data.iter_mut() {
                *v = if ball.norm == NormKind::L2 {
                    StandardNormal.sample(rng)
                } else {
                    let mag: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                };
            }
            let norm = ball.norm.norm(data);
            let u: f64 = rng.random();
            let radius = eps * u.powf(1.0 / n as f64);
            if norm > 0.0 {
                for v in data.iter_mut() {
                    *v *= radius / norm;
                }
            }
            // guard against the rescaled norm rounding past the radius
            let after = ball.norm.norm(data);
            if after > eps {
                for v in data.iter_mut() {
                    *v *= eps / after;
                }
            }
        }
    }
    out
}

/// The perturbation `delta'` such that `x + delta'` is `x + delta` clamped
/// elementwise to `[0, 1]`. Coordinates already inside the box are returned
/// untouched; clamped ones are nudged so that the floating-point sum
/// `x + delta'` itself never leaves the box.
pub fn clamp_to_image(x: &Tensor, delta: &Tensor) -> Result<Tensor> {
    x.zip_map(delta, |xv, dv| {
        let sum = xv + dv;
        if (0.0..=1.0).contains(&sum) {
            return dv;
        }
        let mut d = sum.clamp(0.0, 1.0) - xv;
        while xv + d > 1.0 {
            d = d.next_down();
        }
        while xv + d < 0.0 {
            d = d.next_up();
        }
        d
    })
}

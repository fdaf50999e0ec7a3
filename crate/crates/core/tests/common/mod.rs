//! Oracles and toy classifiers shared by the integration tests.
//!
//! Nothing here calls into the code under test for the quantity being
//! checked: projections are solved through their dual, gradients by central
//! differences, and the toy models differentiate themselves analytically.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use union_robust::autodiff::{Tape, Var};
use union_robust::models::{build, Classifier};
use union_robust::{ModelSpec, Network, Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Central differences of `f` at `x` with step `h`, one coordinate at a time.
pub fn numeric_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    grad
}

/// `||a - b||_2 / max(||a||_2, ||b||_2, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Euclidean projection onto the l1 ball via its dual: the solution is
/// soft-thresholding at the unique `eta >= 0` with
/// `sum max(|d_i| - eta, 0) = eps`, found here by bisection.
pub fn project_l1_oracle(delta: &[f64], eps: f64) -> Vec<f64> {
    let l1: f64 = delta.iter().map(|d| d.abs()).sum();
    if l1 <= eps {
        return delta.to_vec();
    }
    let excess = |eta: f64| delta.iter().map(|d| (d.abs() - eta).max(0.0)).sum::<f64>() - eps;
    let (mut lo, mut hi) = (0.0, delta.iter().fold(0.0f64, |m, d| m.max(d.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = 0.5 * (lo + hi);
    delta
        .iter()
        .map(|d| d.signum() * (d.abs() - eta).max(0.0))
        .collect()
}

/// `logits = W x + b` on flattened inputs, with an analytic input gradient.
pub struct LinearModel {
    /// `classes x inputs`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    fn rows(&self, x: &Tensor) -> usize {
        x.shape()[0]
    }

    fn row_logits(&self, row: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(row).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

impl Classifier for LinearModel {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.rows(x);
        let per = x.len() / b;
        let data = x.data().chunks(per).flat_map(|r| self.row_logits(r)).collect();
        Tensor::new(vec![b, self.bias.len()], data)
    }

    fn loss_and_input_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let b = self.rows(x);
        let per = x.len() / b;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(x.len());
        for (row, &y) in x.data().chunks(per).zip(labels) {
            let p = softmax(&self.row_logits(row));
            loss -= p[y].ln();
            for i in 0..per {
                let g: f64 = (0..p.len())
                    .map(|c| (p[c] - f64::from(c == y)) * self.weights[c][i])
                    .sum();
                grad.push(g / b as f64);
            }
        }
        Ok((loss / b as f64, Tensor::new(x.shape().to_vec(), grad)?))
    }
}

/// Predicts class 0 for every input; zero gradient everywhere.
pub struct ConstantModel {
    pub classes: usize,
}

impl Classifier for ConstantModel {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        let mut data = vec![0.0; b * self.classes];
        for r in 0..b {
            data[r * self.classes] = 5.0;
        }
        Tensor::new(vec![b, self.classes], data)
    }

    fn loss_and_input_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let z = self.logits(x)?;
        Ok((union_robust::autodiff::cross_entropy(&z, labels)?, Tensor::zeros(x.shape())))
    }
}

/// A seeded two-layer MLP on `1 x 1 x n` inputs.
pub fn small_mlp(n: usize, classes: usize, seed: u64) -> Network {
    let spec = ModelSpec::mlp([1, 1, n], vec![12], classes);
    Network::new(spec.clone(), build(&spec, seed).unwrap()).unwrap()
}

/// A seeded convolutional network on `1 x 8 x 8` inputs.
pub fn small_cnn(seed: u64) -> Network {
    let spec = ModelSpec {
        input_shape: [1, 8, 8],
        classes: 4,
        ..ModelSpec::cnn([3, 4], 8)
    };
    Network::new(spec.clone(), build(&spec, seed).unwrap()).unwrap()
}


/// Builds a scalar graph over leaves holding `inputs` and returns the largest
/// relative error between backpropagated and central-difference gradients
/// (h = 1e-5) across all inputs.
pub fn gradient_check(inputs: &[Tensor], graph: impl Fn(&mut Tape<'_>, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = graph(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = graph(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let numeric = numeric_gradient(
            |xk| {
                let mut xs = inputs.to_vec();
                xs[k] = xk.clone();
                eval(&xs)
            },
            &inputs[k],
            1e-5,
        );
        worst = worst.max(relative_error(analytic.data(), numeric.data()));
    }
    worst
}

/// `sum(out * r)` for a fixed random `r`, turning any node into a scalar
/// whose gradient exercises every output element.
pub fn random_projection(tape: &mut Tape<'_>, out: Var, seed: u64) -> Var {
    let r = uniform(tape.value(out).shape(), -1.0, 1.0, &mut rng(seed));
    let rv = tape.constant(r);
    let prod = tape.mul(out, rv).unwrap();
    tape.sum(prod)
}

/// Random entries with magnitude in `[0.1, 1]` and random sign. Kinks of
/// ReLU (at 0) and near-ties in max-pool windows are then vanishingly
/// unlikely to fall within a finite-difference step of the sample.
pub fn generic_input(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = r.random_range(0.1..1.0);
            if r.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Euclidean projection onto the l1 ball by enumerating every support set:
/// each candidate soft-thresholds its support so that it lands on the
/// sphere, and the closest feasible candidate wins. Exponential in `n`.
pub fn project_l1_brute_force(delta: &[f64], eps: f64) -> Vec<f64> {
    let n = delta.len();
    if delta.iter().map(|d| d.abs()).sum::<f64>() <= eps {
        return delta.to_vec();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let eta = (members.iter().map(|&i| delta[i].abs()).sum::<f64>() - eps) / members.len() as f64;
        if eta < 0.0 || members.iter().any(|&i| delta[i].abs() < eta) {
            continue;
        }
        let mut x = vec![0.0; n];
        for &i in &members {
            x[i] = delta[i].signum() * (delta[i].abs() - eta);
        }
        let dist: f64 = x.iter().zip(delta).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("the full support is always feasible when eps > 0").1
}

/// Backprop-versus-central-difference error of every tape operation on
/// one seeded case.
pub fn op_gradient_errors(s: u64) -> Vec<(&'static str, f64)> {
    let a = generic_input(&[2, 3, 4, 4], s);
    let b = generic_input(&[2, 3, 4, 4], s + 50);
    let pad = (s % 3) as usize;
    let conv_inputs = [
        generic_input(&[2, 2, 5, 6], s),
        generic_input(&[3, 2, 3, 3], s + 100),
        generic_input(&[3], s + 200),
    ];
    let affine_inputs = [generic_input(&[3, 4], s), generic_input(&[4, 5], s + 100), generic_input(&[5], s + 200)];
    let logits = generic_input(&[4, 5], s).scale(3.0);
    let labels = [s as usize % 5, 0, 4, 2];
    let one = std::slice::from_ref(&a);
    let two = [a.clone(), b.clone()];
    vec![
        ("affine", gradient_check(&affine_inputs, |t, v| {
            let o = t.affine(v[0], v[1], v[2]).unwrap();
            random_projection(t, o, s)
        })),
        ("conv2d", gradient_check(&conv_inputs, |t, v| {
            let o = t.conv2d(v[0], v[1], v[2], pad).unwrap();
            random_projection(t, o, s)
        })),
        ("relu", gradient_check(one, |t, v| {
            let o = t.relu(v[0]);
            random_projection(t, o, s)
        })),
        ("maxpool", gradient_check(one, |t, v| {
            let o = t.maxpool2x2(v[0]).unwrap();
            random_projection(t, o, s)
        })),
        ("flatten", gradient_check(one, |t, v| {
            let o = t.flatten(v[0]).unwrap();
            random_projection(t, o, s)
        })),
        ("reshape", gradient_check(one, |t, v| {
            let o = t.reshape(v[0], &[6, 16]).unwrap();
            random_projection(t, o, s)
        })),
        ("add", gradient_check(&two, |t, v| {
            let o = t.add(v[0], v[1]).unwrap();
            random_projection(t, o, s)
        })),
        ("mul", gradient_check(&two, |t, v| {
            let o = t.mul(v[0], v[1]).unwrap();
            random_projection(t, o, s)
        })),
        ("scale", gradient_check(one, |t, v| {
            let o = t.scale(v[0], -1.7);
            random_projection(t, o, s)
        })),
        ("sum", gradient_check(one, |t, v| t.sum(v[0]))),
        ("softmax_cross_entropy", gradient_check(&[logits], |t, v| {
            t.softmax_cross_entropy(v[0], &labels).unwrap()
        })),
    ]
}

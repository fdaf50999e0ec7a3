//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its parents. Parents always precede children, so a single reverse sweep
//! over the node list is a valid topological order for backpropagation.
//! A tape is built fresh for each forward pass.
//!
//! Leaves either require gradients ([`Tape::leaf`]) or are constants
//! ([`Tape::constant`]); gradients are only propagated into subgraphs that
//! contain at least one gradient-requiring leaf.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        padding: usize,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Sum {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// An append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient will be computed.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// A borrowed leaf, avoiding a copy of large parameter tensors.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `output[b,o] = sum_i input[b,i] * weight[i,o] + bias[o]`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::Dimension(format!(
                "affine: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[1]);
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = Vec::with_capacity(batch * fan_out);
        for row in xd.chunks_exact(fan_in) {
            let mut acc = bd.to_vec();
            for (&xi, wrow) in row.iter().zip(wd.chunks_exact(fan_out)) {
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a += xi * wv;
                }
            }
            out.extend_from_slice(&acc);
        }
        let value = Tensor::new(vec![batch, fan_out], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            Cow::Owned(value),
            Op::Affine {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    /// Stride-one cross-correlation with symmetric zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geom = ConvGeometry::new(x.shape(), k.shape(), b.shape(), padding)?;
        let mut out = vec![0.0; geom.batch * geom.filters * geom.out_h * geom.out_w];
        geom.forward(x.data(), k.data(), b.data(), &mut out);
        let value = Tensor::new(
            vec![geom.batch, geom.filters, geom.out_h, geom.out_w],
            out,
        )?;
        let rg = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            Cow::Owned(value),
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(value), Op::Relu { input }, rg)
    }

    /// Non-overlapping 2x2 max pooling over the trailing two axes of a
    /// `B x C x H x W` tensor. Ties go to the lowest linear index.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "maxpool2x2 needs B x C x H x W with even H, W; got {s:?}"
            )));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let top = base + 2 * i * w + 2 * j;
                    let mut best = top;
                    for cand in [top + 1, top + w, top + w + 1] {
                        if xd[cand] > xd[best] {
                            best = cand;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![s[0], s[1], oh, ow], out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(value), Op::MaxPool { input, argmax }, rg))
    }

    /// Row-major flatten to `B x N`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let batch = x.shape()[0];
        let n = x.len() / batch;
        self.reshape(input, &[batch, n])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(value), Op::Reshape { input }, rg))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let value = self.value(lhs).add(self.value(rhs))?;
        let rg = self.needs(&[lhs, rhs]);
        Ok(self.push(Cow::Owned(value), Op::Add { lhs, rhs }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let value = self.value(lhs).zip_map(self.value(rhs), |a, b| a * b)?;
        let rg = self.needs(&[lhs, rhs]);
        Ok(self.push(Cow::Owned(value), Op::Mul { lhs, rhs }, rg))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(value), Op::Sum { input }, rg)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).scale(factor);
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(value), Op::Scale { input, factor }, rg)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let s = z.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross entropy: logits {s:?} with {} labels",
                labels.len()
            )));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = Vec::with_capacity(z.len());
        let mut total = 0.0;
        for (row, &label) in z.data().chunks_exact(classes).zip(labels) {
            let (loss, p) = log_softmax_loss(row, label);
            total += loss;
            probs.extend(p);
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Cow::Owned(value),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads)?;
            grads[id] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (batch, fan_in, fan_out) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let gd = g.data();
                if self.wants(*input) {
                    let mut gx = vec![0.0; batch * fan_in];
                    for (grow, gxrow) in gd.chunks_exact(fan_out).zip(gx.chunks_exact_mut(fan_in)) {
                        for (gxi, wrow) in gxrow.iter_mut().zip(w.data().chunks_exact(fan_out)) {
                            *gxi = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    accumulate(grads, *input, Tensor::new(vec![batch, fan_in], gx)?)?;
                }
                if self.wants(*weight) {
                    let mut gw = vec![0.0; fan_in * fan_out];
                    for (xrow, grow) in x.data().chunks_exact(fan_in).zip(gd.chunks_exact(fan_out)) {
                        for (&xi, gwrow) in xrow.iter().zip(gw.chunks_exact_mut(fan_out)) {
                            for (a, &gv) in gwrow.iter_mut().zip(grow) {
                                *a += xi * gv;
                            }
                        }
                    }
                    accumulate(grads, *weight, Tensor::new(vec![fan_in, fan_out], gw)?)?;
                }
                if self.wants(*bias) {
                    let mut gb = vec![0.0; fan_out];
                    for grow in gd.chunks_exact(fan_out) {
                        for (a, &gv) in gb.iter_mut().zip(grow) {
                            *a += gv;
                        }
                    }
                    accumulate(grads, *bias, Tensor::from_vec(gb))?;
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let (x, k, b) = (self.value(*input), self.value(*kernel), self.value(*bias));
                let geom = ConvGeometry::new(x.shape(), k.shape(), b.shape(), *padding)?;
                if self.wants(*input) {
                    let mut gx = vec![0.0; x.len()];
                    geom.backward_input(g.data(), k.data(), &mut gx);
                    accumulate(grads, *input, Tensor::new(x.shape().to_vec(), gx)?)?;
                }
                if self.wants(*kernel) {
                    let mut gk = vec![0.0; k.len()];
                    geom.backward_kernel(g.data(), x.data(), &mut gk);
                    accumulate(grads, *kernel, Tensor::new(k.shape().to_vec(), gk)?)?;
                }
                if self.wants(*bias) {
                    let mut gb = vec![0.0; geom.filters];
                    let plane = geom.out_h * geom.out_w;
                    for (i, chunk) in g.data().chunks_exact(plane).enumerate() {
                        gb[i % geom.filters] += chunk.iter().sum::<f64>();
                    }
                    accumulate(grads, *bias, Tensor::from_vec(gb))?;
                }
            }
            Op::Relu { input } => {
                if self.wants(*input) {
                    let gx = self
                        .value(*input)
                        .zip_map(g, |x, gv| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(grads, *input, gx)?;
                }
            }
            Op::MaxPool { input, argmax } => {
                if self.wants(*input) {
                    let x = self.value(*input);
                    let mut gx = vec![0.0; x.len()];
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gx[src] += gv;
                    }
                    accumulate(grads, *input, Tensor::new(x.shape().to_vec(), gx)?)?;
                }
            }
            Op::Reshape { input } => {
                if self.wants(*input) {
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(grads, *input, g.clone().reshape(&shape)?)?;
                }
            }
            Op::Add { lhs, rhs } => {
                if self.wants(*lhs) {
                    accumulate(grads, *lhs, g.clone())?;
                }
                if self.wants(*rhs) {
                    accumulate(grads, *rhs, g.clone())?;
                }
            }
            Op::Mul { lhs, rhs } => {
                if self.wants(*lhs) {
                    let gl = g.zip_map(self.value(*rhs), |a, b| a * b)?;
                    accumulate(grads, *lhs, gl)?;
                }
                if self.wants(*rhs) {
                    let gr = g.zip_map(self.value(*lhs), |a, b| a * b)?;
                    accumulate(grads, *rhs, gr)?;
                }
            }
            Op::Sum { input } => {
                if self.wants(*input) {
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(grads, *input, Tensor::full(&shape, g.data()[0]))?;
                }
            }
            Op::Scale { input, factor } => {
                if self.wants(*input) {
                    accumulate(grads, *input, g.scale(*factor))?;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.wants(*logits) {
                    let shape = self.value(*logits).shape().to_vec();
                    let classes = shape[1];
                    let coef = g.data()[0] / labels.len() as f64;
                    let mut gz = probs.clone();
                    for (row, &label) in gz.chunks_exact_mut(classes).zip(labels) {
                        row[label] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= coef;
                        }
                    }
                    accumulate(grads, *logits, Tensor::new(shape, gz)?)?;
                }
            }
        }
        Ok(())
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Loss and softmax probabilities for one row of logits, stabilised by
/// subtracting the row maximum.
pub(crate) fn log_softmax_loss(row: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (row[label] - max);
    (loss, exps.into_iter().map(|e| e / total).collect())
}

/// Mean cross entropy of a `B x C` logit tensor, without a tape.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Dimension(format!(
            "cross entropy: logits {s:?} with {} labels",
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in logits.data().chunks_exact(s[1]).zip(labels) {
        if label >= s[1] {
            return Err(Error::Index(format!(
                "label {label} out of range for {} classes",
                s[1]
            )));
        }
        total += log_softmax_loss(row, label).0;
    }
    Ok(total / labels.len() as f64)
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// `d loss / d input`, with the shape of `input`.
///
/// An input that does not influence the loss gets an all-zero gradient
/// rather than an error.
pub fn input_gradient(tape: &Tape<'_>, loss: Var, input: Var) -> Result<Tensor> {
    let mut grads = tape.backward(loss)?;
    Ok(grads
        .take(input)
        .unwrap_or_else(|| Tensor::zeros(tape.value(input).shape())))
}

struct ConvGeometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    size: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], bias: &[usize], padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || bias.len() != 1 {
            return Err(Error::Dimension(format!(
                "conv2d: input {input:?}, kernel {kernel:?}, bias {bias:?}"
            )));
        }
        let (batch, channels, height, width) = (input[0], input[1], input[2], input[3]);
        let (filters, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != channels || kh != kw || bias[0] != filters {
            return Err(Error::Dimension(format!(
                "conv2d: input {input:?}, kernel {kernel:?}, bias {bias:?}"
            )));
        }
        if kh > height + 2 * padding || kw > width + 2 * padding {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                height + 2 * padding,
                width + 2 * padding
            )));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            filters,
            size: kh,
            padding,
            out_h: height + 2 * padding - kh + 1,
            out_w: width + 2 * padding - kw + 1,
        })
    }

    /// Output rows `oh` for which input row `oh + ki - padding` is in range.
    fn valid_range(&self, offset: usize, extent: usize, out: usize) -> (usize, usize) {
        // input index = o + offset - padding must lie in [0, extent)
        let lo = self.padding.saturating_sub(offset);
        let hi = (extent + self.padding).saturating_sub(offset).min(out);
        (lo, hi.max(lo))
    }

    fn forward(&self, x: &[f64], k: &[f64], bias: &[f64], out: &mut [f64]) {
        let (h, w, kk) = (self.height, self.width, self.size);
        let out_plane = self.out_h * self.out_w;
        for b in 0..self.batch {
            for f in 0..self.filters {
                let o = &mut out[(b * self.filters + f) * out_plane..][..out_plane];
                o.fill(bias[f]);
                for c in 0..self.channels {
                    let xin = &x[(b * self.channels + c) * h * w..][..h * w];
                    for ki in 0..kk {
                        let (r0, r1) = self.valid_range(ki, h, self.out_h);
                        for kj in 0..kk {
                            let kv = k[((f * self.channels + c) * kk + ki) * kk + kj];
                            let (c0, c1) = self.valid_range(kj, w, self.out_w);
                            for oh in r0..r1 {
                                let ih = oh + ki - self.padding;
                                let src = &xin[ih * w + c0 + kj - self.padding..][..c1 - c0];
                                let dst = &mut o[oh * self.out_w + c0..][..c1 - c0];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += kv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_input(&self, g: &[f64], k: &[f64], gx: &mut [f64]) {
        let (h, w, kk) = (self.height, self.width, self.size);
        let out_plane = self.out_h * self.out_w;
        for b in 0..self.batch {
            for f in 0..self.filters {
                let go = &g[(b * self.filters + f) * out_plane..][..out_plane];
                for c in 0..self.channels {
                    let gin = &mut gx[(b * self.channels + c) * h * w..][..h * w];
                    for ki in 0..kk {
                        let (r0, r1) = self.valid_range(ki, h, self.out_h);
                        for kj in 0..kk {
                            let kv = k[((f * self.channels + c) * kk + ki) * kk + kj];
                            let (c0, c1) = self.valid_range(kj, w, self.out_w);
                            for oh in r0..r1 {
                                let ih = oh + ki - self.padding;
                                let dst = &mut gin[ih * w + c0 + kj - self.padding..][..c1 - c0];
                                let src = &go[oh * self.out_w + c0..][..c1 - c0];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += kv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_kernel(&self, g: &[f64], x: &[f64], gk: &mut [f64]) {
        let (h, w, kk) = (self.height, self.width, self.size);
        let out_plane = self.out_h * self.out_w;
        for b in 0..self.batch {
            for f in 0..self.filters {
                let go = &g[(b * self.filters + f) * out_plane..][..out_plane];
                for c in 0..self.channels {
                    let xin = &x[(b * self.channels + c) * h * w..][..h * w];
                    for ki in 0..kk {
                        let (r0, r1) = self.valid_range(ki, h, self.out_h);
                        for kj in 0..kk {
                            let (c0, c1) = self.valid_range(kj, w, self.out_w);
                            let mut acc = 0.0;
                            for oh in r0..r1 {
                                let ih = oh + ki - self.padding;
                                let src = &xin[ih * w + c0 + kj - self.padding..][..c1 - c0];
                                let gsrc = &go[oh * self.out_w + c0..][..c1 - c0];
                                acc += src.iter().zip(gsrc).map(|(a, b)| a * b).sum::<f64>();
                            }
                            gk[((f * self.channels + c) * kk + ki) * kk + kj] += acc;
                        }
                    }
                }
            }
        }
    }
}

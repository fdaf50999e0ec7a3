//! Classifier architectures: a plain MLP and the two-conv MNIST network.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{cross_entropy, input_gradient, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

/// Which network to build.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Fully connected ReLU network. An empty `hidden` list is a linear model.
    Mlp { hidden: Vec<usize> },
    /// conv(5x5, pad 2) -> relu -> pool -> conv(5x5, pad 2) -> relu -> pool
    /// -> affine -> relu -> affine.
    MnistCnn { filters: [usize; 2], hidden: usize },
}

/// Architecture plus input geometry and class count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// `[channels, height, width]` of one example.
    pub input_shape: [usize; 3],
    pub classes: usize,
}

const CNN_KERNEL: usize = 5;
const CNN_PADDING: usize = 2;

impl ModelSpec {
    pub fn mlp(input_shape: [usize; 3], hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            architecture: Architecture::Mlp { hidden },
            input_shape,
            classes,
        }
    }

    /// The full-width MNIST network: 32/64 filters and 1024 hidden units.
    pub fn mnist_cnn() -> Self {
        Self::cnn([32, 64], 1024)
    }

    /// A narrower MNIST network (16/32 filters, 128 hidden) for quick runs.
    pub fn mnist_cnn_scaled() -> Self {
        Self::cnn([16, 32], 128)
    }

    pub fn cnn(filters: [usize; 2], hidden: usize) -> Self {
        Self {
            architecture: Architecture::MnistCnn { filters, hidden },
            input_shape: [1, 28, 28],
            classes: 10,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn is_convolutional(&self) -> bool {
        matches!(self.architecture, Architecture::MnistCnn { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two classes, got {}",
                self.classes
            )));
        }
        match &self.architecture {
            Architecture::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::InvalidArgument("zero-width hidden layer".into()));
                }
            }
            Architecture::MnistCnn { filters, hidden } => {
                let [_, h, w] = self.input_shape;
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "cnn input {h}x{w} must be divisible by 4 for two 2x2 pools"
                    )));
                }
                if filters.contains(&0) || *hidden == 0 {
                    return Err(Error::InvalidArgument("zero-width cnn layer".into()));
                }
            }
        }
        Ok(())
    }

    /// Names and shapes of all parameters, in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        match &self.architecture {
            Architecture::Mlp { hidden } => {
                let mut fan_in = self.input_len();
                for (i, &width) in hidden.iter().chain(std::iter::once(&self.classes)).enumerate() {
                    shapes.push((format!("fc{}.weight", i + 1), vec![fan_in, width]));
                    shapes.push((format!("fc{}.bias", i + 1), vec![width]));
                    fan_in = width;
                }
            }
            Architecture::MnistCnn { filters, hidden } => {
                let [c, h, w] = self.input_shape;
                let k = CNN_KERNEL;
                shapes.push(("conv1.weight".into(), vec![filters[0], c, k, k]));
                shapes.push(("conv1.bias".into(), vec![filters[0]]));
                shapes.push(("conv2.weight".into(), vec![filters[1], filters[0], k, k]));
                shapes.push(("conv2.bias".into(), vec![filters[1]]));
                let flat = filters[1] * (h / 4) * (w / 4);
                shapes.push(("fc1.weight".into(), vec![flat, *hidden]));
                shapes.push(("fc1.bias".into(), vec![*hidden]));
                shapes.push(("fc2.weight".into(), vec![*hidden, self.classes]));
                shapes.push(("fc2.bias".into(), vec![self.classes]));
            }
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// One-line text form stored in checkpoints, e.g.
    /// `mnist_cnn input=1x28x28 classes=10 filters=32,64 hidden=1024`.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }

    /// Inverse of [`ModelSpec::descriptor`].
    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("model descriptor {text:?}: {msg}"));
        let mut words = text.split_whitespace();
        let kind = words.next().ok_or_else(|| bad("empty"))?;
        let mut input = None;
        let mut classes = None;
        let mut filters = None;
        let mut hidden: Option<Vec<usize>> = None;
        for word in words {
            let (key, value) = word.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match key {
                "input" => {
                    let dims = parse_list(value, 'x').ok_or_else(|| bad("bad input"))?;
                    let dims: [usize; 3] = dims.try_into().map_err(|_| bad("input needs 3 dims"))?;
                    input = Some(dims);
                }
                "classes" => classes = Some(value.parse().map_err(|_| bad("bad classes"))?),
                "filters" => {
                    let f = parse_list(value, ',').ok_or_else(|| bad("bad filters"))?;
                    let f: [usize; 2] = f.try_into().map_err(|_| bad("filters needs 2 values"))?;
                    filters = Some(f);
                }
                "hidden" => {
                    hidden = Some(if value.is_empty() {
                        Vec::new()
                    } else {
                        parse_list(value, ',').ok_or_else(|| bad("bad hidden"))?
                    })
                }
                _ => return Err(bad(&format!("unknown key {key}"))),
            }
        }
        let input_shape = input.ok_or_else(|| bad("missing input"))?;
        let classes = classes.ok_or_else(|| bad("missing classes"))?;
        let hidden = hidden.ok_or_else(|| bad("missing hidden"))?;
        let architecture = match kind {
            "mlp" => {
                if filters.is_some() {
                    return Err(bad("mlp takes no filters"));
                }
                Architecture::Mlp { hidden }
            }
            "mnist_cnn" => {
                let filters = filters.ok_or_else(|| bad("missing filters"))?;
                let [h]: [usize; 1] = hidden.try_into().map_err(|_| bad("cnn hidden is one value"))?;
                Architecture::MnistCnn { filters, hidden: h }
            }
            other => return Err(bad(&format!("unknown architecture {other}"))),
        };
        let spec = Self {
            architecture,
            input_shape,
            classes,
        };
        spec.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(spec)
    }
}

fn parse_list(text: &str, sep: char) -> Option<Vec<usize>> {
    text.split(sep).map(|s| s.parse().ok()).collect()
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input_shape;
        match &self.architecture {
            Architecture::Mlp { hidden } => {
                let hidden: Vec<String> = hidden.iter().map(usize::to_string).collect();
                write!(
                    f,
                    "mlp input={c}x{h}x{w} classes={} hidden={}",
                    self.classes,
                    hidden.join(",")
                )
            }
            Architecture::MnistCnn { filters, hidden } => write!(
                f,
                "mnist_cnn input={c}x{h}x{w} classes={} filters={},{} hidden={hidden}",
                self.classes, filters[0], filters[1]
            ),
        }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn total_len(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Checks names and shapes against what `spec` expects.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.parameter_shapes();
        if expected.len() != self.entries.len() {
            return Err(Error::Dimension(format!(
                "{} parameters for a model needing {}",
                self.entries.len(),
                expected.len()
            )));
        }
        for ((name, shape), (have_name, t)) in expected.iter().zip(&self.entries) {
            if name != have_name || shape.as_slice() != t.shape() {
                return Err(Error::Dimension(format!(
                    "parameter {have_name} {:?} where {name} {shape:?} expected",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases,
/// drawn deterministically from `seed`.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = spec
        .parameter_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let fan_in: usize = if shape.len() == 4 {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            Ok((name, Tensor::new(shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ParameterSet::new(entries)
}

/// Logits node plus the parameter leaves that produced it.
pub struct Forward {
    pub logits: Var,
    pub params: Vec<Var>,
}

/// Records the network on `tape`, reading the input from node `x`.
///
/// With `trainable` set, parameter leaves require gradients; otherwise they
/// are constants and only input gradients are available.
pub fn forward<'a>(
    spec: &ModelSpec,
    params: &'a ParameterSet,
    tape: &mut Tape<'a>,
    x: Var,
    trainable: bool,
) -> Result<Forward> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1..] != spec.input_shape {
        return Err(Error::Dimension(format!(
            "input {shape:?} does not match model input {:?}",
            spec.input_shape
        )));
    }
    params.check_against(spec)?;
    let vars: Vec<Var> = params.tensors().map(|t| tape.leaf_ref(t, trainable)).collect();
    let logits = match &spec.architecture {
        Architecture::Mlp { .. } => {
            let mut h = tape.flatten(x)?;
            let layers = vars.len() / 2;
            for (i, pair) in vars.chunks_exact(2).enumerate() {
                h = tape.affine(h, pair[0], pair[1])?;
                if i + 1 < layers {
                    h = tape.relu(h);
                }
            }
            h
        }
        Architecture::MnistCnn { .. } => {
            let h = tape.conv2d(x, vars[0], vars[1], CNN_PADDING)?;
            let h = tape.relu(h);
            let h = tape.maxpool2x2(h)?;
            let h = tape.conv2d(h, vars[2], vars[3], CNN_PADDING)?;
            let h = tape.relu(h);
            let h = tape.maxpool2x2(h)?;
            let h = tape.flatten(h)?;
            let h = tape.affine(h, vars[4], vars[5])?;
            let h = tape.relu(h);
            tape.affine(h, vars[6], vars[7])?
        }
    };
    Ok(Forward {
        logits,
        params: vars,
    })
}

/// Anything that can score inputs and differentiate its loss with respect
/// to them. Inputs carry a leading batch axis.
pub trait Classifier: Sync {
    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    /// Mean cross-entropy loss and its gradient with respect to `x`.
    fn loss_and_input_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)>;

    fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        cross_entropy(&self.logits(x)?, labels)
    }

    /// Predicted class per batch row, first maximum on ties.
    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        let classes = z.shape()[1];
        Ok(z.data().chunks_exact(classes).map(argmax).collect())
    }
}

/// A model spec paired with concrete parameters.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: ModelSpec,
    pub params: ParameterSet,
}

impl Network {
    pub fn new(spec: ModelSpec, params: ParameterSet) -> Result<Self> {
        params.check_against(&spec)?;
        Ok(Self { spec, params })
    }
}

impl Classifier for Network {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = forward(&self.spec, &self.params, &mut tape, xv, false)?;
        Ok(tape.value(out.logits).clone())
    }

    fn loss_and_input_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = forward(&self.spec, &self.params, &mut tape, xv, false)?;
        let loss = tape.softmax_cross_entropy(out.logits, labels)?;
        let value = tape.value(loss).data()[0];
        Ok((value, input_gradient(&tape, loss, xv)?))
    }
}

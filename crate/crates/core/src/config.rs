//! Flat `key=value` configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Keys are
//! namespaced `data.*`, `train.*`, `attack.<norm>.*` and `eval.*`; any key
//! not listed in [`known_keys`] is rejected so typos surface immediately.
//! Later assignments (including command-line overrides) replace earlier ones.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversary::{MsdConfig, PerturbationSpec};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{AttackSuite, DEFAULT_SPARSITY_THRESHOLD};
use crate::geometry::NormKind;
use crate::models::ModelSpec;
use crate::training::{LrSchedule, Optimizer, Strategy, TrainConfig};

const DATA_KEYS: &[&str] = &[
    "source",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "n_train",
    "n_test",
    "classes",
    "margin",
    "noise",
    "seed",
];

const TRAIN_KEYS: &[&str] = &[
    "model",
    "hidden",
    "filters",
    "fc_hidden",
    "strategy",
    "norms",
    "optimizer",
    "lr_schedule",
    "momentum",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "epochs",
    "batch_size",
    "seed",
    "msd_iterations",
    "msd_restarts",
];

const ATTACK_KEYS: &[&str] = &[
    "epsilon",
    "alpha",
    "iterations",
    "restarts",
    "k_min",
    "k_max",
    "momentum",
    "eval_iterations",
    "eval_restarts",
];

const EVAL_KEYS: &[&str] = &[
    "attacks",
    "trials",
    "pointwise_restarts",
    "seed",
    "limit",
    "sparsity_threshold",
];

/// Every accepted key.
pub fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    keys.extend(DATA_KEYS.iter().map(|k| format!("data.{k}")));
    keys.extend(TRAIN_KEYS.iter().map(|k| format!("train.{k}")));
    for norm in NormKind::ALL {
        keys.extend(ATTACK_KEYS.iter().map(|k| format!("attack.{norm}.{k}")));
    }
    keys.extend(EVAL_KEYS.iter().map(|k| format!("eval.{k}")));
    keys
}

fn is_known(key: &str) -> bool {
    let check = |prefix: &str, list: &[&str]| key.strip_prefix(prefix).is_some_and(|k| list.contains(&k));
    if check("data.", DATA_KEYS) || check("train.", TRAIN_KEYS) || check("eval.", EVAL_KEYS) {
        return true;
    }
    NormKind::ALL
        .iter()
        .any(|n| check(&format!("attack.{n}."), ATTACK_KEYS))
}

/// Raw validated key/value pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for `{key}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(default),
            Some("") | Some("none") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("invalid item {item:?} in `{key}`")))
                })
                .collect(),
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Blobs,
    Rings,
    Idx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSettings {
    pub source: DataSource,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Synthetic sizes, or limits on IDX files (`0` = whole file).
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub margin: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl DataSettings {
    pub fn load(&self, split: Split) -> Result<Dataset> {
        let (n, seed) = match split {
            Split::Train => (self.n_train, self.seed),
            Split::Test => (self.n_test, self.seed.wrapping_add(1)),
        };
        match self.source {
            DataSource::Blobs => data::synth_blobs(n, self.classes, self.margin, self.noise, seed),
            DataSource::Rings => data::synth_rings(n, seed),
            DataSource::Idx => {
                let (images, labels, tag) = match split {
                    Split::Train => (&self.train_images, &self.train_labels, "train"),
                    Split::Test => (&self.test_images, &self.test_labels, "test"),
                };
                let missing = || Error::Config(format!("data.source=idx needs data.{tag}_images and data.{tag}_labels"));
                let set = data::load_idx(
                    images.as_deref().ok_or_else(missing)?,
                    labels.as_deref().ok_or_else(missing)?,
                    tag,
                )?;
                if n == 0 {
                    Ok(set)
                } else {
                    set.take(n)
                }
            }
        }
    }
}

/// Attack hyperparameters for one norm, for training and for evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSettings {
    pub norm: NormKind,
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub k_range: (usize, usize),
    pub momentum: f64,
    pub eval_iterations: usize,
    pub eval_restarts: usize,
}

impl NormSettings {
    /// MNIST settings: radii (0.3, 2.0, 10), steps (0.01, 0.1, 0.8),
    /// (50, 100, 50) training and (100, 200, 100) test iterations, two
    /// training restarts and ten at test time. MIM momentum defaults to 0.9.
    pub fn mnist(norm: NormKind) -> Self {
        let (epsilon, alpha, iterations, eval_iterations) = match norm {
            NormKind::Linf => (0.3, 0.01, 50, 100),
            NormKind::L2 => (2.0, 0.1, 100, 200),
            NormKind::L1 => (10.0, 0.8, 50, 100),
        };
        Self {
            norm,
            epsilon,
            alpha,
            iterations,
            restarts: 2,
            k_range: (5, 20),
            momentum: 0.9,
            eval_iterations,
            eval_restarts: 10,
        }
    }

    pub fn training_spec(&self) -> Result<PerturbationSpec> {
        self.spec(self.iterations, self.restarts)
    }

    pub fn eval_spec(&self) -> Result<PerturbationSpec> {
        self.spec(self.eval_iterations, self.eval_restarts)
    }

    fn spec(&self, iterations: usize, restarts: usize) -> Result<PerturbationSpec> {
        let s = PerturbationSpec::new(self.norm, self.epsilon, self.alpha, iterations)?
            .with_restarts(restarts)
            .with_k_range(self.k_range.0, self.k_range.1)
            .with_momentum(self.momentum);
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    /// Attack ids; `None` means the standard suite for every norm.
    pub attacks: Option<Vec<String>>,
    pub trials: usize,
    pub pointwise_restarts: usize,
    pub seed: u64,
    /// Evaluate only the first `limit` test examples (`0` = all).
    pub limit: usize,
    pub sparsity_threshold: f64,
}

/// A fully typed configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub data: DataSettings,
    pub model: String,
    pub hidden: Vec<usize>,
    pub filters: [usize; 2],
    pub fc_hidden: usize,
    pub train: TrainConfig,
    pub norms: Vec<NormKind>,
    pub attacks: [NormSettings; 3],
    pub eval: EvalSettings,
}

impl Settings {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let source = match cfg.get("data.source").unwrap_or("blobs") {
            "blobs" => DataSource::Blobs,
            "rings" => DataSource::Rings,
            "idx" => DataSource::Idx,
            other => return Err(Error::Config(format!("unknown data.source {other:?}"))),
        };
        let path = |k: &str| cfg.get(k).map(PathBuf::from);
        let data = DataSettings {
            source,
            train_images: path("data.train_images"),
            train_labels: path("data.train_labels"),
            test_images: path("data.test_images"),
            test_labels: path("data.test_labels"),
            n_train: cfg.parsed("data.n_train", 1000)?,
            n_test: cfg.parsed("data.n_test", 500)?,
            classes: cfg.parsed("data.classes", 2)?,
            margin: cfg.parsed("data.margin", 0.02)?,
            noise: cfg.parsed("data.noise", 0.1)?,
            seed: cfg.parsed("data.seed", 0)?,
        };

        let attacks = NormKind::ALL.map(|norm| -> Result<NormSettings> {
            let d = NormSettings::mnist(norm);
            let key = |k: &str| format!("attack.{norm}.{k}");
            Ok(NormSettings {
                norm,
                epsilon: cfg.parsed(&key("epsilon"), d.epsilon)?,
                alpha: cfg.parsed(&key("alpha"), d.alpha)?,
                iterations: cfg.parsed(&key("iterations"), d.iterations)?,
                restarts: cfg.parsed(&key("restarts"), d.restarts)?,
                k_range: (
                    cfg.parsed(&key("k_min"), d.k_range.0)?,
                    cfg.parsed(&key("k_max"), d.k_range.1)?,
                ),
                momentum: cfg.parsed(&key("momentum"), d.momentum)?,
                eval_iterations: cfg.parsed(&key("eval_iterations"), d.eval_iterations)?,
                eval_restarts: cfg.parsed(&key("eval_restarts"), d.eval_restarts)?,
            })
        });
        let [a0, a1, a2] = attacks;
        let attacks = [a0?, a1?, a2?];

        let mut norms: Vec<NormKind> = cfg.list("train.norms", NormKind::ALL.to_vec())?;
        norms.sort();
        let strategy: Strategy = cfg.parsed("train.strategy", Strategy::Msd)?;
        let specs = norms
            .iter()
            .map(|&n| attacks[n as usize].training_spec())
            .collect::<Result<Vec<_>>>()?;

        let optimizer = match cfg.get("train.optimizer").unwrap_or("adam") {
            "adam" => Optimizer::Adam {
                beta1: cfg.parsed("train.beta1", 0.9)?,
                beta2: cfg.parsed("train.beta2", 0.999)?,
                eps: cfg.parsed("train.adam_eps", 1e-8)?,
                weight_decay: cfg.parsed("train.weight_decay", 0.0)?,
            },
            "sgd" => Optimizer::Sgd {
                momentum: cfg.parsed("train.momentum", 0.9)?,
                weight_decay: cfg.parsed("train.weight_decay", 0.0)?,
            },
            other => return Err(Error::Config(format!("unknown train.optimizer {other:?}"))),
        };
        let schedule = parse_schedule(cfg.get("train.lr_schedule").unwrap_or("0:0,6:0.001,15:0"))?;

        let train = TrainConfig {
            strategy,
            specs,
            msd_iterations: cfg.parsed("train.msd_iterations", 100)?,
            msd_restarts: cfg.parsed("train.msd_restarts", 1)?,
            optimizer,
            schedule,
            epochs: cfg.parsed("train.epochs", 15)?,
            batch_size: cfg.parsed("train.batch_size", 50)?,
            seed: cfg.parsed("train.seed", 0)?,
        };
        train.validate()?;

        let eval = EvalSettings {
            attacks: match cfg.get("eval.attacks") {
                None | Some("default") => None,
                Some(_) => Some(cfg.list("eval.attacks", Vec::new())?),
            },
            trials: cfg.parsed("eval.trials", 10)?,
            pointwise_restarts: cfg.parsed("eval.pointwise_restarts", 10)?,
            seed: cfg.parsed("eval.seed", 0)?,
            limit: cfg.parsed("eval.limit", 0)?,
            sparsity_threshold: cfg.parsed("eval.sparsity_threshold", DEFAULT_SPARSITY_THRESHOLD)?,
        };

        Ok(Self {
            data,
            model: cfg.get("train.model").unwrap_or("mlp").to_owned(),
            hidden: cfg.list("train.hidden", vec![32, 32])?,
            filters: match cfg.list::<usize>("train.filters", vec![32, 64])?.as_slice() {
                [a, b] => [*a, *b],
                _ => return Err(Error::Config("train.filters needs exactly two counts".into())),
            },
            fc_hidden: cfg.parsed("train.fc_hidden", 1024)?,
            train,
            norms,
            attacks,
            eval,
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut cfg = ConfigFile::load(path)?;
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Self::from_config(&cfg)
    }

    pub fn norm(&self, norm: NormKind) -> &NormSettings {
        &self.attacks[norm as usize]
    }

    /// Model for data with the given example shape and class count.
    pub fn model_spec(&self, input_shape: [usize; 3], classes: usize) -> Result<ModelSpec> {
        let spec = match self.model.as_str() {
            "mlp" => ModelSpec::mlp(input_shape, self.hidden.clone(), classes),
            "cnn" => ModelSpec {
                input_shape,
                classes,
                ..ModelSpec::cnn(self.filters, self.fc_hidden)
            },
            "mnist_cnn" => ModelSpec::mnist_cnn(),
            "mnist_cnn_scaled" => ModelSpec::mnist_cnn_scaled(),
            other => return Err(Error::Config(format!("unknown train.model {other:?}"))),
        };
        if spec.input_shape != input_shape {
            return Err(Error::Config(format!(
                "model {} expects inputs {:?}, data has {input_shape:?}",
                self.model, spec.input_shape
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn msd_config(&self) -> Result<MsdConfig> {
        self.train.msd_config()
    }

    /// Evaluation-strength PGD specs for every norm in `train.norms`.
    pub fn eval_specs(&self) -> Result<Vec<PerturbationSpec>> {
        self.norms.iter().map(|&n| self.norm(n).eval_spec()).collect()
    }

    /// The standard suite over all three norms, ignoring `eval.attacks`.
    pub fn suite_all(&self) -> Result<AttackSuite> {
        let specs = NormKind::ALL
            .iter()
            .map(|&n| self.norm(n).eval_spec())
            .collect::<Result<Vec<_>>>()?;
        AttackSuite::standard(&specs, self.eval.trials, self.eval.pointwise_restarts)
    }

    /// The standard suite over all three norms, restricted to `eval.attacks`
    /// when given.
    pub fn suite(&self) -> Result<AttackSuite> {
        let full = self.suite_all()?;
        match &self.eval.attacks {
            None => Ok(full),
            Some(ids) => full.select(&ids.iter().map(String::as_str).collect::<Vec<_>>()),
        }
    }
}

/// `epoch:lr` pairs separated by commas, e.g. `0:0,6:0.001,15:0`.
pub fn parse_schedule(text: &str) -> Result<LrSchedule> {
    let points = text
        .split(',')
        .map(|pair| {
            let (e, lr) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry {pair:?} is not epoch:lr")))?;
            let e: f64 = e.trim().parse().map_err(|_| Error::Config(format!("bad schedule epoch {e:?}")))?;
            let lr: f64 = lr.trim().parse().map_err(|_| Error::Config(format!("bad schedule rate {lr:?}")))?;
            Ok((e, lr))
        })
        .collect::<Result<Vec<_>>>()?;
    LrSchedule::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = ConfigFile::parse("train.epochs = 3\ntrian.epochs = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("trian.epochs") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn comments_overrides_and_defaults() {
        let mut cfg = ConfigFile::parse("# header\ntrain.seed = 4 # inline\n\nattack.l1.epsilon=12\n").unwrap();
        cfg.apply_override("train.seed=9").unwrap();
        let s = Settings::from_config(&cfg).unwrap();
        assert_eq!(s.train.seed, 9);
        assert_eq!(s.norm(NormKind::L1).epsilon, 12.0);
        assert_eq!(s.norm(NormKind::L2).epsilon, 2.0);
        assert_eq!(s.norm(NormKind::Linf).alpha, 0.01);
        assert_eq!(s.train.specs.len(), 3);
        assert!((s.train.schedule.at(3.0) - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn every_known_key_parses() {
        for k in known_keys() {
            assert!(is_known(&k), "{k}");
        }
        assert!(!is_known("attack.l3.epsilon"));
        assert!(!is_known("train"));
    }

    #[test]
    fn suite_selection() {
        let cfg = ConfigFile::parse("eval.attacks = linf.pgd, l1.pointwise").unwrap();
        let s = Settings::from_config(&cfg).unwrap();
        assert_eq!(s.suite().unwrap().ids(), vec!["linf.pgd", "l1.pointwise"]);
        let cfg = ConfigFile::parse("eval.attacks = none").unwrap();
        assert!(Settings::from_config(&cfg).unwrap().suite().unwrap().is_empty());
        let cfg = ConfigFile::parse("eval.attacks = linf.cw").unwrap();
        assert!(Settings::from_config(&cfg).unwrap().suite().is_err());
    }
}

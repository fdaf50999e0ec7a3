//! Adversarial robustness against the union of l-infinity, l2 and l1
//! perturbation models.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense `f64` tensors and a reverse-mode tape.
//! - [`models`]: an MLP and the two-conv MNIST network.
//! - [`geometry`]: norms, steepest directions, exact ball projections.
//! - [`adversary`]: PGD, FGSM, MIM, multi steepest descent (MSD) and
//!   gradient-free attacks.
//! - [`training`]: adversarial training with the single, max, avg and MSD
//!   strategies.
//! - [`evaluation`]: per-example worst case over attack suites, robustness
//!   curves and a first-layer filter diagnostic.
//! - [`data`] and [`checkpoint`]: IDX datasets, synthetic data, model files.
//! - [`config`]: the flat `key=value` configuration format.

pub mod adversary;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{BallSpec, NormKind};
pub use models::{Classifier, ModelSpec, Network, ParameterSet};
pub use tensor::Tensor;

//! Minimal reverse-mode differentiable compute: named parameter storage,
//! layer forwards with hand-derived backward passes (MLP, GRU cell,
//! one-layer GCN, softmax and Gaussian-mixture heads), losses, an
//! adaptive-moment optimizer, and finite-difference verification.
//!
//! There is deliberately no general tape: every layer the pipeline needs
//! has an explicit vector-Jacobian product, and every one of them is
//! checked against central finite differences in the tests.

mod checkpoint;
mod fdcheck;
mod layers;
mod loss;
mod optim;
mod params;

pub use fdcheck::finite_difference_check;
pub use layers::{sigmoid, Activation, GcnSpec, GruCache, GruSpec, MlpCache, MlpSpec};
pub use loss::{
    cross_entropy_loss, gmm_nll, gmm_nll_from_raw, mixture_from_raw, mse_loss, softmax,
    softmax_backward, MixtureCoeffs, MixtureGrad,
};
pub use optim::{optimizer_step, AdamState};
pub use params::{GradientMap, ParameterSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: input has {got} columns, expected {want}")]
    InputWidth { op: &'static str, got: usize, want: usize },
    #[error("{op}: operand shapes {a} and {b} do not match")]
    ShapeMismatch { op: &'static str, a: String, b: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("mixture scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("mixture weights must be a simplex (sum {0})")]
    BadMixtureWeights(f64),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("gradient for unknown parameter {0}")]
    UnknownParameter(String),
    #[error("graph error: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint file: {0}")]
    BadCheckpoint(String),
}

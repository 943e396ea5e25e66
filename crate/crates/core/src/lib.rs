//! Simulation and estimation of causal effects when treatments are
//! entangled through a dynamic graph.
//!
//! The crate has two halves that meet only at the data model:
//!
//! * [`sim`] generates observational panels `{X, A, T, Y}` over time from a
//!   known causal process with hidden confounders, keeping the exact
//!   per-unit effects as ground truth.
//! * [`estimator`] recovers those effects from the observational half
//!   alone, using the graph neighborhood of each node as an instrument in
//!   a two-stage pipeline: stage one models the treatment distribution
//!   with a graph convolution over learned node representations, stage two
//!   regresses the outcome on the expectation over that distribution.
//!
//! [`baselines`] holds graph-blind reference estimators, [`metrics`] the
//! error measures, [`graph`] the shared graph model, and [`nn`] the small
//! reverse-mode layer library everything trains with.

pub mod baselines;
pub mod estimator;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod seeding;
pub mod sim;

pub use estimator::{Stage1Model, Stage2Model, TrainConfig, Variant};
pub use graph::{DynamicGraph, GraphSnapshot, NormalizedAdjacency};
pub use metrics::EvalReport;
pub use nn::{GradientMap, ParameterSet};
pub use sim::{GroundTruth, PanelDataset, SimConfig, SimParams, TreatmentKind};

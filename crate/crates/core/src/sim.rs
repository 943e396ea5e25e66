//! Synthetic observational panels with known causal structure.
//!
//! Each timestamp is generated in a fixed order: graph, hidden confounders
//! (an isotropic Gaussian at the first timestamp, a linear map of rolled
//! history plus unit noise afterwards), features as a noisy linear map of
//! the confounders, treatments from a logit that mixes a unit's own
//! projected features with the mean over its neighbors (mixing weight
//! `lambda`), and outcomes that are linear in treatment with a hidden
//! confounder term scaled by `beta`.
//!
//! The simulator keeps both potential outcomes per unit with a shared
//! noise realization, so the stored per-unit effects are exact.

use crate::graph::{generate_er_graph, neighbor_mean, DynamicGraph, GraphSnapshot};
use crate::nn::sigmoid;
use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("{1} must be nonnegative, got {0}")]
    Negative(f64, &'static str),
    #[error("{0} must be positive")]
    ZeroDimension(&'static str),
    #[error("history lag must be below the number of timestamps ({lag} >= {timestamps})")]
    LagTooLong { lag: usize, timestamps: usize },
    #[error("only scalar treatments are supported (d_t = 1), got {0}")]
    UnsupportedTreatmentWidth(usize),
    #[error("edge probability must lie in [0, 1], got {0}")]
    EdgeProbOutOfRange(f64),
    #[error("graph error: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("{op}: dimension mismatch ({details})")]
    Dimensions { op: &'static str, details: String },
}

/// Whether treatments are thresholded to {0, 1} or kept real-valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

/// Everything that pins a simulated panel, including the seed.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_units: usize,
    pub n_timestamps: usize,
    pub d_x: usize,
    pub d_u: usize,
    pub d_t: usize,
    /// Strength of treatment entanglement: 0 = own features only,
    /// 1 = neighbor mean only.
    pub lambda: f64,
    /// Strength of the hidden confounder in the outcome.
    pub beta: f64,
    /// Confounder variance at the first timestamp.
    pub mu: f64,
    /// Number of previous timestamps that feed the rolled history.
    pub r_lag: usize,
    pub edge_prob: f64,
    pub treatment_kind: TreatmentKind,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_units: 500,
            n_timestamps: 4,
            d_x: 8,
            d_u: 8,
            d_t: 1,
            lambda: 0.5,
            beta: 0.5,
            mu: 20.0,
            r_lag: 3,
            // expected degree ~2 at the default unit count
            edge_prob: 0.004,
            treatment_kind: TreatmentKind::Binary,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_units == 0 {
            return Err(SimError::ZeroDimension("n_units"));
        }
        if self.n_timestamps == 0 {
            return Err(SimError::ZeroDimension("n_timestamps"));
        }
        for (v, name) in [(self.d_x, "d_x"), (self.d_u, "d_u"), (self.r_lag, "r_lag")] {
            if v == 0 {
                return Err(SimError::ZeroDimension(name));
            }
        }
        if self.d_t != 1 {
            return Err(SimError::UnsupportedTreatmentWidth(self.d_t));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SimError::LambdaOutOfRange(self.lambda));
        }
        if !(self.beta >= 0.0) {
            return Err(SimError::Negative(self.beta, "beta"));
        }
        if !(self.mu >= 0.0) {
            return Err(SimError::Negative(self.mu, "mu"));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(SimError::EdgeProbOutOfRange(self.edge_prob));
        }
        if self.n_timestamps > 1 && self.r_lag >= self.n_timestamps {
            return Err(SimError::LagTooLong { lag: self.r_lag, timestamps: self.n_timestamps });
        }
        Ok(())
    }

    /// Width of the rolled history: one weighted block per data family
    /// (confounders, features, treatments, outcome).
    pub fn history_dim(&self) -> usize {
        self.d_u + self.d_x + self.d_t + 1
    }

    /// Width of the concatenated `[X, M]` input the treatment and outcome
    /// coefficients act on.
    pub fn effective_dim(&self) -> usize {
        self.d_x + self.history_dim()
    }
}

/// All drawn simulation coefficients, fixed once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Treatment loading on the concatenated `[X, M]`, `d_eff × d_t`.
    pub theta_t_x: Array2<f64>,
    /// Treatment loading on the hidden confounders, `d_u × d_t`.
    pub theta_t_u: Array2<f64>,
    /// Outcome slope in the treatment, length `d_eff`.
    pub theta_y: Array1<f64>,
    /// Outcome base term, length `d_eff`.
    pub theta_0: Array1<f64>,
    /// Outcome loading on the hidden confounders, length `d_u`.
    pub theta_u: Array1<f64>,
    /// Features from confounders, `d_u × d_x`.
    pub psi: Array2<f64>,
    /// Confounders from rolled history, `d_m × d_u`.
    pub psi_u: Array2<f64>,
    /// Per-lag history weights, length `r_lag`, index 0 = most recent lag.
    pub w_u: Array1<f64>,
    pub w_x: Array1<f64>,
    pub w_t: Array1<f64>,
    pub w_y: Array1<f64>,
}

const EPS_X_STD: f64 = 0.1;
const EPS_T_STD: f64 = 0.01;
const EPS_Y_STD: f64 = 0.1;
const THETA_T_STD: f64 = 0.5;
const THETA_Y_STD: f64 = 0.1;
const THETA_0_STD: f64 = 0.05;
const THETA_U_STD: f64 = 0.1;

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal) * std)
}

fn normal_vector<R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.sample::<f64, _>(StandardNormal) * std)
}

/// Draws every coefficient family from its distribution. Deterministic
/// given the rng; the draw order is fixed.
pub fn draw_parameters<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> SimParams {
    let d_eff = cfg.effective_dim();
    let d_m = cfg.history_dim();
    let lag_weights = |rng: &mut R| {
        let r_max = cfg.r_lag as f64;
        Array1::from_shape_fn(cfg.r_lag, |i| {
            let r = (i + 1) as f64;
            1.0 - r / r_max + rng.sample::<f64, _>(StandardNormal) / r_max
        })
    };
    SimParams {
        theta_t_x: normal_matrix(d_eff, cfg.d_t, THETA_T_STD, rng),
        theta_t_u: normal_matrix(cfg.d_u, cfg.d_t, THETA_T_STD, rng),
        theta_y: normal_vector(d_eff, THETA_Y_STD, rng),
        theta_0: normal_vector(d_eff, THETA_0_STD, rng),
        theta_u: normal_vector(cfg.d_u, THETA_U_STD, rng),
        psi: normal_matrix(cfg.d_u, cfg.d_x, 1.0 / (cfg.d_u as f64).sqrt(), rng),
        psi_u: normal_matrix(d_m, cfg.d_u, 1.0 / (d_m as f64).sqrt(), rng),
        w_u: lag_weights(rng),
        w_x: lag_weights(rng),
        w_t: lag_weights(rng),
        w_y: lag_weights(rng),
    }
}

/// Isotropic Gaussian confounders with variance `mu` (first timestamp).
pub fn simulate_confounders_static<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Array2<f64> {
    normal_matrix(cfg.n_units, cfg.d_u, cfg.mu.sqrt(), rng)
}

/// Features as a linear map of the confounders plus entrywise noise.
pub fn simulate_features<R: Rng + ?Sized>(
    confounders: ArrayView2<f64>,
    params: &SimParams,
    rng: &mut R,
) -> Result<Array2<f64>, SimError> {
    if confounders.ncols() != params.psi.nrows() {
        return Err(SimError::Dimensions {
            op: "simulate_features",
            details: format!(
                "{} confounder columns vs psi {}",
                confounders.ncols(),
                params.psi.nrows()
            ),
        });
    }
    let x = confounders.dot(&params.psi);
    let noise = normal_matrix(x.nrows(), x.ncols(), EPS_X_STD, rng);
    Ok(x + noise)
}

/// The deterministic pieces of the treatment logit before noise:
/// `(1−λ)·own + λ·neighbor + confounder`, where `own = X_eff · Θ_{t,x}`
/// and `neighbor` is its mean over each unit's neighborhood.
pub struct LogitTerms {
    pub own: Array2<f64>,
    pub neighbor: Array2<f64>,
    pub confounder: Array2<f64>,
}

impl LogitTerms {
    pub fn combine(&self, lambda: f64) -> Array2<f64> {
        (1.0 - lambda) * &self.own + lambda * &self.neighbor + &self.confounder
    }
}

/// Decomposes the treatment logit for a snapshot. Isolated nodes get a
/// zero neighbor term.
pub fn treatment_logits(
    graph: &GraphSnapshot,
    x_eff: ArrayView2<f64>,
    confounders: ArrayView2<f64>,
    params: &SimParams,
) -> Result<LogitTerms, SimError> {
    if x_eff.ncols() != params.theta_t_x.nrows() {
        return Err(SimError::Dimensions {
            op: "treatment_logits",
            details: format!(
                "{} feature columns vs theta_t_x {}",
                x_eff.ncols(),
                params.theta_t_x.nrows()
            ),
        });
    }
    if confounders.ncols() != params.theta_t_u.nrows() {
        return Err(SimError::Dimensions {
            op: "treatment_logits",
            details: format!(
                "{} confounder columns vs theta_t_u {}",
                confounders.ncols(),
                params.theta_t_u.nrows()
            ),
        });
    }
    let own = x_eff.dot(&params.theta_t_x);
    let neighbor = neighbor_mean(graph, own.view())?;
    let confounder = confounders.dot(&params.theta_t_u);
    Ok(LogitTerms { own, neighbor, confounder })
}

/// Samples treatments. Binary treatments pass the noisy logit through a
/// sigmoid and a Bernoulli draw; continuous treatments are the noisy
/// logit itself.
pub fn simulate_treatment<R: Rng + ?Sized>(
    graph: &GraphSnapshot,
    x_eff: ArrayView2<f64>,
    confounders: ArrayView2<f64>,
    params: &SimParams,
    lambda: f64,
    kind: TreatmentKind,
    rng: &mut R,
) -> Result<Array2<f64>, SimError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SimError::LambdaOutOfRange(lambda));
    }
    let terms = treatment_logits(graph, x_eff, confounders, params)?;
    let noise = normal_matrix(x_eff.nrows(), params.theta_t_x.ncols(), EPS_T_STD, rng);
    let logits = terms.combine(lambda) + noise;
    match kind {
        TreatmentKind::Continuous => Ok(logits),
        TreatmentKind::Binary => {
            let mut t = logits;
            for v in t.iter_mut() {
                let prob = sigmoid(*v);
                *v = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
            }
            Ok(t)
        }
    }
}

/// Observed and potential outcomes for one timestamp. The same noise
/// realization is shared across every treatment value of a unit, so
/// `y_at_t - y_at_t0` is exactly the treatment term difference.
#[derive(Debug, Clone)]
pub struct Outcomes {
    pub observed: Array1<f64>,
    pub y_at_t: Array1<f64>,
    pub y_at_t0: Array1<f64>,
}

pub fn simulate_outcomes<R: Rng + ?Sized>(
    x_eff: ArrayView2<f64>,
    confounders: ArrayView2<f64>,
    treatments: ArrayView2<f64>,
    params: &SimParams,
    beta: f64,
    t_value: f64,
    t0_value: f64,
    rng: &mut R,
) -> Result<Outcomes, SimError> {
    if !(beta >= 0.0) {
        return Err(SimError::Negative(beta, "beta"));
    }
    let n = x_eff.nrows();
    if confounders.nrows() != n || treatments.nrows() != n || treatments.ncols() != 1 {
        return Err(SimError::Dimensions {
            op: "simulate_outcomes",
            details: format!(
                "rows x={} u={} t={}x{}",
                n,
                confounders.nrows(),
                treatments.nrows(),
                treatments.ncols()
            ),
        });
    }
    let slope = x_eff.dot(&params.theta_y);
    let base = x_eff.dot(&params.theta_0);
    let confounding = confounders.dot(&params.theta_u) * beta;
    let noise = normal_vector(n, EPS_Y_STD, rng);
    let at = |t: f64| -> Array1<f64> { t * &slope + &base + &confounding + &noise };
    let mut observed = Array1::zeros(n);
    for i in 0..n {
        let t_i = treatments[(i, 0)];
        observed[i] = t_i * slope[i] + base[i] + confounding[i] + noise[i];
    }
    Ok(Outcomes { observed, y_at_t: at(t_value), y_at_t0: at(t0_value) })
}

/// One timestamp of realized data, as fed back into the history roll.
#[derive(Debug, Clone)]
pub struct TimestepRecord {
    pub confounders: Array2<f64>,
    pub features: Array2<f64>,
    pub treatments: Array2<f64>,
    pub outcomes: Array1<f64>,
}

/// Rolls the previous `r_lag` timestamps into the history matrix: one
/// lag-weighted block per data family, concatenated. `previous` is
/// ordered oldest to newest; missing lags are zero-padded.
pub fn roll_history(
    previous: &[&TimestepRecord],
    params: &SimParams,
    cfg: &SimConfig,
) -> Array2<f64> {
    let n = cfg.n_units;
    let mut block_u = Array2::zeros((n, cfg.d_u));
    let mut block_x = Array2::zeros((n, cfg.d_x));
    let mut block_t = Array2::zeros((n, cfg.d_t));
    let mut block_y = Array2::zeros((n, 1));
    // lag r = 1 is the newest available record
    for (r, record) in previous.iter().rev().enumerate().take(cfg.r_lag) {
        block_u.scaled_add(params.w_u[r], &record.confounders);
        block_x.scaled_add(params.w_x[r], &record.features);
        block_t.scaled_add(params.w_t[r], &record.treatments);
        let y = record.outcomes.view().insert_axis(Axis(1));
        block_y.scaled_add(params.w_y[r], &y);
    }
    concatenate![Axis(1), block_u, block_x, block_t, block_y]
}

/// Confounders as a linear map of the rolled history plus unit-variance
/// Gaussian noise (timestamps after the first).
pub fn simulate_confounders_dynamic<R: Rng + ?Sized>(
    history: ArrayView2<f64>,
    params: &SimParams,
    rng: &mut R,
) -> Result<Array2<f64>, SimError> {
    if history.ncols() != params.psi_u.nrows() {
        return Err(SimError::Dimensions {
            op: "simulate_confounders_dynamic",
            details: format!(
                "{} history columns vs psi_u {}",
                history.ncols(),
                params.psi_u.nrows()
            ),
        });
    }
    let mean = history.dot(&params.psi_u);
    let noise = normal_matrix(mean.nrows(), mean.ncols(), 1.0, rng);
    Ok(mean + noise)
}

/// Observational panel: everything an estimator is allowed to see.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub features: Vec<Array2<f64>>,
    pub graphs: DynamicGraph,
    pub treatments: Vec<Array2<f64>>,
    pub outcomes: Vec<Array1<f64>>,
    pub treatment_kind: TreatmentKind,
}

impl PanelDataset {
    pub fn n_units(&self) -> usize {
        self.graphs.n()
    }

    pub fn n_timestamps(&self) -> usize {
        self.graphs.num_timestamps()
    }

    pub fn d_x(&self) -> usize {
        self.features[0].ncols()
    }

    pub fn d_t(&self) -> usize {
        self.treatments[0].ncols()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.n_units();
        let p = self.n_timestamps();
        let consistent = self.features.len() == p
            && self.treatments.len() == p
            && self.outcomes.len() == p
            && self.features.iter().all(|x| x.nrows() == n)
            && self.treatments.iter().all(|t| t.nrows() == n)
            && self.outcomes.iter().all(|y| y.len() == n);
        if !consistent {
            return Err(SimError::Dimensions {
                op: "PanelDataset::validate",
                details: "per-timestamp lengths disagree".into(),
            });
        }
        if self.treatment_kind == TreatmentKind::Binary {
            let binary = self.treatments.iter().all(|t| t.iter().all(|&v| v == 0.0 || v == 1.0));
            if !binary {
                return Err(SimError::Dimensions {
                    op: "PanelDataset::validate",
                    details: "binary panel contains non-binary treatment values".into(),
                });
            }
        }
        Ok(())
    }
}

/// What only the simulator knows: confounders, rolled histories, both
/// potential outcomes at the contrast pair, and the exact effects.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub confounders: Vec<Array2<f64>>,
    pub histories: Vec<Array2<f64>>,
    pub y_at_t: Vec<Array1<f64>>,
    pub y_at_t0: Vec<Array1<f64>>,
    pub effects: Vec<Array1<f64>>,
    pub t_value: f64,
    pub t0_value: f64,
}

/// Default contrast: effect of treatment 1 against baseline 0.
pub const DEFAULT_T: f64 = 1.0;
pub const DEFAULT_T0: f64 = 0.0;

/// Runs the full generative chain with freshly drawn parameters, seeding
/// everything from `cfg.seed`.
pub fn simulate_panel(cfg: &SimConfig) -> Result<(PanelDataset, GroundTruth), SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = draw_parameters(cfg, &mut rng);
    simulate_panel_with_params(cfg, &params, &mut rng)
}

/// The generative chain with caller-supplied coefficients. Per timestamp:
/// graph, history roll, confounders, features, treatment on `[X, M]`,
/// outcomes on `[X, M]`. A single-timestamp panel degenerates to the
/// static chain since the history is identically zero.
pub fn simulate_panel_with_params<R: Rng + ?Sized>(
    cfg: &SimConfig,
    params: &SimParams,
    rng: &mut R,
) -> Result<(PanelDataset, GroundTruth), SimError> {
    cfg.validate()?;
    let mut snapshots = Vec::with_capacity(cfg.n_timestamps);
    let mut records: Vec<TimestepRecord> = Vec::with_capacity(cfg.n_timestamps);
    let mut histories = Vec::with_capacity(cfg.n_timestamps);
    let mut y_at_t = Vec::new();
    let mut y_at_t0 = Vec::new();
    let mut effects = Vec::new();
    let mut observed = Vec::new();

    for p in 0..cfg.n_timestamps {
        let graph = generate_er_graph(cfg.n_units, cfg.edge_prob, rng)?;
        let window: Vec<&TimestepRecord> = records.iter().rev().take(cfg.r_lag).rev().collect();
        let history = roll_history(&window, params, cfg);
        let confounders = if p == 0 {
            simulate_confounders_static(cfg, rng)
        } else {
            simulate_confounders_dynamic(history.view(), params, rng)?
        };
        let features = simulate_features(confounders.view(), params, rng)?;
        let x_eff = concatenate![Axis(1), features.view(), history.view()];
        let treatments = simulate_treatment(
            &graph,
            x_eff.view(),
            confounders.view(),
            params,
            cfg.lambda,
            cfg.treatment_kind,
            rng,
        )?;
        let outcomes = simulate_outcomes(
            x_eff.view(),
            confounders.view(),
            treatments.view(),
            params,
            cfg.beta,
            DEFAULT_T,
            DEFAULT_T0,
            rng,
        )?;

        effects.push(&outcomes.y_at_t - &outcomes.y_at_t0);
        y_at_t.push(outcomes.y_at_t);
        y_at_t0.push(outcomes.y_at_t0);
        observed.push(outcomes.observed.clone());
        histories.push(history);
        snapshots.push(graph);
        records.push(TimestepRecord {
            confounders,
            features,
            treatments,
            outcomes: outcomes.observed,
        });
    }

    let panel = PanelDataset {
        features: records.iter().map(|r| r.features.clone()).collect(),
        graphs: DynamicGraph::new(snapshots)?,
        treatments: records.iter().map(|r| r.treatments.clone()).collect(),
        outcomes: observed,
        treatment_kind: cfg.treatment_kind,
    };
    let truth = GroundTruth {
        confounders: records.into_iter().map(|r| r.confounders).collect(),
        histories,
        y_at_t,
        y_at_t0,
        effects,
        t_value: DEFAULT_T,
        t0_value: DEFAULT_T0,
    };
    Ok((panel, truth))
}

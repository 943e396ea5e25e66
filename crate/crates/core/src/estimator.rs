//! Two-stage effect estimation with the graph neighborhood as the
//! instrument.
//!
//! Stage one learns, per timestamp, a node representation from features
//! and a recurrent history embedding, and models the treatment
//! distribution with one graph convolution over `[X, Z]` — discrete
//! treatments get a softmax, continuous ones a Gaussian mixture. Stage
//! two freezes all of that and regresses the observed outcome on the
//! expectation of an outcome head `H(t, M, X)` under the stage-one
//! distribution. Effects are then direct counterfactual differences of
//! `H`; no graph is needed at query time.
//!
//! Ablation variants: `NoTreatmentModel` replaces the learned
//! distribution with uniform random assignment, `NoGraph` swaps the
//! normalized adjacency for the identity, `NoHistory` pins the history
//! embedding to zero.

use crate::graph::{normalize_adjacency, NormalizedAdjacency};
use crate::nn::{
    cross_entropy_loss, gmm_nll_from_raw, mixture_from_raw, mse_loss, optimizer_step, softmax,
    AdamState, Activation, GcnSpec, GradientMap, GruSpec, MixtureCoeffs, MlpSpec, NnError,
    ParameterSet,
};
use crate::seeding::derive_seed;
use crate::sim::{PanelDataset, SimError, TreatmentKind};
use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("nn: {0}")]
    Nn(#[from] NnError),
    #[error("graph: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("panel: {0}")]
    Panel(#[from] SimError),
    #[error("mask has {got} entries for {want} units")]
    MaskLength { got: usize, want: usize },
    #[error("no units selected for training")]
    EmptyTrainSet,
    #[error("history state is at timestamp {state}, inputs are from {input}")]
    TimestampRegression { state: usize, input: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("treatment value {0} outside the model's treatment domain")]
    TreatmentOutOfDomain(f64),
    #[error("panel treatment kind does not match the model")]
    KindMismatch,
}

/// Ablation variants of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Replace stage one with uniform random treatment assignment.
    NoTreatmentModel,
    /// Replace the adjacency in the treatment model with the identity.
    NoGraph,
    /// Pin the history embedding to zero.
    NoHistory,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoTreatmentModel => "nt",
            Variant::NoGraph => "ng",
            Variant::NoHistory => "nh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Some(Variant::Full),
            "nt" => Some(Variant::NoTreatmentModel),
            "ng" => Some(Variant::NoGraph),
            "nh" => Some(Variant::NoHistory),
            _ => None,
        }
    }
}

/// Architecture and optimization settings for both stages.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Monte-Carlo draws for the continuous-treatment expectation.
    pub mc_samples: usize,
    /// Node representation width.
    pub d_z: usize,
    /// History embedding width.
    pub d_m: usize,
    /// Hidden width of the encoder and outcome head.
    pub hidden: usize,
    /// Gaussian-mixture components for continuous treatments.
    pub mixture_components: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.004,
            seed: 0,
            variant: Variant::Full,
            mc_samples: 32,
            d_z: 32,
            d_m: 20,
            hidden: 32,
            mixture_components: 3,
        }
    }
}

/// Per-unit treatment distribution out of stage one.
#[derive(Debug, Clone)]
pub enum TreatmentDistribution {
    /// Class probabilities, `N × 2` for the binary treatment.
    Discrete(Array2<f64>),
    Mixture(MixtureCoeffs),
}

/// Per-unit history embeddings at one timestamp.
#[derive(Debug, Clone)]
pub struct HistoryState {
    pub m: Array2<f64>,
    pub timestamp: usize,
}

/// Stage one: encoder, recurrent history cell, and treatment head.
#[derive(Debug, Clone)]
pub struct Stage1Model {
    pub params: ParameterSet,
    kind: TreatmentKind,
    variant: Variant,
    d_x: usize,
    d_m: usize,
    phi: MlpSpec,
    gru: GruSpec,
    head: GcnSpec,
}

/// Teacher-forced forward pass over a panel: history embeddings and node
/// encodings per timestamp.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub histories: Vec<Array2<f64>>,
    pub encodings: Vec<Array2<f64>>,
}

impl Stage1Model {
    pub fn new<R: Rng + ?Sized>(
        kind: TreatmentKind,
        d_x: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Self {
        let head_out = match kind {
            TreatmentKind::Binary => 2,
            TreatmentKind::Continuous => 3 * cfg.mixture_components,
        };
        let phi = MlpSpec::new(
            "phi",
            &[d_x + cfg.d_m, cfg.hidden, cfg.d_z],
            Activation::Relu,
            Activation::Linear,
        );
        // recurrent inputs: [T, Y, Z, X] at the previous timestamp
        let gru = GruSpec::new("hist", 1 + 1 + cfg.d_z + d_x, cfg.d_m);
        let head = GcnSpec::new("head", d_x + cfg.d_z, head_out, Activation::Linear);
        let mut params = ParameterSet::new();
        phi.init(&mut params, rng);
        gru.init(&mut params, rng);
        head.init(&mut params, rng);
        Self { params, kind, variant: cfg.variant, d_x, d_m: cfg.d_m, phi, gru, head }
    }

    pub fn kind(&self) -> TreatmentKind {
        self.kind
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn d_m(&self) -> usize {
        self.d_m
    }

    /// Zero history at the first timestamp.
    pub fn initial_history(&self, n_units: usize) -> HistoryState {
        HistoryState { m: Array2::zeros((n_units, self.d_m)), timestamp: 0 }
    }

    /// Node representation from features and history: `Φ([X, M])`.
    /// The static case is the same encoder with a zero history.
    pub fn encode_nodes(
        &self,
        x: ArrayView2<f64>,
        m: ArrayView2<f64>,
    ) -> Result<Array2<f64>, EstimatorError> {
        let input = concatenate![Axis(1), x, m];
        Ok(self.phi.forward(&self.params, input.view())?)
    }

    /// One recurrent step: consumes the data at `state.timestamp` and
    /// returns the embedding for the next timestamp. Inputs from any
    /// other timestamp are rejected. The `NoHistory` variant pins the
    /// state to zero.
    pub fn update_history(
        &self,
        state: &HistoryState,
        input_timestamp: usize,
        t: ArrayView2<f64>,
        y: ArrayView1<f64>,
        z: ArrayView2<f64>,
        x: ArrayView2<f64>,
    ) -> Result<HistoryState, EstimatorError> {
        if input_timestamp != state.timestamp {
            return Err(EstimatorError::TimestampRegression {
                state: state.timestamp,
                input: input_timestamp,
            });
        }
        let next = state.timestamp + 1;
        if self.variant == Variant::NoHistory {
            return Ok(HistoryState { m: Array2::zeros(state.m.raw_dim()), timestamp: next });
        }
        let y2 = y.insert_axis(Axis(1));
        let input = concatenate![Axis(1), t, y2, z, x];
        let m = self.gru.step(&self.params, input.view(), state.m.view())?;
        Ok(HistoryState { m, timestamp: next })
    }

    /// The adjacency the treatment head actually sees: the identity for
    /// the `NoGraph` variant, the given normalization otherwise.
    fn effective_adjacency<'a>(&self, a_hat: &'a NormalizedAdjacency) -> EffectiveAdjacency<'a> {
        if self.variant == Variant::NoGraph {
            EffectiveAdjacency::Owned(NormalizedAdjacency::identity(a_hat.n()))
        } else {
            EffectiveAdjacency::Borrowed(a_hat)
        }
    }

    /// Treatment distribution per unit from the graph convolution over
    /// `[X, Z]`. `NoTreatmentModel` returns the uniform surrogate.
    pub fn predict_treatment(
        &self,
        a_hat: &NormalizedAdjacency,
        x: ArrayView2<f64>,
        z: ArrayView2<f64>,
    ) -> Result<TreatmentDistribution, EstimatorError> {
        let n = x.nrows();
        if self.variant == Variant::NoTreatmentModel {
            return Ok(uniform_distribution(self.kind, n));
        }
        let adj = self.effective_adjacency(a_hat);
        let input = concatenate![Axis(1), x, z];
        let raw = self.head.forward(&self.params, adj.get(), input.view())?;
        Ok(match self.kind {
            TreatmentKind::Binary => TreatmentDistribution::Discrete(softmax(raw.view())),
            TreatmentKind::Continuous => {
                TreatmentDistribution::Mixture(mixture_from_raw(raw.view())?)
            }
        })
    }

    /// Teacher-forced histories and encodings for a whole panel, using
    /// the observed treatments and outcomes as recurrent inputs.
    pub fn unroll(&self, panel: &PanelDataset) -> Result<Unrolled, EstimatorError> {
        if panel.treatment_kind != self.kind {
            return Err(EstimatorError::KindMismatch);
        }
        let n = panel.n_units();
        let timestamps = panel.n_timestamps();
        let mut state = self.initial_history(n);
        let mut histories = Vec::with_capacity(timestamps);
        let mut encodings = Vec::with_capacity(timestamps);
        for p in 0..timestamps {
            let z = self.encode_nodes(panel.features[p].view(), state.m.view())?;
            histories.push(state.m.clone());
            if p + 1 < timestamps {
                state = self.update_history(
                    &state,
                    p,
                    panel.treatments[p].view(),
                    panel.outcomes[p].view(),
                    z.view(),
                    panel.features[p].view(),
                )?;
            }
            encodings.push(z);
        }
        Ok(Unrolled { histories, encodings })
    }
}

enum EffectiveAdjacency<'a> {
    Borrowed(&'a NormalizedAdjacency),
    Owned(NormalizedAdjacency),
}

impl EffectiveAdjacency<'_> {
    fn get(&self) -> &NormalizedAdjacency {
        match self {
            EffectiveAdjacency::Borrowed(a) => a,
            EffectiveAdjacency::Owned(a) => a,
        }
    }
}

fn uniform_distribution(kind: TreatmentKind, n: usize) -> TreatmentDistribution {
    match kind {
        TreatmentKind::Binary => TreatmentDistribution::Discrete(Array2::from_elem((n, 2), 0.5)),
        TreatmentKind::Continuous => TreatmentDistribution::Mixture(MixtureCoeffs {
            weights: Array2::ones((n, 1)),
            means: Array2::zeros((n, 1)),
            scales: Array2::ones((n, 1)),
        }),
    }
}

/// Stage two: the outcome head `H(t, M, X)`.
#[derive(Debug, Clone)]
pub struct Stage2Model {
    pub params: ParameterSet,
    kind: TreatmentKind,
    d_m: usize,
    h: MlpSpec,
}

impl Stage2Model {
    pub fn new<R: Rng + ?Sized>(
        kind: TreatmentKind,
        d_x: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Self {
        let h = MlpSpec::new(
            "outcome",
            &[1 + cfg.d_m + d_x, cfg.hidden, 1],
            Activation::Relu,
            Activation::Linear,
        );
        let mut params = ParameterSet::new();
        h.init(&mut params, rng);
        Self { params, kind, d_m: cfg.d_m, h }
    }

    pub fn kind(&self) -> TreatmentKind {
        self.kind
    }

    pub fn d_m(&self) -> usize {
        self.d_m
    }

    fn check_treatment_value(&self, t: f64) -> Result<(), EstimatorError> {
        let ok = match self.kind {
            TreatmentKind::Binary => t == 0.0 || t == 1.0,
            TreatmentKind::Continuous => t.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(EstimatorError::TreatmentOutOfDomain(t))
        }
    }

    fn input(&self, t: ArrayView1<f64>, m: ArrayView2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
        let t2 = t.insert_axis(Axis(1));
        concatenate![Axis(1), t2, m, x]
    }

    /// `H(t, M, X)` per unit at a common treatment value.
    pub fn predict(
        &self,
        t: f64,
        m: ArrayView2<f64>,
        x: ArrayView2<f64>,
    ) -> Result<Array1<f64>, EstimatorError> {
        self.check_treatment_value(t)?;
        let t_col = Array1::from_elem(x.nrows(), t);
        let input = self.input(t_col.view(), m, x);
        let out = self.h.forward(&self.params, input.view())?;
        Ok(out.column(0).to_owned())
    }
}

fn gather_rows(a: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), a.ncols()));
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).assign(&a.row(i));
    }
    out
}

fn gather_vec(a: ArrayView1<f64>, idx: &[usize]) -> Array1<f64> {
    Array1::from_iter(idx.iter().map(|&i| a[i]))
}

fn scatter_rows(n: usize, rows: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((n, rows.ncols()));
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(i).assign(&rows.row(k));
    }
    out
}

fn train_indices(mask: &[bool], n: usize) -> Result<Vec<usize>, EstimatorError> {
    if mask.len() != n {
        return Err(EstimatorError::MaskLength { got: mask.len(), want: n });
    }
    let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(EstimatorError::EmptyTrainSet);
    }
    Ok(idx)
}

/// Trains the treatment model by minimizing the per-timestamp prediction
/// loss (cross-entropy for binary, mixture NLL for continuous) over the
/// masked units, unrolling the history forward in time and propagating
/// gradients back through it. Returns the per-epoch loss trace.
/// `NoTreatmentModel` skips training entirely.
pub fn train_stage1(
    model: &mut Stage1Model,
    panel: &PanelDataset,
    train_mask: &[bool],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, EstimatorError> {
    if panel.treatment_kind != model.kind {
        return Err(EstimatorError::KindMismatch);
    }
    panel.validate()?;
    if model.variant == Variant::NoTreatmentModel {
        return Ok(Vec::new());
    }
    let n = panel.n_units();
    let timestamps = panel.n_timestamps();
    let idx = train_indices(train_mask, n)?;
    let inv_p = 1.0 / timestamps as f64;
    let no_history = model.variant == Variant::NoHistory;

    let a_hats: Vec<NormalizedAdjacency> = (0..timestamps)
        .map(|p| match model.variant {
            Variant::NoGraph => NormalizedAdjacency::identity(n),
            _ => normalize_adjacency(panel.graphs.snapshot(p)),
        })
        .collect();
    let binary_labels: Vec<Vec<usize>> = match model.kind {
        TreatmentKind::Binary => (0..timestamps)
            .map(|p| idx.iter().map(|&i| panel.treatments[p][(i, 0)] as usize).collect())
            .collect(),
        TreatmentKind::Continuous => Vec::new(),
    };

    let mut state = AdamState::new();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // forward, keeping caches for the backward sweep
        let mut phi_caches = Vec::with_capacity(timestamps);
        let mut head_caches = Vec::with_capacity(timestamps);
        let mut gru_caches = Vec::with_capacity(timestamps.saturating_sub(1));
        let mut head_grads: Vec<Array2<f64>> = Vec::with_capacity(timestamps);
        let mut m = Array2::zeros((n, model.d_m));
        let mut loss = 0.0;
        for p in 0..timestamps {
            let x = &panel.features[p];
            let phi_in = concatenate![Axis(1), x.view(), m.view()];
            let (z, phi_cache) = model.phi.forward_cached(&model.params, phi_in.view())?;
            let head_in = concatenate![Axis(1), x.view(), z.view()];
            let (raw, head_cache) =
                model.head.forward_cached(&model.params, &a_hats[p], head_in.view())?;
            let raw_train = gather_rows(raw.view(), &idx);
            let (l_p, grad_train) = match model.kind {
                TreatmentKind::Binary => cross_entropy_loss(raw_train.view(), &binary_labels[p])?,
                TreatmentKind::Continuous => {
                    let targets = gather_vec(panel.treatments[p].column(0), &idx);
                    gmm_nll_from_raw(raw_train.view(), targets.view())?
                }
            };
            loss += l_p * inv_p;
            head_grads.push(scatter_rows(n, (grad_train * inv_p).view(), &idx));
            head_caches.push(head_cache);
            phi_caches.push(phi_cache);
            if p + 1 < timestamps && !no_history {
                let y2 = panel.outcomes[p].view().insert_axis(Axis(1));
                let gru_in =
                    concatenate![Axis(1), panel.treatments[p].view(), y2, z.view(), x.view()];
                let (m_next, gru_cache) =
                    model.gru.step_cached(&model.params, gru_in.view(), m.view())?;
                gru_caches.push(gru_cache);
                m = m_next;
            }
        }
        if !loss.is_finite() {
            return Err(EstimatorError::Diverged { epoch, loss });
        }
        trace.push(loss);

        // backward through time: the state gradient at p feeds the
        // recurrent step that produced it at p-1, which in turn adds to
        // the encoding gradient at p-1
        let mut grads = GradientMap::zeros_like(&model.params);
        let mut pending_dz: Option<Array2<f64>> = None;
        let mut pending_dm: Option<Array2<f64>> = None;
        for p in (0..timestamps).rev() {
            let dxz = model.head.backward(
                &model.params,
                &a_hats[p],
                &head_caches[p],
                head_grads[p].view(),
                &mut grads,
            );
            let mut dz = dxz.slice(ndarray::s![.., model.d_x..]).to_owned();
            if let Some(extra) = pending_dz.take() {
                dz += &extra;
            }
            let dxm = model.phi.backward(&model.params, &phi_caches[p], dz.view(), &mut grads);
            let mut dm = dxm.slice(ndarray::s![.., model.d_x..]).to_owned();
            if let Some(extra) = pending_dm.take() {
                dm += &extra;
            }
            if p > 0 && !no_history {
                let (dinput, dm_prev) =
                    model.gru.backward(&model.params, &gru_caches[p - 1], dm.view(), &mut grads);
                // recurrent input layout: [T, Y, Z, X]
                pending_dz = Some(dinput.slice(ndarray::s![.., 2..2 + dz.ncols()]).to_owned());
                pending_dm = Some(dm_prev);
            }
        }
        optimizer_step(&mut model.params, &grads, &mut state, cfg.learning_rate)?;
    }
    Ok(trace)
}

enum TreatmentColumns {
    /// The same treatment value for every unit, one entry per column.
    Fixed(Vec<f64>),
    /// Per-unit treatment draws, `N × samples`.
    PerUnit(Array2<f64>),
}

enum ExpectationWeights {
    /// Per-unit weight for each column (`N × columns`).
    PerUnit(Array2<f64>),
    /// Equal weight `1/samples` for every column.
    Uniform(usize),
}

/// How to evaluate `E[H]`: which treatment columns to push through the
/// outcome head and how to weight them per unit.
struct ExpectationPlan {
    treatment_values: TreatmentColumns,
    weights: ExpectationWeights,
}

impl ExpectationPlan {
    fn num_columns(&self) -> usize {
        match &self.treatment_values {
            TreatmentColumns::Fixed(v) => v.len(),
            TreatmentColumns::PerUnit(d) => d.ncols(),
        }
    }

    fn column(&self, n: usize, c: usize) -> Array1<f64> {
        match &self.treatment_values {
            TreatmentColumns::Fixed(v) => Array1::from_elem(n, v[c]),
            TreatmentColumns::PerUnit(d) => d.column(c).to_owned(),
        }
    }

    fn weight(&self, unit: usize, c: usize) -> f64 {
        match &self.weights {
            ExpectationWeights::PerUnit(w) => w[(unit, c)],
            ExpectationWeights::Uniform(samples) => 1.0 / *samples as f64,
        }
    }
}

/// Discrete distributions get the exact two-point expectation; mixtures
/// get `mc_samples` draws from a stream pinned by `seed`.
fn expectation_inputs(dist: &TreatmentDistribution, mc_samples: usize, seed: u64) -> ExpectationPlan {
    match dist {
        TreatmentDistribution::Discrete(probs) => ExpectationPlan {
            treatment_values: TreatmentColumns::Fixed(vec![0.0, 1.0]),
            weights: ExpectationWeights::PerUnit(probs.clone()),
        },
        TreatmentDistribution::Mixture(coeffs) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = coeffs.num_units();
            let mut draws = Array2::zeros((n, mc_samples));
            for i in 0..n {
                for s in 0..mc_samples {
                    draws[(i, s)] = sample_mixture_row(coeffs, i, &mut rng);
                }
            }
            ExpectationPlan {
                treatment_values: TreatmentColumns::PerUnit(draws),
                weights: ExpectationWeights::Uniform(mc_samples),
            }
        }
    }
}

fn sample_mixture_row<R: Rng + ?Sized>(coeffs: &MixtureCoeffs, unit: usize, rng: &mut R) -> f64 {
    let k = coeffs.num_components();
    let mut u: f64 = rng.random();
    let mut comp = k - 1;
    for j in 0..k {
        let w = coeffs.weights[(unit, j)];
        if u < w {
            comp = j;
            break;
        }
        u -= w;
    }
    let z: f64 = rng.sample(StandardNormal);
    coeffs.means[(unit, comp)] + coeffs.scales[(unit, comp)] * z
}

/// `E[H(T, M, X)]` under the stage-one treatment distribution, for one
/// timestamp. The discrete expectation is exact; the Monte-Carlo path is
/// only taken for continuous treatments.
pub fn predict_outcome_expectation(
    s1: &Stage1Model,
    s2: &Stage2Model,
    a_hat: &NormalizedAdjacency,
    x: ArrayView2<f64>,
    m: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<Array1<f64>, EstimatorError> {
    let z = s1.encode_nodes(x, m)?;
    let dist = s1.predict_treatment(a_hat, x, z.view())?;
    let plan = expectation_inputs(&dist, cfg.mc_samples, derive_seed(cfg.seed, "expectation-mc"));
    let n = x.nrows();
    let mut out = Array1::zeros(n);
    for c in 0..plan.num_columns() {
        let t_col = plan.column(n, c);
        let input = s2.input(t_col.view(), m, x);
        let pred = s2.h.forward(&s2.params, input.view())?;
        for i in 0..n {
            out[i] += plan.weight(i, c) * pred[(i, 0)];
        }
    }
    Ok(out)
}

/// Trains the outcome head against observed outcomes with stage one
/// frozen: the loss is the mean squared error between `Y` and the
/// expectation of `H` under the (fixed) stage-one distribution. Returns
/// the per-epoch loss trace.
pub fn train_stage2(
    s1: &Stage1Model,
    s2: &mut Stage2Model,
    panel: &PanelDataset,
    train_mask: &[bool],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, EstimatorError> {
    if panel.treatment_kind != s2.kind || s1.kind() != s2.kind {
        return Err(EstimatorError::KindMismatch);
    }
    panel.validate()?;
    let n = panel.n_units();
    let timestamps = panel.n_timestamps();
    let idx = train_indices(train_mask, n)?;
    let inv_p = 1.0 / timestamps as f64;

    // everything stage-one is fixed: unroll once, plan the expectation once
    let unrolled = s1.unroll(panel)?;
    let mut plans = Vec::with_capacity(timestamps);
    let mut inputs = Vec::with_capacity(timestamps);
    for p in 0..timestamps {
        let a_hat = normalize_adjacency(panel.graphs.snapshot(p));
        let dist =
            s1.predict_treatment(&a_hat, panel.features[p].view(), unrolled.encodings[p].view())?;
        let plan = expectation_inputs(
            &dist,
            cfg.mc_samples,
            derive_seed(cfg.seed, &format!("stage2-mc-{p}")),
        );
        let cols: Vec<Array2<f64>> = (0..plan.num_columns())
            .map(|c| {
                let t_col = plan.column(n, c);
                s2.input(t_col.view(), unrolled.histories[p].view(), panel.features[p].view())
            })
            .collect();
        plans.push(plan);
        inputs.push(cols);
    }

    let mut state = AdamState::new();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut grads = GradientMap::zeros_like(&s2.params);
        let mut loss = 0.0;
        for p in 0..timestamps {
            let plan = &plans[p];
            let cols = &inputs[p];
            let mut caches = Vec::with_capacity(cols.len());
            let mut yhat = Array1::zeros(n);
            for (c, input) in cols.iter().enumerate() {
                let (pred, cache) = s2.h.forward_cached(&s2.params, input.view())?;
                for i in 0..n {
                    yhat[i] += plan.weight(i, c) * pred[(i, 0)];
                }
                caches.push(cache);
            }
            let yhat_train = gather_vec(yhat.view(), &idx);
            let y_train = gather_vec(panel.outcomes[p].view(), &idx);
            let (l_p, grad_train) = mse_loss(yhat_train.view(), y_train.view())?;
            loss += l_p * inv_p;
            let dyhat = {
                let grad2 = grad_train.insert_axis(Axis(1));
                scatter_rows(n, grad2.view(), &idx) * inv_p
            };
            for (c, cache) in caches.iter().enumerate() {
                let mut dpred = Array2::zeros((n, 1));
                for i in 0..n {
                    dpred[(i, 0)] = dyhat[(i, 0)] * plan.weight(i, c);
                }
                s2.h.backward(&s2.params, cache, dpred.view(), &mut grads);
            }
        }
        if !loss.is_finite() {
            return Err(EstimatorError::Diverged { epoch, loss });
        }
        trace.push(loss);
        optimizer_step(&mut s2.params, &grads, &mut state, cfg.learning_rate)?;
    }
    Ok(trace)
}

/// Direct counterfactual difference `H(t, M, X) − H(t0, M, X)` per unit
/// and timestamp. The graph is not consulted.
pub fn estimate_effects(
    s2: &Stage2Model,
    features: &[Array2<f64>],
    histories: &[Array2<f64>],
    t: f64,
    t0: f64,
) -> Result<Vec<Array1<f64>>, EstimatorError> {
    s2.check_treatment_value(t)?;
    s2.check_treatment_value(t0)?;
    features
        .iter()
        .zip(histories.iter())
        .map(|(x, m)| {
            let at_t = s2.predict(t, m.view(), x.view())?;
            let at_t0 = s2.predict(t0, m.view(), x.view())?;
            Ok(at_t - at_t0)
        })
        .collect()
}

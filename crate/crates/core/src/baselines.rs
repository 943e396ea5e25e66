//! Graph-blind reference estimators: an S-learner over an augmented
//! linear design and a naive per-arm outcome regression. Both see only
//! unit-level features, so permuting edges cannot change their output.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("need at least two training units, got {0}")]
    TooFewUnits(usize),
    #[error("degenerate design: column {column} is constant")]
    DegenerateDesign { column: usize },
    #[error("empty {arm} arm: cannot fit per-arm regression")]
    EmptyTreatmentArm { arm: &'static str },
    #[error("mask has {got} entries for {want} rows")]
    MaskLength { got: usize, want: usize },
    #[error("treatment value {0} is not binary")]
    NonBinaryTreatment(f64),
    #[error("normal equations could not be factorized")]
    SolveFailed,
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
}

/// Exact least-squares fit `y ≈ intercept + design · coefficients`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub coefficients: Array1<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, design: ArrayView2<f64>) -> Array1<f64> {
        design.dot(&self.coefficients) + self.intercept
    }
}

const RIDGE: f64 = 1e-8;

/// Ordinary least squares via normal equations, with the Gram matrix
/// normalized by the row count (so duplicating every row leaves the fit
/// unchanged) and a small ridge for rank safety. Constant non-intercept
/// columns are rejected so misspecified designs fail loudly.
pub fn ols_fit(design: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<LinearModel, BaselineError> {
    let n = design.nrows();
    let d = design.ncols();
    if n < 2 {
        return Err(BaselineError::TooFewUnits(n));
    }
    if y.len() != n {
        return Err(BaselineError::Dimensions(format!("{n} rows vs {} outcomes", y.len())));
    }
    for (j, col) in design.columns().into_iter().enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(BaselineError::DegenerateDesign { column: j });
        }
    }

    // augmented design [1 | X]
    let cols = d + 1;
    let mut xtx = DMatrix::<f64>::zeros(cols, cols);
    let mut xty = DVector::<f64>::zeros(cols);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row: Vec<f64> =
            std::iter::once(1.0).chain(design.row(i).iter().cloned()).collect();
        for a in 0..cols {
            xty[a] += row[a] * y[i] * inv_n;
            for b in a..cols {
                xtx[(a, b)] += row[a] * row[b] * inv_n;
            }
        }
    }
    for a in 0..cols {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let mut damped = xtx.clone();
    for a in 0..cols {
        damped[(a, a)] += RIDGE;
    }
    let chol = damped.cholesky().ok_or(BaselineError::SolveFailed)?;
    let mut beta = chol.solve(&xty);
    // one refinement step against the undamped system removes the
    // O(ridge) bias while keeping the factorization rank-safe
    let correction = chol.solve(&(&xty - &xtx * &beta));
    beta += correction;
    Ok(LinearModel {
        intercept: beta[0],
        coefficients: Array1::from_iter(beta.iter().skip(1).cloned()),
    })
}

fn check_mask(mask: &[bool], rows: usize) -> Result<Vec<usize>, BaselineError> {
    if mask.len() != rows {
        return Err(BaselineError::MaskLength { got: mask.len(), want: rows });
    }
    Ok(mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect())
}

fn gather_rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).assign(&x.row(i));
    }
    out
}

/// Augmented S-learner design: `[x | t | t·x]`, so the fitted effect is
/// heterogeneous in the features.
pub fn augment_s_learner(x: ArrayView2<f64>, t: ArrayView1<f64>) -> Array2<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut out = Array2::zeros((n, 2 * d + 1));
    for i in 0..n {
        for j in 0..d {
            out[(i, j)] = x[(i, j)];
            out[(i, d + 1 + j)] = t[i] * x[(i, j)];
        }
        out[(i, d)] = t[i];
    }
    out
}

/// One linear model over features, treatment, and their interactions.
#[derive(Debug, Clone)]
pub struct SLearnerModel {
    pub model: LinearModel,
    d_x: usize,
}

impl SLearnerModel {
    pub fn treatment_coefficient(&self) -> f64 {
        self.model.coefficients[self.d_x]
    }

    /// Coefficients of the treatment-by-feature interactions, i.e. the
    /// heterogeneous part of the fitted effect.
    pub fn interaction_coefficients(&self) -> ArrayView1<'_, f64> {
        self.model.coefficients.slice(ndarray::s![self.d_x + 1..])
    }

    pub fn feature_coefficients(&self) -> ArrayView1<'_, f64> {
        self.model.coefficients.slice(ndarray::s![..self.d_x])
    }
}

/// Fits the S-learner on the masked rows of the augmented design.
pub fn s_learner_fit(
    x: ArrayView2<f64>,
    t: ArrayView1<f64>,
    y: ArrayView1<f64>,
    train_mask: &[bool],
) -> Result<SLearnerModel, BaselineError> {
    let idx = check_mask(train_mask, x.nrows())?;
    if idx.len() < 2 {
        return Err(BaselineError::TooFewUnits(idx.len()));
    }
    let aug = augment_s_learner(x, t);
    let design = gather_rows(aug.view(), &idx);
    let y_sel = Array1::from_iter(idx.iter().map(|&i| y[i]));
    let model = ols_fit(design.view(), y_sel.view())?;
    Ok(SLearnerModel { model, d_x: x.ncols() })
}

/// Prediction difference at treatment `t` versus `t0`, features fixed:
/// `(t - t0) · (coef_t + x · coef_interactions)`.
pub fn s_learner_effect(
    model: &SLearnerModel,
    x: ArrayView2<f64>,
    t: f64,
    t0: f64,
) -> Array1<f64> {
    let het = x.dot(&model.interaction_coefficients());
    (t - t0) * (het + model.treatment_coefficient())
}

/// Separate least-squares outcome fits on the treated and control arms.
#[derive(Debug, Clone)]
pub struct NaiveModel {
    treated: LinearModel,
    control: LinearModel,
}

/// Fits per-arm outcome regressions on masked rows; binary treatments
/// only, and both arms must be populated.
pub fn naive_outcome_regression(
    x: ArrayView2<f64>,
    t: ArrayView1<f64>,
    y: ArrayView1<f64>,
    train_mask: &[bool],
) -> Result<NaiveModel, BaselineError> {
    let idx = check_mask(train_mask, x.nrows())?;
    if let Some(&bad) = idx.iter().map(|&i| &t[i]).find(|&&v| v != 0.0 && v != 1.0) {
        return Err(BaselineError::NonBinaryTreatment(bad));
    }
    let treated: Vec<usize> = idx.iter().cloned().filter(|&i| t[i] == 1.0).collect();
    let control: Vec<usize> = idx.iter().cloned().filter(|&i| t[i] == 0.0).collect();
    if treated.is_empty() {
        return Err(BaselineError::EmptyTreatmentArm { arm: "treated" });
    }
    if control.is_empty() {
        return Err(BaselineError::EmptyTreatmentArm { arm: "control" });
    }
    let fit_arm = |rows: &[usize]| -> Result<LinearModel, BaselineError> {
        let design = gather_rows(x, rows);
        let y_sel = Array1::from_iter(rows.iter().map(|&i| y[i]));
        ols_fit(design.view(), y_sel.view())
    };
    Ok(NaiveModel { treated: fit_arm(&treated)?, control: fit_arm(&control)? })
}

/// Effect as the per-unit prediction gap between the arms, scaled by the
/// queried contrast.
pub fn naive_effect(model: &NaiveModel, x: ArrayView2<f64>, t: f64, t0: f64) -> Array1<f64> {
    let gap = model.treated.predict(x) - model.control.predict(x);
    (t - t0) * gap
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_design(60, 4, &mut rng);
        let y = Array1::from_shape_fn(60, |_| rng.random::<f64>() * 3.0);
        let model = ols_fit(x.view(), y.view()).unwrap();
        let resid = &y - &model.predict(x.view());
        for col in x.columns() {
            let dot: f64 = col.iter().zip(resid.iter()).map(|(a, b)| a * b).sum();
            assert!(dot.abs() / 60.0 < 1e-8, "residual correlation {dot}");
        }
        assert!(resid.sum().abs() / 60.0 < 1e-8);
    }

    #[test]
    fn ols_rejects_constant_column() {
        let mut x = Array2::zeros((10, 2));
        for i in 0..10 {
            x[(i, 0)] = i as f64;
            x[(i, 1)] = 3.0;
        }
        let y = Array1::zeros(10);
        assert!(matches!(
            ols_fit(x.view(), y.view()),
            Err(BaselineError::DegenerateDesign { column: 1 })
        ));
    }

    #[test]
    fn s_learner_recovers_linear_truth() {
        // outcomes generated exactly by the linear outcome model with no
        // confounding and no noise
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let d = 6;
        let x = random_design(n, d, &mut rng);
        let theta_y = Array1::from_shape_fn(d, |_| rng.random::<f64>() - 0.5);
        let theta_0 = Array1::from_shape_fn(d, |_| rng.random::<f64>() - 0.5);
        let t = Array1::from_shape_fn(n, |_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 });
        let y = &t * &x.dot(&theta_y) + x.dot(&theta_0);
        let mask = vec![true; n];
        let model = s_learner_fit(x.view(), t.view(), y.view(), &mask).unwrap();
        for (got, want) in model.interaction_coefficients().iter().zip(theta_y.iter()) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-6);
        }
        for (got, want) in model.feature_coefficients().iter().zip(theta_0.iter()) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-6);
        }
        let tau = s_learner_effect(&model, x.view(), 1.0, 0.0);
        let truth = x.dot(&theta_y);
        let err = crate::metrics::pehe(tau.view(), truth.view()).unwrap();
        assert!(err < 1e-6, "pehe {err}");
    }

    #[test]
    fn s_learner_zero_outcomes_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_design(50, 3, &mut rng);
        let t = Array1::from_shape_fn(50, |i| (i % 2) as f64);
        let y = Array1::zeros(50);
        let model = s_learner_fit(x.view(), t.view(), y.view(), &vec![true; 50]).unwrap();
        for c in model.model.coefficients.iter() {
            assert!(c.abs() < 1e-6);
        }
    }

    #[test]
    fn s_learner_invariant_to_row_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_design(40, 3, &mut rng);
        let t = Array1::from_shape_fn(40, |i| (i % 2) as f64);
        let y = Array1::from_shape_fn(40, |_| rng.random::<f64>());
        let single = s_learner_fit(x.view(), t.view(), y.view(), &vec![true; 40]).unwrap();
        let x2 = ndarray::concatenate![Axis(0), x.view(), x.view()];
        let t2 = ndarray::concatenate![Axis(0), t.view(), t.view()];
        let y2 = ndarray::concatenate![Axis(0), y.view(), y.view()];
        let doubled = s_learner_fit(x2.view(), t2.view(), y2.view(), &vec![true; 80]).unwrap();
        for (a, b) in single.model.coefficients.iter().zip(doubled.model.coefficients.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn effects_vanish_at_equal_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_design(30, 3, &mut rng);
        let t = Array1::from_shape_fn(30, |i| (i % 2) as f64);
        let y = Array1::from_shape_fn(30, |_| rng.random::<f64>());
        let mask = vec![true; 30];
        let s = s_learner_fit(x.view(), t.view(), y.view(), &mask).unwrap();
        assert!(s_learner_effect(&s, x.view(), 0.7, 0.7).iter().all(|&v| v == 0.0));
        let nv = naive_outcome_regression(x.view(), t.view(), y.view(), &mask).unwrap();
        assert!(naive_effect(&nv, x.view(), 1.0, 1.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn naive_matches_s_learner_on_balanced_randomized_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 600;
        let x = random_design(n, 3, &mut rng);
        let theta_y = array![0.8, -0.3, 0.5];
        let theta_0 = array![0.2, 0.9, -0.4];
        let t = Array1::from_shape_fn(n, |_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 });
        let noise = Array1::from_shape_fn(n, |_| (rng.random::<f64>() - 0.5) * 0.02);
        let y = &t * &x.dot(&theta_y) + x.dot(&theta_0) + noise;
        let mask = vec![true; n];
        let s = s_learner_fit(x.view(), t.view(), y.view(), &mask).unwrap();
        let nv = naive_outcome_regression(x.view(), t.view(), y.view(), &mask).unwrap();
        let tau_s = s_learner_effect(&s, x.view(), 1.0, 0.0);
        let tau_n = naive_effect(&nv, x.view(), 1.0, 0.0);
        let gap = crate::metrics::pehe(tau_s.view(), tau_n.view()).unwrap();
        assert!(gap < 0.02, "methods disagree by {gap}");
    }

    #[test]
    fn naive_rejects_single_arm_panels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_design(20, 2, &mut rng);
        let y = Array1::zeros(20);
        let all_treated = Array1::ones(20);
        assert!(matches!(
            naive_outcome_regression(x.view(), all_treated.view(), y.view(), &vec![true; 20]),
            Err(BaselineError::EmptyTreatmentArm { arm: "control" })
        ));
        let continuous = Array1::from_elem(20, 0.37);
        assert!(matches!(
            naive_outcome_regression(x.view(), continuous.view(), y.view(), &vec![true; 20]),
            Err(BaselineError::NonBinaryTreatment(_))
        ));
    }
}

//! Adaptive-moment parameter updates (β₁ = 0.9, β₂ = 0.999, ε = 1e−8)
//! with explicit bias correction.

use super::params::{GradientMap, ParameterSet};
use super::NnError;
use ndarray::ArrayD;
use std::collections::BTreeMap;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First and second moment estimates per parameter, plus the step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update over every parameter. Gradients absent from `grads` are
/// treated as zero (their moments still decay). Non-finite gradients are
/// rejected so divergence surfaces as an error rather than poisoned
/// parameters.
pub fn optimizer_step(
    params: &mut ParameterSet,
    grads: &GradientMap,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<(), NnError> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(NnError::BadLearningRate(learning_rate));
    }
    for (name, g) in grads.iter() {
        match params.get(name) {
            Some(p) if p.shape() == g.shape() => {}
            Some(_) | None => return Err(NnError::UnknownParameter(name.clone())),
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient(name.clone()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - BETA1.powi(t);
    let v_corr = 1.0 - BETA2.powi(t);

    for (name, value) in params.iter_mut() {
        let zero = ArrayD::zeros(value.raw_dim());
        let g = match grads.get(name) {
            Some(g) => g.to_owned(),
            None => zero.clone(),
        };
        let m = state.m.entry(name.clone()).or_insert_with(|| zero.clone());
        let v = state.v.entry(name.clone()).or_insert_with(|| zero);
        m.zip_mut_with(&g, |m, g| *m = BETA1 * *m + (1.0 - BETA1) * g);
        v.zip_mut_with(&g, |v, g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
        ndarray::Zip::from(&mut *value).and(&*m).and(&*v).for_each(|p, m, v| {
            let m_hat = m / m_corr;
            let v_hat = v / v_corr;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + EPS);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = ParameterSet::new();
        params.insert1("p", array![1.0, -2.0]);
        let before = params.clone();
        let grads = GradientMap::zeros_like(&params);
        let mut state = AdamState::new();
        optimizer_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert!(params.bitwise_eq(&before));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut params = ParameterSet::new();
        params.insert1("p", array![0.0, 0.0]);
        let mut grads = GradientMap::new();
        grads.accumulate1("p", array![3.0, -0.25].view());
        let mut state = AdamState::new();
        optimizer_step(&mut params, &grads, &mut state, 0.01).unwrap();
        // bias-corrected first step: lr * g / (|g| + eps) ~= lr * sign(g)
        assert_abs_diff_eq!(params.a1("p")[0], -0.01, epsilon = 1e-8);
        assert_abs_diff_eq!(params.a1("p")[1], 0.01, epsilon = 1e-7);
    }

    #[test]
    fn same_inputs_same_trajectory() {
        let run = || {
            let mut params = ParameterSet::new();
            params.insert1("p", array![1.0, 2.0, 3.0]);
            let mut state = AdamState::new();
            for step in 0..25 {
                let mut grads = GradientMap::new();
                let s = step as f64;
                grads.accumulate1("p", array![s.sin(), s.cos(), 0.5 - s / 25.0].view());
                optimizer_step(&mut params, &grads, &mut state, 0.05).unwrap();
            }
            params
        };
        assert!(run().bitwise_eq(&run()));
    }

    #[test]
    fn rejects_non_finite_gradients_and_bad_rates() {
        let mut params = ParameterSet::new();
        params.insert1("p", array![1.0]);
        let mut grads = GradientMap::new();
        grads.accumulate1("p", array![f64::NAN].view());
        let mut state = AdamState::new();
        assert!(matches!(
            optimizer_step(&mut params, &grads, &mut state, 0.1),
            Err(NnError::NonFiniteGradient(_))
        ));
        let grads = GradientMap::zeros_like(&params);
        assert!(matches!(
            optimizer_step(&mut params, &grads, &mut state, -0.1),
            Err(NnError::BadLearningRate(_))
        ));
        let mut grads = GradientMap::new();
        grads.accumulate1("q", array![1.0].view());
        assert!(matches!(
            optimizer_step(&mut params, &grads, &mut state, 0.1),
            Err(NnError::UnknownParameter(_))
        ));
    }
}

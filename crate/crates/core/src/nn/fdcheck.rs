//! Central finite-difference verification of analytic gradients.

use super::params::{GradientMap, ParameterSet};
use ndarray::ArrayD;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Compares the analytic gradient of `loss_and_grad` against central
/// finite differences and returns the maximum relative deviation over the
/// checked coordinates. Arrays larger than `max_coords_per_param` are
/// subsampled with the seeded rng; `loss_and_grad` must be deterministic.
pub fn finite_difference_check<F>(
    loss_and_grad: F,
    params: &ParameterSet,
    epsilon: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> f64
where
    F: Fn(&ParameterSet) -> (f64, GradientMap),
{
    let (_, analytic) = loss_and_grad(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0_f64;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        let len = params.get(name).unwrap().len();
        let coords: Vec<usize> = if len <= max_coords_per_param {
            (0..len).collect()
        } else {
            sample(&mut rng, len, max_coords_per_param).into_vec()
        };
        // logical (row-major) coordinate order, independent of storage
        let analytic_flat: Option<Vec<f64>> =
            analytic.get(name).map(|g| g.iter().cloned().collect());
        for flat in coords {
            let plus = perturbed(params, name, flat, epsilon);
            let minus = perturbed(params, name, flat, -epsilon);
            let fd = (loss_and_grad(&plus).0 - loss_and_grad(&minus).0) / (2.0 * epsilon);
            let an = analytic_flat.as_ref().map(|g| g[flat]).unwrap_or(0.0);
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

fn perturbed(params: &ParameterSet, name: &str, flat: usize, delta: f64) -> ParameterSet {
    let mut out = params.clone();
    let value: &mut ArrayD<f64> = out.get_mut(name).expect("name came from this set");
    match value.as_slice_mut() {
        Some(s) => s[flat] += delta,
        None => {
            let idx = logical_unravel(value.shape(), flat);
            value[ndarray::IxDyn(&idx)] += delta;
        }
    }
    out
}

fn logical_unravel(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (k, &d) in shape.iter().enumerate().rev() {
        idx[k] = flat % d;
        flat /= d;
    }
    idx
}

//! Losses and probabilistic heads: softmax with cross-entropy, mean
//! squared error, and the Gaussian-mixture negative log-likelihood used
//! for continuous treatments. Every loss returns its gradient.

use super::NnError;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

const LN_2PI: f64 = 1.8378770664093453;

/// Row-wise softmax, stabilized by a max shift. Rows sum to one.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Vector-Jacobian product through [`softmax`]: given gradients with
/// respect to the probabilities, returns gradients for the logits.
pub fn softmax_backward(probs: ArrayView2<f64>, grad_probs: ArrayView2<f64>) -> Array2<f64> {
    let dot = (&probs.to_owned() * &grad_probs.to_owned()).sum_axis(Axis(1));
    let mut out = grad_probs.to_owned();
    for (mut row, (p_row, d)) in out.rows_mut().into_iter().zip(probs.rows().into_iter().zip(dot.iter())) {
        row -= *d;
        row *= &p_row;
    }
    out
}

/// Mean negative log-probability of the true class after softmax, plus
/// the gradient with respect to the logits.
pub fn cross_entropy_loss(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), NnError> {
    let n = logits.nrows();
    let k = logits.ncols();
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            op: "cross_entropy_loss",
            a: format!("{n} logits rows"),
            b: format!("{} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::LabelOutOfRange { label: bad, classes: k });
    }
    let mut loss = 0.0;
    let mut grad = softmax(logits);
    let inv_n = 1.0 / n as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= (row[label] - lse) * inv_n;
        grad[(i, label)] -= 1.0;
    }
    grad *= inv_n;
    Ok((loss, grad))
}

/// Mean of squared differences, plus the gradient `2(pred − target)/n`.
pub fn mse_loss(
    pred: ArrayView1<f64>,
    target: ArrayView1<f64>,
) -> Result<(f64, Array1<f64>), NnError> {
    if pred.len() != target.len() {
        return Err(NnError::ShapeMismatch {
            op: "mse_loss",
            a: format!("{}", pred.len()),
            b: format!("{}", target.len()),
        });
    }
    if pred.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let n = pred.len() as f64;
    let diff = &pred.to_owned() - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    Ok((loss, grad))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Per-unit mixture parameters: component weights on the simplex, means,
/// and positive scales. Rows are units, columns components.
#[derive(Debug, Clone)]
pub struct MixtureCoeffs {
    pub weights: Array2<f64>,
    pub means: Array2<f64>,
    pub scales: Array2<f64>,
}

impl MixtureCoeffs {
    pub fn num_components(&self) -> usize {
        self.weights.ncols()
    }

    pub fn num_units(&self) -> usize {
        self.weights.nrows()
    }
}

/// Gradients of the mixture NLL with respect to each coefficient family.
#[derive(Debug, Clone)]
pub struct MixtureGrad {
    pub weights: Array2<f64>,
    pub means: Array2<f64>,
    pub scales: Array2<f64>,
}

/// Maps raw head outputs `[weight logits | means | raw scales]` (width 3K)
/// to mixture coefficients: softmax over the weight block, identity on
/// means, softplus (plus a small floor) on scales.
pub fn mixture_from_raw(raw: ArrayView2<f64>) -> Result<MixtureCoeffs, NnError> {
    if raw.ncols() % 3 != 0 || raw.ncols() == 0 {
        return Err(NnError::InputWidth { op: "mixture_from_raw", got: raw.ncols(), want: 3 });
    }
    let k = raw.ncols() / 3;
    let weights = softmax(raw.slice(ndarray::s![.., 0..k]));
    let means = raw.slice(ndarray::s![.., k..2 * k]).to_owned();
    let scales = raw.slice(ndarray::s![.., 2 * k..3 * k]).mapv(|v| softplus(v) + 1e-6);
    Ok(MixtureCoeffs { weights, means, scales })
}

/// Negative log-likelihood of `targets` under the per-unit Gaussian
/// mixtures, averaged over units, with gradients for every coefficient.
/// The log-sum over components is stabilized by a max shift.
pub fn gmm_nll(
    coeffs: &MixtureCoeffs,
    targets: ArrayView1<f64>,
) -> Result<(f64, MixtureGrad), NnError> {
    let n = coeffs.num_units();
    let k = coeffs.num_components();
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    if targets.len() != n
        || coeffs.means.dim() != coeffs.weights.dim()
        || coeffs.scales.dim() != coeffs.weights.dim()
    {
        return Err(NnError::ShapeMismatch {
            op: "gmm_nll",
            a: format!("{n} units, {k} components"),
            b: format!("{} targets", targets.len()),
        });
    }
    if let Some(&bad) = coeffs.scales.iter().find(|&&s| !(s > 0.0)) {
        return Err(NnError::NonPositiveScale(bad));
    }
    for row in coeffs.weights.rows() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&w| w < 0.0) {
            return Err(NnError::BadMixtureWeights(sum));
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = MixtureGrad {
        weights: Array2::zeros((n, k)),
        means: Array2::zeros((n, k)),
        scales: Array2::zeros((n, k)),
    };
    for i in 0..n {
        let y = targets[i];
        // ln of each component density, and of the weighted component
        let mut ln_nk = vec![0.0; k];
        let mut l = vec![0.0; k];
        for j in 0..k {
            let mu = coeffs.means[(i, j)];
            let s = coeffs.scales[(i, j)];
            let z = (y - mu) / s;
            ln_nk[j] = -s.ln() - 0.5 * LN_2PI - 0.5 * z * z;
            l[j] = coeffs.weights[(i, j)].ln() + ln_nk[j];
        }
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= lse * inv_n;
        for j in 0..k {
            let gamma = (l[j] - lse).exp();
            let mu = coeffs.means[(i, j)];
            let s = coeffs.scales[(i, j)];
            grad.weights[(i, j)] = -(ln_nk[j] - lse).exp() * inv_n;
            grad.means[(i, j)] = -gamma * (y - mu) / (s * s) * inv_n;
            grad.scales[(i, j)] = gamma * (1.0 / s - (y - mu) * (y - mu) / (s * s * s)) * inv_n;
        }
    }
    Ok((loss, grad))
}

/// Fused mixture NLL straight from raw head outputs, returning the
/// gradient with respect to the raw values (the form training uses).
pub fn gmm_nll_from_raw(
    raw: ArrayView2<f64>,
    targets: ArrayView1<f64>,
) -> Result<(f64, Array2<f64>), NnError> {
    let coeffs = mixture_from_raw(raw)?;
    let k = coeffs.num_components();
    let n = coeffs.num_units();
    let (loss, grad) = gmm_nll(&coeffs, targets)?;
    let mut grad_raw = Array2::zeros((n, 3 * k));
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        // Through the softmax: d/dlogit_j = (w_j - gamma_j)/n, where
        // gamma_j = -w_j * dweights_j * n recovers the posterior.
        for j in 0..k {
            let w = coeffs.weights[(i, j)];
            let gamma = -grad.weights[(i, j)] * w / inv_n;
            grad_raw[(i, j)] = (w - gamma) * inv_n;
            grad_raw[(i, k + j)] = grad.means[(i, j)];
            let sig = 1.0 / (1.0 + (-raw[(i, 2 * k + j)]).exp());
            grad_raw[(i, 2 * k + j)] = grad.scales[(i, j)] * sig;
        }
    }
    Ok((loss, grad_raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0], [1000.0, 1000.0, 999.0]].view());
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let logits = Array2::from_elem((4, 3), 0.7);
        let (loss, _) = cross_entropy_loss(logits.view(), &[0, 1, 2, 0]).unwrap();
        assert_abs_diff_eq!(loss, 3.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_vanishes_with_large_margin() {
        let logits = array![[60.0, 0.0], [0.0, 60.0]];
        let (loss, _) = cross_entropy_loss(logits.view(), &[0, 1]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn cross_entropy_rejects_bad_inputs() {
        assert!(matches!(
            cross_entropy_loss(Array2::zeros((0, 2)).view(), &[]),
            Err(NnError::EmptyBatch)
        ));
        assert!(matches!(
            cross_entropy_loss(Array2::zeros((1, 2)).view(), &[5]),
            Err(NnError::LabelOutOfRange { label: 5, classes: 2 })
        ));
    }

    #[test]
    fn mse_hand_value_and_gradient() {
        let (loss, grad) = mse_loss(array![0.0, 0.0].view(), array![1.0, 3.0].view()).unwrap();
        assert_abs_diff_eq!(loss, 5.0, epsilon = 1e-12);
        assert_eq!(grad.to_vec(), vec![-1.0, -3.0]);
        let (zero, _) = mse_loss(array![2.0].view(), array![2.0].view()).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn gmm_single_component_at_mean() {
        let coeffs = MixtureCoeffs {
            weights: array![[1.0]],
            means: array![[2.5]],
            scales: array![[1.0]],
        };
        let (nll, _) = gmm_nll(&coeffs, array![2.5].view()).unwrap();
        assert_abs_diff_eq!(nll, 0.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn gmm_duplicate_components_collapse() {
        let one = MixtureCoeffs {
            weights: array![[1.0]],
            means: array![[0.3]],
            scales: array![[0.8]],
        };
        let two = MixtureCoeffs {
            weights: array![[0.3, 0.7]],
            means: array![[0.3, 0.3]],
            scales: array![[0.8, 0.8]],
        };
        let y = array![1.1];
        let (a, _) = gmm_nll(&one, y.view()).unwrap();
        let (b, _) = gmm_nll(&two, y.view()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn gmm_rejects_bad_mixture() {
        let bad_scale = MixtureCoeffs {
            weights: array![[1.0]],
            means: array![[0.0]],
            scales: array![[0.0]],
        };
        assert!(matches!(
            gmm_nll(&bad_scale, array![0.0].view()),
            Err(NnError::NonPositiveScale(_))
        ));
        let bad_weights = MixtureCoeffs {
            weights: array![[0.5, 0.2]],
            means: array![[0.0, 0.0]],
            scales: array![[1.0, 1.0]],
        };
        assert!(matches!(
            gmm_nll(&bad_weights, array![0.0].view()),
            Err(NnError::BadMixtureWeights(_))
        ));
    }

    #[test]
    fn mixture_from_raw_is_valid() {
        let raw = array![[0.2, -1.0, 3.0, 0.5, -2.0, 1.5], [5.0, 5.0, 0.0, 0.0, -30.0, 2.0]];
        let c = mixture_from_raw(raw.view()).unwrap();
        assert_eq!(c.num_components(), 2);
        for row in c.weights.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
        assert!(c.scales.iter().all(|&s| s > 0.0));
    }
}

//! Effect-estimation error measures and report assembly.
//!
//! `pehe` is the rooted mean squared per-unit effect error; `ate_error`
//! the absolute gap between mean estimated and mean true effects. Reports
//! carry per-timestamp values plus their unweighted time average.

use ndarray::ArrayView1;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} estimates vs {1} true effects")]
    LengthMismatch(usize, usize),
    #[error("metrics need at least one value")]
    Empty,
}

/// Rooted precision in estimating heterogeneous effects:
/// `sqrt(mean((tau_hat - tau_true)^2))`.
pub fn pehe(tau_hat: ArrayView1<f64>, tau_true: ArrayView1<f64>) -> Result<f64, MetricsError> {
    if tau_hat.len() != tau_true.len() {
        return Err(MetricsError::LengthMismatch(tau_hat.len(), tau_true.len()));
    }
    if tau_hat.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = tau_hat.len() as f64;
    let sq = tau_hat
        .iter()
        .zip(tau_true.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    Ok((sq / n).sqrt())
}

/// Absolute error of the average effect: `|mean(tau_hat) - mean(tau_true)|`.
pub fn ate_error(tau_hat: ArrayView1<f64>, tau_true: ArrayView1<f64>) -> Result<f64, MetricsError> {
    if tau_hat.len() != tau_true.len() {
        return Err(MetricsError::LengthMismatch(tau_hat.len(), tau_true.len()));
    }
    if tau_hat.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = tau_hat.len() as f64;
    Ok((tau_hat.sum() / n - tau_true.sum() / n).abs())
}

/// Both metrics at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestepMetrics {
    pub pehe: f64,
    pub ate_err: f64,
}

impl TimestepMetrics {
    pub fn compute(
        tau_hat: ArrayView1<f64>,
        tau_true: ArrayView1<f64>,
    ) -> Result<Self, MetricsError> {
        Ok(Self { pehe: pehe(tau_hat, tau_true)?, ate_err: ate_error(tau_hat, tau_true)? })
    }
}

/// Unweighted time average of per-timestamp metrics.
pub fn aggregate(per_timestamp: &[TimestepMetrics]) -> Result<TimestepMetrics, MetricsError> {
    if per_timestamp.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = per_timestamp.len() as f64;
    Ok(TimestepMetrics {
        pehe: per_timestamp.iter().map(|m| m.pehe).sum::<f64>() / n,
        ate_err: per_timestamp.iter().map(|m| m.ate_err).sum::<f64>() / n,
    })
}

/// Evaluation of one method on one panel and seed.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: String,
    pub variant: String,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
    pub per_timestamp: Vec<TimestepMetrics>,
    pub avg: TimestepMetrics,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Assembles a report and asserts the mean-error bound
    /// `ate_err <= pehe` that holds for every row by Jensen's inequality.
    pub fn new(
        method: &str,
        variant: &str,
        seed: u64,
        lambda: f64,
        beta: f64,
        per_timestamp: Vec<TimestepMetrics>,
        config_fingerprint: &str,
    ) -> Result<Self, MetricsError> {
        let avg = aggregate(&per_timestamp)?;
        for m in per_timestamp.iter().chain(std::iter::once(&avg)) {
            assert!(
                m.ate_err <= m.pehe + 1e-9,
                "mean error {} exceeds pehe {}",
                m.ate_err,
                m.pehe
            );
        }
        Ok(Self {
            method: method.to_string(),
            variant: variant.to_string(),
            seed,
            lambda,
            beta,
            per_timestamp,
            avg,
            config_fingerprint: config_fingerprint.to_string(),
        })
    }

    pub const CSV_HEADER: &'static str =
        "method,variant,seed,lambda,beta,timestamp,pehe,ate_err,config";

    /// One row per timestamp plus an `avg` row; values with six
    /// significant digits.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows: Vec<String> = self
            .per_timestamp
            .iter()
            .enumerate()
            .map(|(p, m)| self.row(&(p + 1).to_string(), m))
            .collect();
        rows.push(self.row("avg", &self.avg));
        rows
    }

    fn row(&self, timestamp: &str, m: &TimestepMetrics) -> String {
        format!(
            "{},{},{},{},{},{},{:.5e},{:.5e},{}",
            self.method,
            self.variant,
            self.seed,
            self.lambda,
            self.beta,
            timestamp,
            m.pehe,
            m.ate_err,
            self.config_fingerprint
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pehe_hand_values() {
        let a = array![1.0, 2.0, 3.0];
        let b = array![1.0, 1.0, 3.0];
        assert_abs_diff_eq!(pehe(a.view(), b.view()).unwrap(), (1.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_eq!(pehe(a.view(), a.view()).unwrap(), 0.0);
    }

    #[test]
    fn pehe_is_homogeneous_in_error_scale() {
        let truth = array![0.5, -1.0, 2.0, 0.0];
        let err = array![1.0, -2.0, 0.5, 3.0];
        let base = pehe((&truth + &err).view(), truth.view()).unwrap();
        for c in [0.0, 0.7, 4.0] {
            let scaled = pehe((&truth + &(c * &err)).view(), truth.view()).unwrap();
            assert_abs_diff_eq!(scaled, c * base, epsilon = 1e-12);
        }
    }

    #[test]
    fn ate_hand_values_and_cancellation() {
        let a = array![1.0, 2.0, 3.0];
        let b = array![1.0, 1.0, 3.0];
        assert_abs_diff_eq!(ate_error(a.view(), b.view()).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        // antisymmetric errors cancel in the mean but not in pehe
        let truth = array![0.0, 0.0];
        let est = array![2.0, -2.0];
        assert_abs_diff_eq!(ate_error(est.view(), truth.view()).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pehe(est.view(), truth.view()).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn metrics_reject_mismatch_and_empty() {
        let a = array![1.0];
        let b = array![1.0, 2.0];
        assert!(pehe(a.view(), b.view()).is_err());
        assert!(ate_error(a.view(), b.view()).is_err());
        let empty = array![];
        assert!(pehe(empty.view(), empty.view()).is_err());
    }

    #[test]
    fn aggregate_hand_values() {
        let single = vec![TimestepMetrics { pehe: 0.3, ate_err: 0.1 }];
        let agg = aggregate(&single).unwrap();
        assert_eq!(agg, single[0]);
        let two = vec![
            TimestepMetrics { pehe: 0.4, ate_err: 0.1 },
            TimestepMetrics { pehe: 0.6, ate_err: 0.3 },
        ];
        let agg = aggregate(&two).unwrap();
        assert_abs_diff_eq!(agg.pehe, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(agg.ate_err, 0.2, epsilon = 1e-15);
        let mut reversed = two.clone();
        reversed.reverse();
        assert_eq!(aggregate(&reversed).unwrap(), agg);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn ate_never_exceeds_pehe() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let n = rng.random_range(1..20);
            let a = ndarray::Array1::from_shape_fn(n, |_| rng.random::<f64>() * 10.0 - 5.0);
            let b = ndarray::Array1::from_shape_fn(n, |_| rng.random::<f64>() * 10.0 - 5.0);
            let p = pehe(a.view(), b.view()).unwrap();
            let e = ate_error(a.view(), b.view()).unwrap();
            assert!(e <= p + 1e-12, "ate {e} > pehe {p}");
        }
    }

    #[test]
    fn report_rows_have_fixed_schema() {
        let report = EvalReport::new(
            "s_learner",
            "-",
            3,
            0.5,
            2.0,
            vec![
                TimestepMetrics { pehe: 0.25, ate_err: 0.125 },
                TimestepMetrics { pehe: 0.75, ate_err: 0.25 },
            ],
            "abc123",
        )
        .unwrap();
        let rows = report.csv_rows();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], "s_learner,-,3,0.5,2,1,2.50000e-1,1.25000e-1,abc123");
        assert!(rows[2].starts_with("s_learner,-,3,0.5,2,avg,"));
    }
}

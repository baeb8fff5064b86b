//! Central finite-difference verification of reverse-mode gradients.

use super::Tensor;
use crate::error::{Error, Result};

/// Step used for central differences. Chosen against f64 roundoff: truncation
/// error O(h^2) and roundoff O(eps/h) are both far below the 1e-4 pass bar.
pub const FD_STEP: f64 = 1e-4;

/// Floor inside the relative-error denominator so near-zero gradients do not
/// divide by zero.
pub const FD_DENOM_FLOOR: f64 = 1e-8;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub passed: bool,
    pub tolerance: f64,
}

/// Compare analytic and numeric gradients coordinate-wise:
/// `|a - n| / max(|a|, |n|, 1e-8)`, reporting the worst coordinate.
pub fn relative_error_report(analytic: &[f64], numeric: &[f64], tol: f64) -> GradCheckReport {
    debug_assert_eq!(analytic.len(), numeric.len());
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(FD_DENOM_FLOOR);
        let rel = (a - n).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    GradCheckReport {
        max_relative_error: max_rel,
        worst_index: worst,
        passed: max_rel <= tol,
    tolerance: tol,
    }
}

/// Check the analytic gradient of a scalar-valued tensor function at `x`
/// against central finite differences with step [`FD_STEP`].
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let base = x.to_vec();
    let shape = x.shape().to_vec();

    // Analytic: fresh leaf so the gradient lands here regardless of whether
    // the caller's tensor was a parameter.
    let leaf = Tensor::param(&shape, base.clone())?;
    let out = f(&leaf)?;
    if out.elem_count() != 1 {
        return Err(Error::Shape(format!(
            "finite_diff_check: function must be scalar-valued, got {:?}",
            out.shape()
        )));
    }
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    // Numeric: central differences, one coordinate at a time. Constants keep
    // the probe forwards graph-free.
    let mut numeric = vec![0.0f64; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + FD_STEP;
        let plus = f(&Tensor::from_vec(&shape, probe.clone())?)?.item()?;
        probe[i] = base[i] - FD_STEP;
        let minus = f(&Tensor::from_vec(&shape, probe.clone())?)?.item()?;
        probe[i] = base[i];
        numeric[i] = (plus - minus) / (2.0 * FD_STEP);
    }

    Ok(relative_error_report(&analytic, &numeric, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_near_exact() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let report = finite_diff_check(|t| Ok(t.mul(t)?.sum_all()), &x, 1e-4).unwrap();
        assert!(report.passed);
        assert!(report.max_relative_error < 1e-8);
        // Analytic gradient of sum(x^2) is [2, 4]; verify directly as well.
        let leaf = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = leaf.mul(&leaf).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(leaf.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn relu_passes_away_from_kink() {
        // Evaluation points are kept at least 0.2 from zero, far beyond the
        // 1e-4 probe step, so no probe crosses the kink.
        let x = Tensor::<f64>::from_vec(&[4], vec![0.7, -0.9, 1.3, -0.4]).unwrap();
        let report = finite_diff_check(|t| Ok(t.relu().sum_all()), &x, 1e-4).unwrap();
        assert!(report.passed, "max rel err {}", report.max_relative_error);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let analytic = vec![2.0, 4.0];
        let corrupted: Vec<f64> = analytic.iter().map(|v| v * 1.1).collect();
        let report = relative_error_report(&corrupted, &analytic, 1e-4);
        assert!(!report.passed);
        assert!(report.max_relative_error > 0.05);
    }
}

//! Combination weights over the candidate models.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::lp::simplex_weights;
use crate::quantreg::QuantileFit;

/// Forecasting method tag. The first five combine the candidate set; the
/// last two are single-model references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Equal,
    Aic,
    Bic,
    Qric,
    Jackknife,
    Naive,
    Full,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Equal,
        Method::Aic,
        Method::Bic,
        Method::Qric,
        Method::Jackknife,
        Method::Naive,
        Method::Full,
    ];

    pub fn is_average(self) -> bool {
        !matches!(self, Method::Naive | Method::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Equal => "equal",
            Method::Aic => "aic",
            Method::Bic => "bic",
            Method::Qric => "qric",
            Method::Jackknife => "jackknife",
            Method::Naive => "naive",
            Method::Full => "full",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Which scaling of the QRIC objective to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QricScale {
    /// Total loss plus penalty: the penalty shrinks by `1/T` relative to
    /// the mean-loss form.
    Total,
    /// Mean loss plus `τ(1−τ)·ŝ·Σ w_m r_m`.
    #[default]
    Mean,
}

impl FromStr for QricScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<QricScale> {
        match s.trim() {
            "total" => Ok(QricScale::Total),
            "mean" => Ok(QricScale::Mean),
            other => Err(Error::Config(format!("unknown qric_scale {other:?}"))),
        }
    }
}

impl fmt::Display for QricScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QricScale::Total => "total",
            QricScale::Mean => "mean",
        })
    }
}

/// A point on the unit simplex for one (method, τ).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub method: Method,
    pub tau: f64,
    pub weights: Vec<f64>,
}

impl WeightVector {
    /// Clamps round-off negatives to zero and renormalizes.
    pub fn new(method: Method, tau: f64, mut weights: Vec<f64>) -> Result<WeightVector> {
        if weights.is_empty() {
            return Err(Error::Dimension("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < -1e-10) {
            return Err(Error::Dimension(format!("weight {w} outside the simplex")));
        }
        for w in &mut weights {
            *w = w.max(0.0);
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Dimension(format!("weights sum to {s}, not 1")));
        }
        for w in &mut weights {
            *w /= s;
        }
        Ok(WeightVector {
            method,
            tau,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w_m r_m`, the effective number of parameters.
    pub fn effective_parameters(&self, r: &[usize]) -> f64 {
        self.weights.iter().zip(r).map(|(w, &r)| w * r as f64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
}

/// Machado-type information criterion from the in-sample mean tick loss.
/// A perfect fit returns negative infinity.
///
/// ```
/// use qarma::weights::{information_criterion_from, Criterion};
/// assert_eq!(information_criterion_from(1.0, 2, 50, Criterion::Aic), 4.0);
/// let e = std::f64::consts::E;
/// assert!((information_criterion_from(e, 1, 7, Criterion::Bic) - (2.0 + 7f64.ln())).abs() < 1e-12);
/// ```
pub fn information_criterion_from(mean_loss: f64, r: usize, t_est: usize, kind: Criterion) -> f64 {
    if mean_loss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let penalty = match kind {
        Criterion::Aic => 2.0 * r as f64,
        Criterion::Bic => r as f64 * (t_est as f64).ln(),
    };
    2.0 * mean_loss.ln() + penalty
}

pub fn information_criterion(fit: &QuantileFit, t_est: usize, kind: Criterion) -> f64 {
    information_criterion_from(fit.mean_loss, fit.n_regressors(), t_est, kind)
}

/// `w_m ∝ exp(−c_m/2)`, shifted by the minimum for stability. Models at
/// negative infinity share all the weight.
///
/// ```
/// use qarma::weights::smoothed_weights;
/// let w = smoothed_weights(&[0.0, 2.0]);
/// assert!((w[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
/// ```
pub fn smoothed_weights(criteria: &[f64]) -> Vec<f64> {
    let perfect = criteria.iter().filter(|c| **c == f64::NEG_INFINITY).count();
    if perfect > 0 {
        let share = 1.0 / perfect as f64;
        return criteria
            .iter()
            .map(|&c| if c == f64::NEG_INFINITY { share } else { 0.0 })
            .collect();
    }
    let min = criteria.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = criteria.iter().map(|c| (-(c - min) / 2.0).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

pub fn equal_weights(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Hall–Sheather bandwidth `T^{-1/5} {4.5 φ⁴(z) / (2z²+1)²}^{1/5}` with
/// `z = Φ⁻¹(τ)`, capped below `min(τ, 1−τ)`.
///
/// ```
/// let h = qarma::weights::hall_sheather_bandwidth(0.5, 100);
/// assert!((h - 0.25785).abs() < 1e-4);
/// ```
pub fn hall_sheather_bandwidth(tau: f64, t_est: usize) -> f64 {
    let n = Normal::standard();
    let z = n.inverse_cdf(tau);
    let phi = n.pdf(z);
    let core = 4.5 * phi.powi(4) / (2.0 * z * z + 1.0).powi(2);
    let h = (t_est as f64).powf(-0.2) * core.powf(0.2);
    let cap = 0.99 * tau.min(1.0 - tau);
    if h > cap {
        log::warn!("bandwidth {h:.4} at tau={tau} clipped to {cap:.4}");
        cap
    } else {
        h
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (`(n−1)p` positions).
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Difference-quotient estimate of `1/f(F⁻¹(τ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityEstimate {
    pub tau: f64,
    pub bandwidth: f64,
    pub value: f64,
}

pub fn estimate_sparsity(residuals: &[f64], tau: f64, t_est: usize) -> Result<SparsityEstimate> {
    if residuals.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "sparsity needs at least 10 residuals, got {}",
            residuals.len()
        )));
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::ZeroDispersion("all residuals are identical".into()));
    }
    let h = hall_sheather_bandwidth(tau, t_est);
    let quotient =
        |s: &[f64]| (empirical_quantile(s, tau + h) - empirical_quantile(s, tau - h)) / (2.0 * h);
    let mut value = quotient(&sorted);
    if value <= 0.0 {
        // Far in the tails both quantiles can land on the exactly
        // interpolated observations; drop those and retry.
        let nonzero: Vec<f64> = sorted.iter().copied().filter(|e| *e != 0.0).collect();
        if nonzero.len() >= 2 {
            value = quotient(&nonzero);
            log::warn!(
                "sparsity at tau={tau} is flat across the fitted observations; using {} nonzero residuals",
                nonzero.len()
            );
        }
    }
    if value <= 0.0 {
        return Err(Error::ZeroDispersion(format!(
            "residual quantiles coincide around tau={tau}"
        )));
    }
    Ok(SparsityEstimate {
        tau,
        bandwidth: h,
        value,
    })
}

/// Per-unit penalty on `Σ w_m r_m`.
pub fn qric_penalty(sparsity: &SparsityEstimate, t_est: usize, scale: QricScale) -> f64 {
    let tau = sparsity.tau;
    let base = tau * (1.0 - tau) * sparsity.value;
    match scale {
        QricScale::Mean => base,
        QricScale::Total => base / t_est as f64,
    }
}

/// Minimizes mean in-sample tick loss of the combined fit plus the
/// effective-parameter penalty.
pub fn qric_weights(
    fitted: &DMatrix<f64>,
    response: &[f64],
    r: &[usize],
    sparsity: &SparsityEstimate,
    scale: QricScale,
) -> Result<Vec<f64>> {
    let lambda = qric_penalty(sparsity, response.len(), scale);
    let cost: Vec<f64> = r.iter().map(|&r| lambda * r as f64).collect();
    simplex_weights(fitted, response, sparsity.tau, &cost)
}

/// Minimizes the leave-one-out tick loss of the combined prediction.
pub fn jackknife_weights(loo: &DMatrix<f64>, response: &[f64], tau: f64) -> Result<Vec<f64>> {
    simplex_weights(loo, response, tau, &vec![0.0; loo.ncols()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::weight_objective;

    #[test]
    fn softmax_examples() {
        assert_eq!(smoothed_weights(&[4.0, 4.0]), vec![0.5, 0.5]);
        let w = smoothed_weights(&[0.0, 2.0]);
        assert!((w[0] - 0.7311).abs() < 1e-4 && (w[1] - 0.2689).abs() < 1e-4);
        let shifted = smoothed_weights(&[1e3, 1e3 + 2.0]);
        assert!((shifted[0] - w[0]).abs() < 1e-12);
    }

    #[test]
    fn perfect_fits_share_weight() {
        let w = smoothed_weights(&[f64::NEG_INFINITY, 3.0, f64::NEG_INFINITY]);
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert_eq!(
            information_criterion_from(0.0, 2, 10, Criterion::Aic),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn equal() {
        assert_eq!(equal_weights(4), vec![0.25; 4]);
        assert_eq!(equal_weights(1), vec![1.0]);
        assert!((equal_weights(57)[0] - 0.017544).abs() < 1e-6);
    }

    #[test]
    fn bandwidth_shape() {
        for tau in [0.1, 0.25, 0.4] {
            let a = hall_sheather_bandwidth(tau, 60);
            let b = hall_sheather_bandwidth(1.0 - tau, 60);
            assert!((a - b).abs() < 1e-12);
            assert!(a > 0.0 && a < tau);
        }
        assert!(hall_sheather_bandwidth(0.5, 200) < hall_sheather_bandwidth(0.5, 100));
        assert!(hall_sheather_bandwidth(0.02, 10) < 0.02);
    }

    #[test]
    fn uniform_grid_sparsity_near_one() {
        let n = 10_001;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let s = estimate_sparsity(&grid, 0.5, 100).unwrap();
        assert!((s.value - 1.0).abs() < 1e-9);
        let scaled: Vec<f64> = grid.iter().map(|x| 3.0 * x).collect();
        let s3 = estimate_sparsity(&scaled, 0.5, 100).unwrap();
        assert!((s3.value - 3.0 * s.value).abs() < 1e-9);
    }

    #[test]
    fn flat_tail_skips_interpolated_zeros() {
        // six exact zeros from the basis and nothing below them
        let mut e = vec![0.0; 6];
        e.extend((1..48).map(|i| i as f64 / 10.0));
        let s = estimate_sparsity(&e, 0.025, e.len()).unwrap();
        assert!(s.value > 0.0);
        let mut sorted: Vec<f64> = e.iter().copied().filter(|x| *x != 0.0).collect();
        sorted.sort_by(f64::total_cmp);
        let h = s.bandwidth;
        let want = (empirical_quantile(&sorted, 0.025 + h)
            - empirical_quantile(&sorted, 0.025 - h))
            / (2.0 * h);
        assert!((s.value - want).abs() < 1e-12);
    }

    #[test]
    fn constant_residuals_rejected() {
        assert!(matches!(
            estimate_sparsity(&[1.0; 20], 0.5, 20),
            Err(Error::ZeroDispersion(_))
        ));
    }

    #[test]
    fn identical_columns_prefer_smaller_model() {
        let col = [0.5, 1.0, -0.3, 2.0, 0.1];
        let fitted = DMatrix::from_fn(5, 2, |i, _| col[i]);
        let y = [0.7, 0.9, 0.0, 2.5, -0.4];
        let s = SparsityEstimate {
            tau: 0.5,
            bandwidth: 0.2,
            value: 1.0,
        };
        let w = qric_weights(&fitted, &y, &[2, 3], &s, QricScale::Mean).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_loo_column_wins() {
        let y = [1.0, 2.0, 0.5, -1.0];
        let loo = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.0, 1.0, 3.0, //
                1.0, 2.0, 0.0, //
                1.0, 0.5, 0.0, //
                0.0, -1.0, 1.0,
            ],
        );
        let w = jackknife_weights(&loo, &y, 0.7).unwrap();
        assert!((w[1] - 1.0).abs() < 1e-12);
        assert!(weight_objective(&loo, &y, 0.7, &[0.0; 3], &w) < 1e-12);
    }

    #[test]
    fn weight_vector_clamps() {
        let w = WeightVector::new(Method::Qric, 0.5, vec![1.0 + 1e-12, -1e-12]).unwrap();
        assert_eq!(w.weights[1], 0.0);
        assert!(WeightVector::new(Method::Qric, 0.5, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn method_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }
}

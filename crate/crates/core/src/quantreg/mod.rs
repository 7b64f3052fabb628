//! Linear quantile regression by tick-loss minimization.

mod solver;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

use solver::Problem;

/// Check (pinball) loss `e·(τ − 1{e<0})`.
///
/// ```
/// use qarma::quantreg::tick_loss;
/// assert!((tick_loss(2.0, 0.3) - 0.6).abs() < 1e-15);
/// assert!((tick_loss(-1.0, 0.3) - 0.7).abs() < 1e-15);
/// assert_eq!(tick_loss(0.0, 0.9), 0.0);
/// ```
#[inline]
pub fn tick_loss(e: f64, tau: f64) -> f64 {
    if e < 0.0 {
        e * (tau - 1.0)
    } else {
        e * tau
    }
}

/// A quantile level in (0, 1) with its loss.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TickLoss {
    tau: f64,
}

impl TickLoss {
    pub fn new(tau: f64) -> Result<TickLoss> {
        if tau > 0.0 && tau < 1.0 {
            Ok(TickLoss { tau })
        } else {
            Err(Error::Config(format!(
                "quantile level {tau} outside (0, 1)"
            )))
        }
    }

    pub fn tau(self) -> f64 {
        self.tau
    }

    pub fn loss(self, e: f64) -> f64 {
        tick_loss(e, self.tau)
    }

    pub fn mean_loss(self, residuals: &[f64]) -> f64 {
        residuals.iter().map(|&e| self.loss(e)).sum::<f64>() / residuals.len() as f64
    }
}

/// Coefficients and in-sample fit of one quantile autoregression.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    /// Candidate model the fit belongs to, when known.
    pub model_id: Option<usize>,
    pub tau: f64,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub mean_loss: f64,
    /// Observations interpolated by the solution.
    pub basis: Vec<usize>,
}

impl QuantileFit {
    pub fn n_regressors(&self) -> usize {
        self.coefficients.len()
    }

    pub fn with_model(mut self, id: usize) -> QuantileFit {
        self.model_id = Some(id);
        self
    }
}

fn row_major(design: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = design.shape();
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            out.push(design[(i, j)]);
        }
    }
    out
}

fn iteration_cap(n: usize, p: usize) -> usize {
    1_000 + 20 * n * p
}

/// Minimizes `Σ ρ_τ(y_t − z_t'θ)` exactly.
///
/// ```
/// use nalgebra::DMatrix;
/// use qarma::quantreg::fit_qar;
///
/// let ones = DMatrix::from_element(3, 1, 1.0);
/// let fit = fit_qar(&ones, &[1.0, 2.0, 3.0], 0.5).unwrap();
/// assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
/// ```
pub fn fit_qar(design: &DMatrix<f64>, response: &[f64], tau: f64) -> Result<QuantileFit> {
    fit_qar_warm(design, response, tau, None)
}

/// [`fit_qar`] starting from a known set of interpolated rows.
pub fn fit_qar_warm(
    design: &DMatrix<f64>,
    response: &[f64],
    tau: f64,
    warm_start: Option<&[usize]>,
) -> Result<QuantileFit> {
    let loss = TickLoss::new(tau)?;
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows but response has {}",
            response.len()
        )));
    }
    if p == 0 {
        return Err(Error::Dimension("design has no columns".into()));
    }
    let x = row_major(design);
    let problem = Problem::new(&x, response, n, p, tau);
    let sol = problem.solve(warm_start, iteration_cap(n, p))?;
    log::trace!(
        "quantile fit n={n} p={p} tau={tau}: {} pivots",
        sol.iterations
    );
    let mean_loss = loss.mean_loss(&sol.residuals);
    Ok(QuantileFit {
        model_id: None,
        tau,
        coefficients: sol.theta,
        residuals: sol.residuals,
        mean_loss,
        basis: sol.basis,
    })
}

/// `z'θ̂`.
pub fn predict_quantile(fit: &QuantileFit, z: &[f64]) -> Result<f64> {
    if z.len() != fit.coefficients.len() {
        return Err(Error::Dimension(format!(
            "regressor vector of length {} for {} coefficients",
            z.len(),
            fit.coefficients.len()
        )));
    }
    Ok(z.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum())
}

/// Leave-one-out coefficient vectors and the prediction of each left-out row.
#[derive(Debug, Clone, PartialEq)]
pub struct LooFits {
    pub coefficients: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
}

/// Refits with each row deleted in turn.
pub fn leave_one_out_fits(design: &DMatrix<f64>, response: &[f64], tau: f64) -> Result<LooFits> {
    let (n, p) = design.shape();
    if n < p + 2 {
        return Err(Error::InsufficientData(format!(
            "leave-one-out needs more than {} rows for {p} regressors, got {n}",
            p + 1
        )));
    }
    let full = fit_qar(design, response, tau)?;
    let per_row: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let keep: Vec<usize> = (0..n).filter(|&i| i != t).collect();
            let sub = design.select_rows(&keep);
            let y: Vec<f64> = keep.iter().map(|&i| response[i]).collect();
            // shift basis indices past the deleted row
            let warm: Option<Vec<usize>> = (!full.basis.contains(&t)).then(|| {
                full.basis
                    .iter()
                    .map(|&b| if b > t { b - 1 } else { b })
                    .collect()
            });
            let fit = fit_qar_warm(&sub, &y, tau, warm.as_deref())?;
            let z: Vec<f64> = design.row(t).iter().copied().collect();
            let pred = predict_quantile(&fit, &z)?;
            Ok((fit.coefficients, pred))
        })
        .collect::<Result<_>>()?;
    let (coefficients, predictions) = per_row.into_iter().unzip();
    Ok(LooFits {
        coefficients,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn objective(design: &DMatrix<f64>, y: &[f64], theta: &[f64], tau: f64) -> f64 {
        (0..y.len())
            .map(|i| {
                let fit: f64 = (0..theta.len()).map(|j| design[(i, j)] * theta[j]).sum();
                tick_loss(y[i] - fit, tau)
            })
            .sum()
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn tick_loss_examples() {
        assert!((tick_loss(2.0, 0.3) - 0.6).abs() < 1e-15);
        assert!((tick_loss(-1.0, 0.3) - 0.7).abs() < 1e-15);
        for tau in [0.1, 0.5, 0.9] {
            assert_eq!(tick_loss(0.0, tau), 0.0);
        }
        assert!(TickLoss::new(0.0).is_err());
        assert!(TickLoss::new(1.0).is_err());
    }

    #[test]
    fn intercept_only_quantiles() {
        let ones = col(&[1.0, 1.0, 1.0]);
        let y = [1.0, 2.0, 3.0];
        assert!((fit_qar(&ones, &y, 0.5).unwrap().coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit_qar(&ones, &y, 0.3).unwrap().coefficients[0] - 1.0).abs() < 1e-12);
        // flat optimum on [1, 3] resolves to the lower endpoint
        let two = col(&[1.0, 1.0]);
        for y in [[1.0, 3.0], [3.0, 1.0]] {
            let fit = fit_qar(&two, &y, 0.5).unwrap();
            assert!((fit.coefficients[0] - 1.0).abs() < 1e-12, "{y:?}");
        }
    }

    #[test]
    fn loo_of_three_point_median() {
        let ones = col(&[1.0, 1.0, 1.0]);
        // T_est − 1 > r_m holds (2 > 1)
        let loo = leave_one_out_fits(&ones, &[1.0, 2.0, 3.0], 0.5).unwrap();
        assert!((loo.coefficients[1][0] - 1.0).abs() < 1e-12);
        assert!((loo.predictions[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_give_stable_loo() {
        // Intercept-only median of a duplicated odd-length sample: deleting
        // any single copy leaves the median unchanged.
        let base = [4.0, -1.0, 2.5, 7.0, 0.5, 3.0, 9.0];
        let y: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let ones = DMatrix::from_element(y.len(), 1, 1.0);
        let full = fit_qar(&ones, &y, 0.5).unwrap();
        assert!((full.coefficients[0] - 3.0).abs() < 1e-12);
        let loo = leave_one_out_fits(&ones, &y, 0.5).unwrap();
        for coef in &loo.coefficients {
            assert!((coef[0] - full.coefficients[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn loo_with_duplicates_is_optimal_on_each_subset() {
        // With several regressors the full-sample fit need not stay optimal
        // once one copy is removed; the refit must never be worse than it.
        let mut next = lcg(3);
        let n = 8;
        let base: Vec<[f64; 3]> = (0..n).map(|_| [1.0, next(), next() * 2.0 - 1.0]).collect();
        let yb: Vec<f64> = (0..n).map(|_| next()).collect();
        let rows: Vec<[f64; 3]> = base.iter().chain(base.iter()).copied().collect();
        let y: Vec<f64> = yb.iter().chain(yb.iter()).copied().collect();
        let design = DMatrix::from_fn(2 * n, 3, |i, j| rows[i][j]);
        let full = fit_qar(&design, &y, 0.4).unwrap();
        let loo = leave_one_out_fits(&design, &y, 0.4).unwrap();
        for (t, coef) in loo.coefficients.iter().enumerate() {
            let keep: Vec<usize> = (0..2 * n).filter(|&i| i != t).collect();
            let sub = design.select_rows(&keep);
            let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
            let obj_loo = objective(&sub, &ys, coef, 0.4);
            let obj_full = objective(&sub, &ys, &full.coefficients, 0.4);
            assert!(obj_loo <= obj_full + 1e-10, "row {t}");
        }
    }

    #[test]
    fn residual_identity_and_prediction() {
        let mut next = lcg(9);
        let design = DMatrix::from_fn(15, 2, |_, j| if j == 0 { 1.0 } else { next() });
        let y: Vec<f64> = (0..15).map(|_| next()).collect();
        let fit = fit_qar(&design, &y, 0.7).unwrap();
        for (i, yi) in y.iter().enumerate() {
            let z: Vec<f64> = design.row(i).iter().copied().collect();
            let pred = predict_quantile(&fit, &z).unwrap();
            assert!((pred - (yi - fit.residuals[i])).abs() < 1e-10);
        }
        let recomputed = fit
            .residuals
            .iter()
            .map(|&e| tick_loss(e, 0.7))
            .sum::<f64>()
            / 15.0;
        assert!((fit.mean_loss - recomputed).abs() < 1e-12);
        assert!(predict_quantile(&fit, &[1.0]).is_err());
        let simple = QuantileFit {
            model_id: None,
            tau: 0.5,
            coefficients: vec![1.0, -1.0],
            residuals: vec![],
            mean_loss: 0.0,
            basis: vec![],
        };
        assert_eq!(predict_quantile(&simple, &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let design = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64 + 1.0,
        });
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        assert!(matches!(
            fit_qar(&design, &y, 0.5),
            Err(Error::SingularDesign(_))
        ));
        assert!(matches!(
            fit_qar(&col(&[1.0]), &[1.0], 0.5),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn quantile_balance_with_intercept() {
        let mut next = lcg(21);
        for &tau in &[0.1, 0.25, 0.5, 0.77, 0.9] {
            let n = 40;
            let design = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { next() });
            let y: Vec<f64> = (0..n).map(|_| next()).collect();
            let fit = fit_qar(&design, &y, tau).unwrap();
            let neg = fit.residuals.iter().filter(|&&r| r < 0.0).count() as f64;
            let nonpos = fit.residuals.iter().filter(|&&r| r <= 0.0).count() as f64;
            assert!(neg <= n as f64 * tau + 1e-9 && n as f64 * tau <= nonpos + 1e-9);
        }
    }

    #[test]
    fn more_regressors_never_worsen_in_sample_loss() {
        let mut next = lcg(5);
        let n = 30;
        let design = DMatrix::from_fn(n, 4, |_, j| if j == 0 { 1.0 } else { next() });
        let y: Vec<f64> = (0..n).map(|_| next()).collect();
        for tau in [0.2, 0.5, 0.8] {
            let full = fit_qar(&design, &y, tau).unwrap().mean_loss;
            for cols in [vec![0], vec![0, 1], vec![0, 2, 3], vec![1, 2]] {
                let sub = fit_qar(&design.select_columns(&cols), &y, tau)
                    .unwrap()
                    .mean_loss;
                assert!(full <= sub + 1e-8);
            }
        }
    }
}

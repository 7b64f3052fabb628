//! Principal-component factor estimates, one-shot and over expanding windows.
//!
//! For a standardized T×N panel `X` the loadings are the leading
//! eigenvectors of `X'X`, scaled so that `Λ'Λ/N = I_k`, and the factors
//! are `F = XΛ/N`. When `N > T` the T×T matrix `XX'` is decomposed
//! instead; both routes give the same estimate. Each loading column is
//! signed so that its largest-magnitude entry is positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::data::{standardize, Panel};
use crate::error::{Error, Result};

/// Default shortest window for recursive estimation.
pub const DEFAULT_MIN_WINDOW: usize = 24;

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorEstimate {
    /// T×k factor scores.
    pub factors: DMatrix<f64>,
    /// N×k loadings with `Λ'Λ/N = I_k`.
    pub loadings: DMatrix<f64>,
    /// Leading k eigenvalues of `X'X`, descending.
    pub eigenvalues: Vec<f64>,
    pub k: usize,
}

impl FactorEstimate {
    /// `X − FΛ'`, the idiosyncratic component.
    pub fn residuals(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x - &self.factors * self.loadings.transpose()
    }

    fn flip(&mut self, j: usize) {
        self.factors.column_mut(j).neg_mut();
        self.loadings.column_mut(j).neg_mut();
    }
}

/// Principal-component factors of an already standardized panel.
pub fn extract_factors(panel: &Panel, k: usize) -> Result<FactorEstimate> {
    extract_from_matrix(panel.values(), k)
}

fn extract_from_matrix(x: &DMatrix<f64>, k: usize) -> Result<FactorEstimate> {
    extract_via(x, k, x.ncols() > x.nrows())
}

fn extract_via(x: &DMatrix<f64>, k: usize, dual: bool) -> Result<FactorEstimate> {
    let (t, n) = x.shape();
    if k == 0 || k > t.min(n) {
        return Err(Error::Dimension(format!(
            "factor count {k} outside 1..={} for a {t}x{n} panel",
            t.min(n)
        )));
    }
    let (eigenvalues, unit_loadings) = if !dual {
        let (vals, vecs) = leading_eigen(x.tr_mul(x), k)?;
        (vals, vecs)
    } else {
        let (vals, u) = leading_eigen(x * x.transpose(), k)?;
        // Right singular vectors recovered from the dual problem.
        let mut v = DMatrix::zeros(n, k);
        let top = vals[0].max(f64::MIN_POSITIVE);
        for (j, &val) in vals.iter().enumerate().take(k) {
            if val > 1e-12 * top {
                let col = x.tr_mul(&u.column(j)) / val.sqrt();
                v.set_column(j, &col);
            }
        }
        complete_orthonormal(&mut v);
        (vals, v)
    };

    let scale = (n as f64).sqrt();
    let mut loadings = unit_loadings * scale;
    for j in 0..k {
        let col = loadings.column(j);
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            loadings.column_mut(j).neg_mut();
        }
    }
    let factors = x * &loadings / n as f64;
    Ok(FactorEstimate {
        factors,
        loadings,
        eigenvalues,
        k,
    })
}

/// Top-k eigenpairs of a symmetric matrix, descending.
fn leading_eigen(c: DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dim = c.nrows();
    let condition = condition_estimate(&c);
    let eig = SymmetricEigen::try_new(c, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or(Error::Eigen { dim, condition })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let vals = order[..k]
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();
    let vecs = eig.eigenvectors.select_columns(&order[..k]);
    Ok((vals, vecs))
}

fn condition_estimate(c: &DMatrix<f64>) -> f64 {
    let diag = c.diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Replaces zero columns with unit vectors orthogonal to the others.
fn complete_orthonormal(v: &mut DMatrix<f64>) {
    let (n, k) = v.shape();
    for j in 0..k {
        if v.column(j).norm() > 0.5 {
            continue;
        }
        for e in 0..n {
            let mut cand = DVector::zeros(n);
            cand[e] = 1.0;
            for other in 0..k {
                if other != j && v.column(other).norm() > 0.5 {
                    let proj = v.column(other).dot(&cand);
                    cand -= v.column(other) * proj;
                }
            }
            let norm = cand.norm();
            if norm > 1e-6 {
                v.set_column(j, &(cand / norm));
                break;
            }
        }
    }
}

/// Factors estimated on the first `origin` periods, re-standardized on
/// that window. With `previous` given, factor signs are aligned to it over
/// the overlapping periods.
pub fn recursive_factors(
    panel: &Panel,
    k: usize,
    origin: usize,
    min_window: usize,
    previous: Option<&FactorEstimate>,
) -> Result<FactorEstimate> {
    let mut est = window_factors(panel, k, origin, min_window)?;
    if let Some(prev) = previous {
        align_signs(&mut est, prev);
    }
    Ok(est)
}

fn window_factors(
    panel: &Panel,
    k: usize,
    origin: usize,
    min_window: usize,
) -> Result<FactorEstimate> {
    if origin < min_window.max(2) || origin > panel.n_periods() {
        return Err(Error::InsufficientData(format!(
            "factor window of {origin} periods (minimum {min_window}, panel has {})",
            panel.n_periods()
        )));
    }
    let window = standardize(&panel.head(origin))?;
    extract_factors(&window, k)
}

/// Flips factor signs so that each factor correlates positively with its
/// counterpart in `reference` over the shared periods.
pub fn align_signs(est: &mut FactorEstimate, reference: &FactorEstimate) {
    let overlap = est.factors.nrows().min(reference.factors.nrows());
    for j in 0..est.k.min(reference.k) {
        let a = est.factors.column(j);
        let b = reference.factors.column(j);
        let cross: f64 = (0..overlap).map(|i| a[i] * b[i]).sum();
        if cross < 0.0 {
            est.flip(j);
        }
    }
}

/// Recursive estimates for a sequence of increasing window lengths. The
/// windows are decomposed in parallel; sign alignment then runs in order,
/// each window against its predecessor.
pub fn recursive_factor_path(
    panel: &Panel,
    k: usize,
    origins: &[usize],
    min_window: usize,
) -> Result<Vec<FactorEstimate>> {
    let mut path: Vec<FactorEstimate> = origins
        .par_iter()
        .map(|&o| window_factors(panel, k, o, min_window))
        .collect::<Result<_>>()?;
    for i in 1..path.len() {
        let (done, rest) = path.split_at_mut(i);
        align_signs(&mut rest[0], &done[i - 1]);
    }
    Ok(path)
}

/// `ln V(k) + k·(N+T)/(NT)·ln min(N,T)` for k = 1..=k_max, where `V(k)` is
/// the mean squared residual after removing k principal components.
pub fn num_factors_criterion(panel: &Panel, k_max: usize) -> Result<Vec<f64>> {
    let (t, n) = (panel.n_periods(), panel.n_series());
    if k_max == 0 || 2 * k_max > t.min(n) {
        return Err(Error::Dimension(format!(
            "k_max {k_max} must lie in 1..={} for a {t}x{n} panel",
            t.min(n) / 2
        )));
    }
    let x = panel.values();
    let total = x.norm_squared();
    let gram = if n <= t {
        x.tr_mul(x)
    } else {
        x * x.transpose()
    };
    let (vals, _) = leading_eigen(gram, k_max)?;
    let (nf, tf) = (n as f64, t as f64);
    let penalty = (nf + tf) / (nf * tf) * nf.min(tf).ln();
    let mut explained = 0.0;
    Ok(vals
        .iter()
        .enumerate()
        .map(|(i, mu)| {
            explained += mu;
            let v = ((total - explained).max(0.0) / (nf * tf)).max(f64::MIN_POSITIVE);
            v.ln() + (i + 1) as f64 * penalty
        })
        .collect())
}

/// Number of factors minimizing [`num_factors_criterion`].
pub fn select_num_factors(panel: &Panel, k_max: usize) -> Result<usize> {
    let crit = num_factors_criterion(panel, k_max)?;
    let mut best = 0;
    for (i, c) in crit.iter().enumerate() {
        if *c < crit[best] {
            best = i;
        }
    }
    Ok(best + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(x: DMatrix<f64>) -> Panel {
        let names = (0..x.ncols()).map(|j| format!("s{j}")).collect();
        Panel::from_matrix(x, names).unwrap()
    }

    fn pseudo_random(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed;
        DMatrix::from_fn(t, n, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn rank_one_panel_is_reconstructed() {
        let f = [1.0, -2.0, 0.5, 3.0, -1.5, 0.25];
        let l = [2.0, -1.0, 0.5, 1.5];
        let x = DMatrix::from_fn(6, 4, |i, j| f[i] * l[j]);
        let est = extract_factors(&panel(x.clone()), 1).unwrap();
        assert!(est.residuals(&x).amax() < 1e-10);
    }

    #[test]
    fn complete_basis_reconstructs_both_orientations() {
        for (t, n) in [(9, 4), (4, 9), (5, 5)] {
            let x = pseudo_random(t, n, 7);
            let est = extract_factors(&panel(x.clone()), t.min(n)).unwrap();
            assert!(est.residuals(&x).amax() < 1e-10, "{t}x{n}");
        }
        // centred wide panel: one null direction must still be completed
        let p = standardize(&panel(pseudo_random(4, 9, 3))).unwrap();
        let est = extract_factors(&p, 4).unwrap();
        assert!(est.residuals(p.values()).amax() < 1e-10);
        let gram = est.loadings.tr_mul(&est.loadings) / 9.0;
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn dual_route_matches_primal() {
        for (t, n) in [(5, 8), (12, 4), (7, 7)] {
            let x = pseudo_random(t, n, 13);
            let primal = extract_via(&x, 3, false).unwrap();
            let dual = extract_via(&x, 3, true).unwrap();
            assert!((&primal.factors - &dual.factors).amax() < 1e-10);
            assert!((&primal.loadings - &dual.loadings).amax() < 1e-10);
            for (a, b) in primal.eigenvalues.iter().zip(&dual.eigenvalues) {
                assert!((a - b).abs() < 1e-10 * a.max(1.0));
            }
        }
    }

    #[test]
    fn normalization_and_eigen_trace() {
        let p = standardize(&panel(pseudo_random(30, 7, 5))).unwrap();
        for k in 1..=5 {
            let est = extract_factors(&p, k).unwrap();
            let gram = est.loadings.tr_mul(&est.loadings) / 7.0;
            assert!((gram - DMatrix::identity(k, k)).amax() < 1e-10);
            let ff = est.factors.tr_mul(&est.factors);
            let sum: f64 = est.eigenvalues.iter().sum();
            assert!((ff.trace() * 7.0 - sum).abs() < 1e-8);
            assert!(est.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn largest_loading_is_positive() {
        let p = standardize(&panel(pseudo_random(20, 6, 9))).unwrap();
        let est = extract_factors(&p, 3).unwrap();
        for j in 0..3 {
            let col = est.loadings.column(j);
            let big = col
                .iter()
                .copied()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn k_out_of_range() {
        let p = panel(pseudo_random(10, 3, 1));
        assert!(matches!(extract_factors(&p, 0), Err(Error::Dimension(_))));
        assert!(matches!(extract_factors(&p, 4), Err(Error::Dimension(_))));
    }

    #[test]
    fn recursion_at_full_sample_is_plain_extraction() {
        let raw = panel(pseudo_random(40, 6, 21));
        let full = extract_factors(&standardize(&raw).unwrap(), 2).unwrap();
        let rec = recursive_factors(&raw, 2, 40, 24, None).unwrap();
        assert_eq!(full, rec);
        assert!(matches!(
            recursive_factors(&raw, 2, 20, 24, None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn consecutive_windows_agree_on_rank_one_panel() {
        let t = 50;
        let f: Vec<f64> = (0..t)
            .map(|i| ((i * 7 % 11) as f64 - 5.0) + 0.1 * i as f64)
            .collect();
        let l = [1.0, -0.5, 2.0, 0.7];
        let raw = panel(DMatrix::from_fn(t, 4, |i, j| {
            f[i] * l[j] + 0.01 * ((i * j) % 3) as f64
        }));
        let path = recursive_factor_path(&raw, 1, &[40, 41], 24).unwrap();
        let a = path[0].factors.column(0);
        let b = path[1].factors.column(0);
        let corr = pearson(
            &a.iter().copied().collect::<Vec<_>>(),
            &b.rows(0, 40).iter().copied().collect::<Vec<_>>(),
        );
        assert!(corr > 0.999, "{corr}");
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn selection_on_rank_one_and_two_factor_panels() {
        let t = 60;
        let n = 12;
        let f1: Vec<f64> = (0..t).map(|i| (i as f64 * 0.37).sin()).collect();
        let f2: Vec<f64> = (0..t).map(|i| (i as f64 * 1.13).cos()).collect();
        let l1: Vec<f64> = (0..n).map(|j| 1.0 + 0.1 * j as f64).collect();
        let l2: Vec<f64> = (0..n)
            .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let noise = pseudo_random(t, n, 99) * 1e-6;
        let rank1 = DMatrix::from_fn(t, n, |i, j| f1[i] * l1[j]) + &noise;
        assert_eq!(select_num_factors(&panel(rank1), 4).unwrap(), 1);
        let rank2 = DMatrix::from_fn(t, n, |i, j| f1[i] * l1[j] + f2[i] * l2[j]) + &noise;
        assert_eq!(select_num_factors(&panel(rank2), 6).unwrap(), 2);
    }

    #[test]
    fn criterion_matches_explicit_residuals() {
        let p = standardize(&panel(pseudo_random(30, 10, 17))).unwrap();
        let crit = num_factors_criterion(&p, 4).unwrap();
        let penalty = 40.0 / 300.0 * 10f64.ln();
        for k in 1..=4 {
            let est = extract_factors(&p, k).unwrap();
            let v = est.residuals(p.values()).norm_squared() / 300.0;
            assert!((crit[k - 1] - (v.ln() + k as f64 * penalty)).abs() < 1e-9);
        }
        assert!(num_factors_criterion(&p, 6).is_err());
    }
}

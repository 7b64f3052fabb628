//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> TestRng {
        TestRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Box–Muller, deliberately not the library's inverse-CDF route.
    pub fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform(), self.uniform());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
}

pub fn check_loss(y: &[f64], fit: &[f64], tau: f64) -> f64 {
    y.iter()
        .zip(fit)
        .map(|(y, f)| {
            let e = y - f;
            if e < 0.0 {
                (tau - 1.0) * e
            } else {
                tau * e
            }
        })
        .sum()
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

/// Smallest total check loss over every basic solution: coefficient
/// vectors interpolating `p` rows with a nonsingular submatrix.
pub fn brute_force_qr(x: &DMatrix<f64>, y: &[f64], tau: f64) -> Option<f64> {
    let (n, p) = x.shape();
    let mut best: Option<f64> = None;
    for rows in subsets(n, p) {
        let xs = x.select_rows(&rows);
        let ys = DVector::from_iterator(p, rows.iter().map(|&i| y[i]));
        let lu = xs.lu();
        if lu.determinant().abs() < 1e-10 {
            continue;
        }
        let Some(theta) = lu.solve(&ys) else { continue };
        let fit = x * &theta;
        let obj = check_loss(y, fit.as_slice(), tau);
        best = Some(best.map_or(obj, |b: f64| b.min(obj)));
    }
    best
}

/// Minimum of the weight-LP objective over the simplex grid with spacing
/// `step`, and the largest objective change one grid step can cause.
pub fn grid_simplex_min(
    q: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    cost: &[f64],
    step: f64,
) -> (f64, Vec<f64>, f64) {
    let (t, m) = q.shape();
    let units = (1.0 / step).round() as usize;
    let mut best = (f64::INFINITY, vec![]);
    let mut w = vec![0usize; m];
    fn rec(j: usize, left: usize, w: &mut Vec<usize>, eval: &mut dyn FnMut(&[usize])) {
        if j + 1 == w.len() {
            w[j] = left;
            eval(w);
            return;
        }
        for a in 0..=left {
            w[j] = a;
            rec(j + 1, left - a, w, eval);
        }
    }
    let mut eval = |w: &[usize]| {
        let wf: Vec<f64> = w.iter().map(|&a| a as f64 / units as f64).collect();
        let fit: Vec<f64> = (0..t)
            .map(|i| (0..m).map(|k| q[(i, k)] * wf[k]).sum())
            .collect();
        let obj = check_loss(y, &fit, tau) / t as f64
            + cost.iter().zip(&wf).map(|(c, w)| c * w).sum::<f64>();
        if obj < best.0 {
            best = (obj, wf);
        }
    };
    rec(0, units, &mut w, &mut eval);
    let mut spread = 0.0f64;
    for i in 0..t {
        let row = q.row(i);
        let span = row.max() - row.min();
        spread = spread.max(span);
    }
    let cmax = cost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cmin = cost.iter().copied().fold(f64::INFINITY, f64::min);
    let variation = step * (spread * tau.max(1.0 - tau) + (cmax - cmin));
    (best.0, best.1, variation)
}

/// Canonical correlations between the column spaces of `a` and `b`,
/// largest first.
pub fn canonical_correlations(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for j in 0..c.ncols() {
            let mean = c.column(j).mean();
            c.column_mut(j).add_scalar_mut(-mean);
        }
        c
    };
    let qa = center(a).qr().q();
    let qb = center(b).qr().q();
    let s = (qa.transpose() * qb).svd(false, false).singular_values;
    let mut v: Vec<f64> = s.iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

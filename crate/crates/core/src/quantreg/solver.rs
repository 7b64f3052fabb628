//! Vertex simplex for `min Σ ρ_τ(y_i − x_i'θ)`.
//!
//! The iterate is always a basic solution: θ interpolates `p` observations
//! (the basis rows) and every other observation sits on the positive or
//! negative side of the fit. Leaving a basis row in either direction is an
//! edge of the polyhedron; its reduced cost is the directional derivative
//! of the objective. The step along an improving edge is an exact line
//! search over the sorted breakpoints, so one pivot may pass through many
//! vertices (the Barrodale–Roberts long step). Residual signs that become
//! ambiguous (exact zeros off the basis) are kept as explicit side flags,
//! which makes the reduced-cost test a valid optimality certificate on
//! degenerate problems too.
//!
//! After optimality, zero-cost edges that decrease θ lexicographically are
//! followed, so flat optima resolve to the lexicographically smallest
//! vertex reachable that way (for an intercept-only fit, the lower end of
//! the quantile interval).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Consecutive zero-length pivots before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 20;

#[derive(Debug, Clone)]
pub(crate) struct VertexSolution {
    pub theta: Vec<f64>,
    pub basis: Vec<usize>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

pub(crate) struct Problem<'a> {
    /// Row-major n×p design.
    x: &'a [f64],
    y: &'a [f64],
    n: usize,
    p: usize,
    tau: f64,
}

struct Iterate {
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// true: observation on or above the fit (u basic), false: below.
    upper: Vec<bool>,
    theta: Vec<f64>,
    residuals: Vec<f64>,
    /// n×p, row i holds x_i' B⁻¹.
    g: Vec<f64>,
    binv: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64], n: usize, p: usize, tau: f64) -> Problem<'a> {
        debug_assert_eq!(x.len(), n * p);
        debug_assert_eq!(y.len(), n);
        Problem { x, y, n, p, tau }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let fit: f64 = self.row(i).iter().zip(theta).map(|(a, b)| a * b).sum();
                super::tick_loss(self.y[i] - fit, self.tau)
            })
            .sum()
    }

    /// Greedy maximum-residual row selection; fails when rank < p.
    fn initial_basis(&self) -> Result<Vec<usize>> {
        let (n, p) = (self.n, self.p);
        let mut resid: Vec<f64> = self.x.to_vec();
        let max_norm = (0..n)
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        let mut chosen = Vec::with_capacity(p);
        let mut used = vec![false; n];
        for _ in 0..p {
            let mut best = None;
            let mut best_norm = 0.0;
            for i in 0..n {
                if used[i] {
                    continue;
                }
                let norm: f64 = resid[i * p..(i + 1) * p].iter().map(|v| v * v).sum();
                if norm > best_norm {
                    best_norm = norm;
                    best = Some(i);
                }
            }
            let Some(b) = best.filter(|_| best_norm.sqrt() > 1e-10 * max_norm) else {
                return Err(Error::SingularDesign(format!(
                    "design of {n} rows has rank {} < {p} columns",
                    chosen.len()
                )));
            };
            used[b] = true;
            chosen.push(b);
            let q: Vec<f64> = resid[b * p..(b + 1) * p]
                .iter()
                .map(|v| v / best_norm.sqrt())
                .collect();
            for i in 0..n {
                if used[i] {
                    continue;
                }
                let r = &mut resid[i * p..(i + 1) * p];
                let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
                for (rv, qv) in r.iter_mut().zip(&q) {
                    *rv -= dot * qv;
                }
            }
        }
        chosen.sort_unstable();
        Ok(chosen)
    }

    fn build(&self, basis: Vec<usize>, upper_hint: Option<&[bool]>) -> Option<Iterate> {
        let (n, p) = (self.n, self.p);
        let b = DMatrix::from_fn(p, p, |r, c| self.x[basis[r] * p + c]);
        let binv = b.try_inverse()?;
        let yh = nalgebra::DVector::from_fn(p, |r, _| self.y[basis[r]]);
        let theta_v = &binv * yh;
        let theta: Vec<f64> = theta_v.iter().copied().collect();
        let mut in_basis = vec![false; n];
        for &h in &basis {
            in_basis[h] = true;
        }
        let yscale = self
            .y
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let zero_tol = 1e-11 * yscale;
        let mut residuals = vec![0.0; n];
        let mut upper = vec![true; n];
        let mut g = vec![0.0; n * p];
        for i in 0..n {
            let row = self.row(i);
            for j in 0..p {
                g[i * p + j] = (0..p).map(|k| row[k] * binv[(k, j)]).sum();
            }
            if in_basis[i] {
                continue;
            }
            let fit: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let r = self.y[i] - fit;
            residuals[i] = r;
            upper[i] = if r > zero_tol {
                true
            } else if r < -zero_tol {
                false
            } else {
                upper_hint.is_none_or(|u| u[i])
            };
        }
        Some(Iterate {
            basis,
            in_basis,
            upper,
            theta,
            residuals,
            g,
            binv,
        })
    }

    pub fn solve(&self, warm_start: Option<&[usize]>, max_iter: usize) -> Result<VertexSolution> {
        if self.n <= self.p {
            return Err(Error::InsufficientData(format!(
                "{} observations for {} regressors",
                self.n, self.p
            )));
        }
        let start = match warm_start.and_then(|b| self.build(b.to_vec(), None)) {
            Some(it) => it,
            None => {
                let basis = self.initial_basis()?;
                self.build(basis, None).ok_or_else(|| {
                    Error::SingularDesign("initial basis matrix is not invertible".into())
                })?
            }
        };
        let mut it = start;
        let mut iterations = 0;
        let mut degenerate_run = 0;
        loop {
            // primal improvement
            loop {
                let bland = degenerate_run >= DEGENERATE_SWITCH;
                let Some((j, s, rc)) = self.entering_edge(&it, bland) else {
                    break;
                };
                iterations += 1;
                if iterations > max_iter {
                    return Err(Error::NonConvergence {
                        iterations,
                        gap: -rc,
                    });
                }
                let (step, next) = self.pivot(&it, j, s, rc, bland)?;
                degenerate_run = if step > 0.0 { 0 } else { degenerate_run + 1 };
                it = next;
            }
            // lexicographic tie-break over the optimal face
            match self.lex_move(&it)? {
                Some(next) => {
                    iterations += 1;
                    if iterations > max_iter {
                        return Err(Error::NonConvergence {
                            iterations,
                            gap: 0.0,
                        });
                    }
                    it = next;
                }
                None => break,
            }
        }
        Ok(VertexSolution {
            theta: it.theta,
            basis: it.basis,
            residuals: it.residuals,
            iterations,
        })
    }

    /// Reduced costs `(rc_plus, rc_minus, tolerance)` for basis slot j.
    fn reduced_costs(&self, it: &Iterate, j: usize) -> (f64, f64, f64) {
        let (p, tau) = (self.p, self.tau);
        let mut a = 0.0;
        let mut scale = 1.0;
        for i in 0..self.n {
            if it.in_basis[i] {
                continue;
            }
            let gij = it.g[i * p + j];
            let psi = if it.upper[i] { tau } else { tau - 1.0 };
            a -= psi * gij;
            scale += gij.abs();
        }
        (a + 1.0 - tau, -a + tau, 1e-11 * scale)
    }

    fn entering_edge(&self, it: &Iterate, bland: bool) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        let mut slots: Vec<usize> = (0..self.p).collect();
        if bland {
            slots.sort_by_key(|&j| it.basis[j]);
        }
        for j in slots {
            let (plus, minus, tol) = self.reduced_costs(it, j);
            for (s, rc) in [(1.0, plus), (-1.0, minus)] {
                if rc < -tol {
                    if bland {
                        return Some((j, s, rc));
                    }
                    if best.is_none_or(|(_, _, b)| rc < b) {
                        best = Some((j, s, rc));
                    }
                }
            }
        }
        best
    }

    /// Breakpoints `(t, row, |g|)` along edge (j, s), sorted by step then row.
    fn breakpoints(&self, it: &Iterate, j: usize, s: f64) -> Vec<(f64, usize, f64)> {
        let p = self.p;
        let mut pts: Vec<(f64, usize, f64)> = (0..self.n)
            .filter(|&i| !it.in_basis[i])
            .filter_map(|i| {
                let gi = s * it.g[i * p + j];
                let approaching = (it.upper[i] && gi > 0.0) || (!it.upper[i] && gi < 0.0);
                approaching.then(|| ((it.residuals[i] / gi).max(0.0), i, gi.abs()))
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pts
    }

    fn pivot(
        &self,
        it: &Iterate,
        j: usize,
        s: f64,
        rc: f64,
        short_step: bool,
    ) -> Result<(f64, Iterate)> {
        let pts = self.breakpoints(it, j, s);
        let mut slope = rc;
        let mut stop = None;
        for (k, &(_, _, gabs)) in pts.iter().enumerate() {
            slope += gabs;
            if short_step || slope >= -1e-13 * (1.0 + rc.abs()) {
                stop = Some(k);
                break;
            }
        }
        let Some(k) = stop else {
            return Err(Error::SingularDesign(
                "objective unbounded along an edge; design is rank deficient".into(),
            ));
        };
        let (step, entering, _) = pts[k];
        let mut upper = it.upper.clone();
        for &(_, i, _) in &pts[..k] {
            upper[i] = !upper[i];
        }
        let leaving = it.basis[j];
        upper[leaving] = s < 0.0;
        let mut basis = it.basis.clone();
        basis[j] = entering;
        let next = self
            .build(basis, Some(&upper))
            .ok_or_else(|| Error::SingularDesign("pivot produced a singular basis".into()))?;
        Ok((step, next))
    }

    fn lex_move(&self, it: &Iterate) -> Result<Option<Iterate>> {
        let p = self.p;
        for j in 0..p {
            let (plus, minus, tol) = self.reduced_costs(it, j);
            for (s, rc) in [(1.0, plus), (-1.0, minus)] {
                if rc.abs() > tol {
                    continue;
                }
                let dir: Vec<f64> = (0..p).map(|k| s * it.binv[(k, j)]).collect();
                let dnorm = dir.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let lead = dir.iter().find(|v| v.abs() > 1e-12 * dnorm).copied();
                if !matches!(lead, Some(v) if v < 0.0) {
                    continue;
                }
                let pts = self.breakpoints(it, j, s);
                let Some(&(step, entering, _)) = pts.first() else {
                    continue;
                };
                let theta_scale = it.theta.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
                if step * dnorm <= 1e-12 * theta_scale.max(1e-12) {
                    continue;
                }
                let mut upper = it.upper.clone();
                upper[it.basis[j]] = s < 0.0;
                let mut basis = it.basis.clone();
                basis[j] = entering;
                let Some(next) = self.build(basis, Some(&upper)) else {
                    continue;
                };
                let before = self.objective(&it.theta);
                let after = self.objective(&next.theta);
                if after <= before + 1e-12 * (1.0 + before.abs()) {
                    return Ok(Some(next));
                }
            }
        }
        Ok(None)
    }
}

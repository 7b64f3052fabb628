//! Simplex-constrained tick-loss minimization for combination weights.
//!
//! Solves
//!
//! ```text
//! min  (1/T) Σ_t [τ u_t + (1−τ) v_t] + Σ_m c_m w_m
//! s.t. y_t = Σ_m q_tm w_m + u_t − v_t,   Σ_m w_m = 1,   w, u, v ≥ 0
//! ```
//!
//! with a dense tableau simplex. The start basis puts all weight on the
//! first column, which is always feasible, so no phase one is needed.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quantreg::tick_loss;

const EPS: f64 = 1e-11;
/// Degenerate pivots in a row before switching to Bland's rule.
const STALL_LIMIT: usize = 50;

/// Objective of the weight LP at `w`.
pub fn weight_objective(
    predictions: &DMatrix<f64>,
    response: &[f64],
    tau: f64,
    cost: &[f64],
    w: &[f64],
) -> f64 {
    let t = response.len();
    let fit = predictions * nalgebra::DVector::from_column_slice(w);
    let loss: f64 = (0..t).map(|i| tick_loss(response[i] - fit[i], tau)).sum();
    loss / t as f64 + cost.iter().zip(w).map(|(c, w)| c * w).sum::<f64>()
}

/// Optimal simplex weights for the LP above.
///
/// `predictions` is `T × M`; `cost` has one linear penalty per column.
pub fn simplex_weights(
    predictions: &DMatrix<f64>,
    response: &[f64],
    tau: f64,
    cost: &[f64],
) -> Result<Vec<f64>> {
    let (t, m) = predictions.shape();
    if response.len() != t || cost.len() != m {
        return Err(Error::Dimension(format!(
            "weight problem with {t}x{m} predictions, {} responses, {} costs",
            response.len(),
            cost.len()
        )));
    }
    if m == 0 || t == 0 {
        return Err(Error::Dimension("empty weight problem".into()));
    }
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let mut tab = Tableau::build(predictions, response, tau, cost);
    tab.run(1_000 + 50 * (t + m))?;
    let mut w: Vec<f64> = (0..m).map(|j| tab.value(j).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    Ok(w)
}

/// Standard-form tableau; row `rows` holds reduced costs, last column the rhs.
struct Tableau {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(q: &DMatrix<f64>, y: &[f64], tau: f64, cost: &[f64]) -> Tableau {
        let (t, m) = q.shape();
        let rows = t + 1;
        let cols = m + 2 * t;
        let width = cols + 1;
        let mut a = vec![0.0; (rows + 1) * width];
        for i in 0..t {
            for j in 0..m {
                a[i * width + j] = q[(i, j)];
            }
            a[i * width + m + i] = 1.0;
            a[i * width + m + t + i] = -1.0;
            a[i * width + cols] = y[i];
        }
        for j in 0..m {
            a[t * width + j] = 1.0;
        }
        a[t * width + cols] = 1.0;
        let obj = rows * width;
        a[obj..obj + m].copy_from_slice(cost);
        for i in 0..t {
            a[obj + m + i] = tau / t as f64;
            a[obj + m + t + i] = (1.0 - tau) / t as f64;
        }

        let mut tab = Tableau {
            rows,
            cols,
            a,
            basis: vec![0; rows],
        };
        // w_1 carries the convexity row; each residual sits in u or v by sign.
        tab.pivot(t, 0);
        for i in 0..t {
            let rhs = tab.at(i, cols);
            let col = if rhs >= 0.0 { m + i } else { m + t + i };
            tab.pivot(i, col);
        }
        tab
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    fn value(&self, var: usize) -> f64 {
        self.basis
            .iter()
            .position(|&b| b == var)
            .map_or(0.0, |r| self.at(r, self.cols))
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols + 1;
        let p = self.at(r, c);
        let (head, rest) = self.a.split_at_mut(r * width);
        let (prow, tail) = rest.split_at_mut(width);
        for x in prow.iter_mut() {
            *x /= p;
        }
        prow[c] = 1.0;
        for row in head.chunks_mut(width).chain(tail.chunks_mut(width)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        if r < self.rows {
            self.basis[r] = c;
        }
    }

    fn run(&mut self, max_iter: usize) -> Result<()> {
        let obj = self.rows;
        let mut stall = 0;
        for _ in 0..max_iter {
            let bland = stall >= STALL_LIMIT;
            let mut enter = None;
            let mut best = -EPS;
            for c in 0..self.cols {
                let d = self.at(obj, c);
                if d < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let col = self.at(r, c);
                if col > EPS {
                    let ratio = self.at(r, self.cols).max(0.0) / col;
                    let better = match leave {
                        None => true,
                        Some((lr, lv)) => {
                            ratio < lv - EPS
                                || (ratio <= lv + EPS && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            // the feasible set is bounded, so a ray can only come from round-off
            let Some((r, ratio)) = leave else {
                return Err(Error::NonConvergence {
                    iterations: 0,
                    gap: -self.at(obj, c),
                });
            };
            stall = if ratio <= EPS { stall + 1 } else { 0 };
            self.pivot(r, c);
        }
        let gap = (0..self.cols).map(|c| -self.at(obj, c)).fold(0.0, f64::max);
        Err(Error::NonConvergence {
            iterations: max_iter,
            gap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column_is_trivial() {
        let q = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(
            simplex_weights(&q, &[0.0, 0.0, 0.0], 0.5, &[0.0]).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn exact_column_takes_all_weight() {
        let y = [1.0, -2.0, 0.5, 3.0];
        let q = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.0, 1.0, 2.0, //
                1.0, -2.0, 0.0, //
                -1.0, 0.5, 1.0, //
                2.0, 3.0, 5.0,
            ],
        );
        let w = simplex_weights(&q, &y, 0.3, &[0.0; 3]).unwrap();
        assert!((w[1] - 1.0).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn penalty_breaks_ties_toward_cheaper_column() {
        let q = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let w = simplex_weights(&q, &[1.5, 1.0, 0.2], 0.5, &[0.2, 0.3]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn midpoint_beats_vertices() {
        // averaging two opposite errors is exact
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let y = [1.0, 1.0];
        let w = simplex_weights(&q, &y, 0.5, &[0.0, 0.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!(weight_objective(&q, &y, 0.5, &[0.0, 0.0], &w).abs() < 1e-12);
    }

    #[test]
    fn dimension_checks() {
        let q = DMatrix::from_element(2, 2, 1.0);
        assert!(simplex_weights(&q, &[1.0], 0.5, &[0.0, 0.0]).is_err());
        assert!(simplex_weights(&q, &[1.0, 2.0], 0.5, &[0.0]).is_err());
    }
}

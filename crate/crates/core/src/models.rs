//! Candidate model space: the regressor pool, subset enumeration and
//! per-model design matrices.

use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One entry of the regressor pool. Lags are one-based: lag `j` at origin
/// `t` is the value at `t + 1 − j`, so lag 1 is the latest observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regressor {
    Intercept,
    OwnLag(usize),
    /// Lag of another target series, by position in the auxiliary list.
    AuxLag {
        series: usize,
        lag: usize,
    },
    FactorLag {
        factor: usize,
        lag: usize,
    },
}

impl Regressor {
    fn lag(self) -> usize {
        match self {
            Regressor::Intercept => 1,
            Regressor::OwnLag(j) => j,
            Regressor::AuxLag { lag, .. } | Regressor::FactorLag { lag, .. } => lag,
        }
    }
}

impl fmt::Display for Regressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Regressor::Intercept => f.write_str("intercept"),
            Regressor::OwnLag(j) => write!(f, "own_lag{j}"),
            Regressor::AuxLag { series, lag } => write!(f, "aux{}_lag{lag}", series + 1),
            Regressor::FactorLag { factor, lag } => write!(f, "factor{}_lag{lag}", factor + 1),
        }
    }
}

/// Ordered, duplicate-free list of regressors. Positions are one-based in
/// [`CandidateModel::included`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegressorPool {
    entries: Vec<Regressor>,
}

impl RegressorPool {
    pub fn new(entries: Vec<Regressor>) -> Result<RegressorPool> {
        if entries.is_empty() {
            return Err(Error::Config("empty regressor pool".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].contains(e) {
                return Err(Error::Config(format!("duplicate regressor {e} in pool")));
            }
            if *e == Regressor::Intercept && i != 0 {
                return Err(Error::Config(
                    "intercept must be the first pool entry".into(),
                ));
            }
            if e.lag() == 0 {
                return Err(Error::Config(format!("regressor {e} has lag 0")));
            }
        }
        Ok(RegressorPool { entries })
    }

    /// Intercept, two own lags, one lag of the other target and the first
    /// lag of two factors.
    pub fn standard() -> RegressorPool {
        RegressorPool {
            entries: vec![
                Regressor::Intercept,
                Regressor::OwnLag(1),
                Regressor::OwnLag(2),
                Regressor::AuxLag { series: 0, lag: 1 },
                Regressor::FactorLag { factor: 0, lag: 1 },
                Regressor::FactorLag { factor: 1, lag: 1 },
            ],
        }
    }

    /// Pool built from lag counts, in the order intercept, own lags, lags
    /// of each auxiliary series, lags of each factor.
    pub fn from_counts(
        intercept: bool,
        own_lags: usize,
        aux_series: usize,
        aux_lags: usize,
        factors: usize,
        factor_lags: usize,
    ) -> Result<RegressorPool> {
        let mut entries = Vec::new();
        if intercept {
            entries.push(Regressor::Intercept);
        }
        entries.extend((1..=own_lags).map(Regressor::OwnLag));
        for series in 0..aux_series {
            entries.extend((1..=aux_lags).map(|lag| Regressor::AuxLag { series, lag }));
        }
        for factor in 0..factors {
            entries.extend((1..=factor_lags).map(|lag| Regressor::FactorLag { factor, lag }));
        }
        RegressorPool::new(entries)
    }

    pub fn entries(&self) -> &[Regressor] {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// Deepest lag in the pool, which fixes the first usable origin.
    pub fn lag_depth(&self) -> usize {
        self.entries.iter().map(|e| e.lag()).max().unwrap_or(1)
    }

    pub fn factors_needed(&self) -> usize {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Regressor::FactorLag { factor, .. } => Some(factor + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn aux_needed(&self) -> usize {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Regressor::AuxLag { series, .. } => Some(series + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// One-based position of `r`.
    pub fn position(&self, r: Regressor) -> Option<usize> {
        self.entries.iter().position(|&e| e == r).map(|i| i + 1)
    }
}

/// A subset of pool positions (one-based, increasing).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateModel {
    pub id: usize,
    pub included: Vec<usize>,
}

impl CandidateModel {
    pub fn r(&self) -> usize {
        self.included.len()
    }
}

/// All subsets of `1..=pool_size` with at least `min_size` members, by
/// size and then lexicographically. Ids start at 1.
///
/// ```
/// use qarma::models::enumerate_models;
/// let models = enumerate_models(6, 2).unwrap();
/// assert_eq!(models.len(), 57);
/// assert_eq!(models[15].included, vec![1, 2, 3]);
/// ```
pub fn enumerate_models(pool_size: usize, min_size: usize) -> Result<Vec<CandidateModel>> {
    if min_size < 2 || min_size > pool_size {
        return Err(Error::Config(format!(
            "minimum model size {min_size} must lie in 2..={pool_size}"
        )));
    }
    if pool_size > 20 {
        return Err(Error::Config(format!(
            "pool of {pool_size} regressors is too large to enumerate"
        )));
    }
    let mut out = Vec::new();
    for k in min_size..=pool_size {
        let mut comb: Vec<usize> = (1..=k).collect();
        loop {
            out.push(CandidateModel {
                id: out.len() + 1,
                included: comb.clone(),
            });
            // advance to the next k-combination
            let Some(i) = (0..k).rev().find(|&i| comb[i] < pool_size - (k - 1 - i)) else {
                break;
            };
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Writes `model_id,slot_1..slot_n` rows, padding short models with `NaN`.
pub fn write_models_csv<W: std::io::Write>(
    models: &[CandidateModel],
    pool_size: usize,
    mut out: W,
) -> std::io::Result<()> {
    let header: Vec<String> = (1..=pool_size).map(|i| format!("slot_{i}")).collect();
    writeln!(out, "model_id,{}", header.join(","))?;
    for m in models {
        let mut cells: Vec<String> = m.included.iter().map(|p| p.to_string()).collect();
        cells.resize(pool_size, "NaN".into());
        writeln!(out, "{},{}", m.id, cells.join(","))?;
    }
    Ok(())
}

/// Series the pool draws on. Factor rows are indexed by period, starting
/// at the first period of the target.
#[derive(Debug, Clone, Copy)]
pub struct RegressorData<'a> {
    pub target: &'a [f64],
    pub aux: &'a [Vec<f64>],
    pub factors: Option<&'a DMatrix<f64>>,
}

impl RegressorData<'_> {
    fn value(&self, r: Regressor, t: usize) -> Result<f64> {
        if r == Regressor::Intercept {
            return Ok(1.0);
        }
        let lag = r.lag();
        if t + 1 < lag {
            return Err(Error::Alignment(format!(
                "{r} at origin {t} reaches before the first period"
            )));
        }
        let s = t + 1 - lag;
        let (v, len) = match r {
            Regressor::OwnLag(_) => (self.target.get(s).copied(), self.target.len()),
            Regressor::AuxLag { series, .. } => {
                let x = self.aux.get(series).ok_or_else(|| {
                    Error::Alignment(format!("{r} needs auxiliary series {}", series + 1))
                })?;
                (x.get(s).copied(), x.len())
            }
            Regressor::FactorLag { factor, .. } => {
                let f = self
                    .factors
                    .filter(|f| factor < f.ncols())
                    .ok_or_else(|| Error::Alignment(format!("{r} needs factor {}", factor + 1)))?;
                ((s < f.nrows()).then(|| f[(s, factor)]), f.nrows())
            }
            Regressor::Intercept => unreachable!(),
        };
        v.ok_or_else(|| {
            Error::Alignment(format!(
                "{r} at origin {t} needs period {s}, series has {len}"
            ))
        })
    }
}

/// `Z_t` restricted to the model's regressors.
pub fn design_row(
    pool: &RegressorPool,
    data: &RegressorData<'_>,
    model: &CandidateModel,
    t: usize,
) -> Result<Vec<f64>> {
    model
        .included
        .iter()
        .map(|&p| {
            let r = pool.entries.get(p.wrapping_sub(1)).ok_or_else(|| {
                Error::Config(format!(
                    "model {} uses position {p} outside the pool",
                    model.id
                ))
            })?;
            data.value(*r, t)
        })
        .collect()
}

/// Design rows `Z_t` and responses `y_{t+1}` for origins `t` in `origins`.
///
/// ```
/// use qarma::models::{build_design, CandidateModel, RegressorData, RegressorPool};
/// let pool = RegressorPool::standard();
/// let y = [1.0, 2.0, 3.0, 4.0];
/// let data = RegressorData { target: &y, aux: &[], factors: None };
/// let m = CandidateModel { id: 1, included: vec![1, 2] };
/// let (x, resp) = build_design(&pool, &data, &m, 0..3).unwrap();
/// assert_eq!(x.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0]);
/// assert_eq!(resp, vec![2.0, 3.0, 4.0]);
/// ```
pub fn build_design(
    pool: &RegressorPool,
    data: &RegressorData<'_>,
    model: &CandidateModel,
    origins: Range<usize>,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = origins.len();
    let mut x = DMatrix::zeros(n, model.r());
    let mut y = Vec::with_capacity(n);
    for (i, t) in origins.enumerate() {
        let row = design_row(pool, data, model, t)?;
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        let resp = data.target.get(t + 1).copied().ok_or_else(|| {
            Error::Alignment(format!(
                "response for origin {t} is past the end of the target ({} periods)",
                data.target.len()
            ))
        })?;
        y.push(resp);
    }
    Ok((x, y))
}

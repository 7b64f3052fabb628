//! One-step-ahead averaged quantile and interval forecasts over the
//! evaluation sample.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{split_sample, split_sample_at, Panel, SampleSplit, TargetSeries};
use crate::error::{Error, Result};
use crate::factors::{recursive_factor_path, FactorEstimate};
use crate::models::{
    build_design, design_row, enumerate_models, CandidateModel, Regressor, RegressorData,
    RegressorPool,
};
use crate::quantreg::{fit_qar, leave_one_out_fits, QuantileFit};
use crate::weights::{
    equal_weights, estimate_sparsity, information_criterion, jackknife_weights, qric_weights,
    smoothed_weights, Criterion, Method, QricScale, WeightVector,
};

/// Whether per-model coefficients are re-estimated at each origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefScheme {
    /// Expanding window through the forecast origin.
    #[default]
    Recursive,
    /// Estimation-sample coefficients throughout.
    Fixed,
}

impl FromStr for CoefScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<CoefScheme> {
        match s.trim() {
            "recursive" => Ok(CoefScheme::Recursive),
            "fixed" => Ok(CoefScheme::Fixed),
            other => Err(Error::Config(format!("unknown coef_scheme {other:?}"))),
        }
    }
}

impl fmt::Display for CoefScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoefScheme::Recursive => "recursive",
            CoefScheme::Fixed => "fixed",
        })
    }
}

/// One forecast of `y_{t+1}` made at origin `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub method: Method,
    pub tau: f64,
    /// Period index of the origin `t`.
    pub origin: usize,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub realized: f64,
    pub nominal_p: f64,
}

/// `Σ w_m q_m`.
///
/// ```
/// use qarma::forecast::average_forecast;
/// assert_eq!(average_forecast(&[1.0 / 3.0; 3], &[1.0, 2.0, 3.0]).unwrap(), 2.0);
/// ```
pub fn average_forecast(weights: &[f64], predictions: &[f64]) -> Result<f64> {
    if weights.len() != predictions.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} model predictions",
            weights.len(),
            predictions.len()
        )));
    }
    Ok(weights.iter().zip(predictions).map(|(w, q)| w * q).sum())
}

/// Quantile levels bracketing `τ` for an interval of nominal coverage `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalLevels {
    pub low: f64,
    pub high: f64,
    pub clipped: bool,
}

/// `(τ − p/2, τ + p/2)`. A side that would leave (0, 1) is pulled to the
/// midpoint between `τ` and the boundary.
///
/// ```
/// use qarma::forecast::interval_bounds;
/// let b = interval_bounds(0.5, 0.10).unwrap();
/// assert!((b.low - 0.45).abs() < 1e-12 && (b.high - 0.55).abs() < 1e-12);
/// ```
pub fn interval_bounds(tau: f64, nominal_p: f64) -> Result<IntervalLevels> {
    if !(tau > 0.0 && tau < 1.0) || !(nominal_p > 0.0 && nominal_p < 1.0) {
        return Err(Error::Config(format!(
            "interval around tau={tau} with coverage {nominal_p}"
        )));
    }
    let half = nominal_p / 2.0;
    let (mut low, mut high, mut clipped) = (tau - half, tau + half, false);
    if low <= 0.0 {
        low = tau / 2.0;
        clipped = true;
    }
    if high >= 1.0 {
        high = (1.0 + tau) / 2.0;
        clipped = true;
    }
    if clipped {
        log::warn!(
            "interval levels for tau={tau}, p={nominal_p} leave (0, 1); clipped to ({low}, {high})"
        );
    }
    Ok(IntervalLevels { low, high, clipped })
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub pool: RegressorPool,
    pub min_model_size: usize,
    pub quantiles: Vec<f64>,
    pub nominal_p: f64,
    pub methods: Vec<Method>,
    pub coef_scheme: CoefScheme,
    pub qric_scale: QricScale,
    /// Estimation sample size in regression pairs; half the sample if unset.
    pub estimation_end: Option<usize>,
    pub n_factors: usize,
    pub min_window: usize,
    /// Keep every candidate model's point forecast.
    pub keep_individual: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            pool: RegressorPool::standard(),
            min_model_size: 2,
            quantiles: (1..=9).map(|i| i as f64 / 10.0).collect(),
            nominal_p: 0.10,
            methods: Method::ALL.to_vec(),
            coef_scheme: CoefScheme::Recursive,
            qric_scale: QricScale::Mean,
            estimation_end: None,
            n_factors: 2,
            min_window: crate::factors::DEFAULT_MIN_WINDOW,
            keep_individual: false,
        }
    }
}

/// Series feeding a backtest. All share the same periods.
#[derive(Debug, Clone, Copy)]
pub struct BacktestData<'a> {
    pub target: &'a TargetSeries,
    pub aux: &'a [TargetSeries],
    /// Predictor panel for factor extraction, already stationary.
    pub panel: Option<&'a Panel>,
}

/// Per-model point forecasts at one grid quantile, `P × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualForecasts {
    pub tau: f64,
    pub predictions: DMatrix<f64>,
    pub realized: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CrossingStats {
    /// Intervals whose bounds came out reversed and were swapped.
    pub swapped: usize,
    /// Records whose point forecast falls outside the ordered interval.
    pub point_outside: usize,
}

#[derive(Debug, Clone)]
pub struct Backtest {
    pub split: SampleSplit,
    pub lag_depth: usize,
    /// Period index of the first forecast origin.
    pub first_origin: usize,
    pub models: Vec<CandidateModel>,
    pub weights: Vec<WeightVector>,
    pub records: Vec<ForecastRecord>,
    pub crossings: CrossingStats,
    pub individual: Vec<IndividualForecasts>,
    /// Factors from the estimation window, when the pool uses any.
    pub estimation_factors: Option<FactorEstimate>,
}

impl Backtest {
    pub fn weights_for(&self, method: Method, tau: f64) -> Option<&WeightVector> {
        self.weights
            .iter()
            .find(|w| w.method == method && level_key(w.tau) == level_key(tau))
    }
}

fn level_key(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

fn validate(cfg: &BacktestConfig) -> Result<()> {
    if cfg.quantiles.is_empty() {
        return Err(Error::Config("empty quantile grid".into()));
    }
    for w in cfg.quantiles.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config(
                "quantile grid must be strictly increasing".into(),
            ));
        }
    }
    if cfg.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::Config("quantile grid must lie inside (0, 1)".into()));
    }
    if !(cfg.nominal_p > 0.0 && cfg.nominal_p < 1.0) {
        return Err(Error::Config(format!(
            "nominal_p {} outside (0, 1)",
            cfg.nominal_p
        )));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("no forecasting methods selected".into()));
    }
    Ok(())
}

/// Model list for the run: the enumerated candidates first, then the
/// naive and full references when they are not already among them.
struct ModelSet {
    models: Vec<CandidateModel>,
    candidates: usize,
    naive: Option<usize>,
    full: Option<usize>,
}

impl ModelSet {
    fn build(cfg: &BacktestConfig) -> Result<ModelSet> {
        let averaging = cfg.methods.iter().any(|m| m.is_average()) || cfg.keep_individual;
        let mut models = if averaging {
            enumerate_models(cfg.pool.size(), cfg.min_model_size)?
        } else {
            Vec::new()
        };
        let candidates = models.len();
        let mut locate = |included: Vec<usize>| {
            models
                .iter()
                .position(|m| m.included == included)
                .unwrap_or_else(|| {
                    models.push(CandidateModel { id: 0, included });
                    models.len() - 1
                })
        };
        let naive = if cfg.methods.contains(&Method::Naive) {
            let pos = |r| {
                cfg.pool.position(r).ok_or_else(|| {
                    Error::Config(format!("naive model needs {r} in the regressor pool"))
                })
            };
            Some(locate(vec![
                pos(Regressor::Intercept)?,
                pos(Regressor::OwnLag(1))?,
            ]))
        } else {
            None
        };
        let full = cfg
            .methods
            .contains(&Method::Full)
            .then(|| locate((1..=cfg.pool.size()).collect()));
        Ok(ModelSet {
            models,
            candidates,
            naive,
            full,
        })
    }
}

/// Runs the fixed-weight, expanding-window forecasting protocol.
pub fn run_backtest(data: &BacktestData<'_>, cfg: &BacktestConfig) -> Result<Backtest> {
    validate(cfg)?;
    let t_total = data.target.len();
    for a in data.aux {
        if a.len() != t_total {
            return Err(Error::Alignment(format!(
                "series {:?} has {} periods, target {:?} has {t_total}",
                a.name,
                a.len(),
                data.target.name
            )));
        }
    }
    if cfg.pool.aux_needed() > data.aux.len() {
        return Err(Error::Config(format!(
            "regressor pool needs {} auxiliary series, {} given",
            cfg.pool.aux_needed(),
            data.aux.len()
        )));
    }
    let lag = cfg.pool.lag_depth();
    let split = match cfg.estimation_end {
        Some(e) => split_sample_at(t_total, lag, e)?,
        None => split_sample(t_total, lag)?,
    };
    let t1 = split.estimation_end;
    let n_pairs = t1 + split.evaluation_count;
    let first_origin = t1 + lag - 1;
    let origins: Vec<usize> = (t1..n_pairs).map(|i| i + lag - 1).collect();

    let set = ModelSet::build(cfg)?;
    let m_cand = set.candidates;

    // distinct quantile levels: the grid plus interval bounds
    let mut levels: BTreeMap<i64, f64> = BTreeMap::new();
    let mut bounds = Vec::with_capacity(cfg.quantiles.len());
    for &tau in &cfg.quantiles {
        let b = interval_bounds(tau, cfg.nominal_p)?;
        for x in [tau, b.low, b.high] {
            levels.entry(level_key(x)).or_insert(x);
        }
        bounds.push(b);
    }
    let level_list: Vec<f64> = levels.values().copied().collect();
    let level_index: BTreeMap<i64, usize> =
        levels.keys().enumerate().map(|(i, &k)| (k, i)).collect();
    let li = |x: f64| level_index[&level_key(x)];

    let path = factor_path(data, cfg, &origins)?;
    let aux: Vec<Vec<f64>> = data.aux.iter().map(|a| a.values.clone()).collect();
    let regs = |i: usize| RegressorData {
        target: &data.target.values,
        aux: &aux,
        factors: path.as_ref().map(|p| &p[i].factors),
    };

    // estimation sample: fits for every model at every level
    let est_data = regs(0);
    let est_range = (lag - 1)..(lag - 1 + t1);
    let designs: Vec<(DMatrix<f64>, Vec<f64>)> = set
        .models
        .iter()
        .map(|m| build_design(&cfg.pool, &est_data, m, est_range.clone()))
        .collect::<Result<_>>()
        .map_err(|e| e.context("model-space"))?;
    let jobs: Vec<(usize, usize)> = (0..level_list.len())
        .flat_map(|l| (0..set.models.len()).map(move |m| (l, m)))
        .collect();
    let est_fits: Vec<QuantileFit> = jobs
        .par_iter()
        .map(|&(l, m)| {
            let (x, y) = &designs[m];
            fit_qar(x, y, level_list[l]).map(|f| f.with_model(set.models[m].id))
        })
        .collect::<Result<_>>()
        .map_err(|e| e.context("quantile-regression"))?;
    let fit_at = |l: usize, m: usize| &est_fits[l * set.models.len() + m];

    let averaging: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| m.is_average())
        .collect();
    let mut weights = Vec::new();
    for (l, &level) in level_list.iter().enumerate() {
        for &method in &averaging {
            let w = estimate_weights(method, level, l, m_cand, &set, &designs, &fit_at, t1, cfg)
                .map_err(|e| e.context("weighting"))?;
            weights.push(WeightVector::new(method, level, w)?);
        }
    }
    let weight = |method: Method, l: usize| -> &[f64] {
        let idx = l * averaging.len() + averaging.iter().position(|&m| m == method).unwrap();
        &weights[idx].weights
    };

    // evaluation: per-origin predictions for every model and level
    let preds: Vec<DMatrix<f64>> = origins
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            origin_predictions(cfg, &set, &regs(k), t, lag, &level_list, &|l, m| {
                fit_at(l, m)
            })
            .map_err(|e| Error::Origin {
                origin: period_label(data.panel, t),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut crossings = CrossingStats::default();
    let realized: Vec<f64> = origins.iter().map(|&t| data.target.values[t + 1]).collect();
    for &method in &cfg.methods {
        for (g, &tau) in cfg.quantiles.iter().enumerate() {
            let (lp, lo, hi) = (li(tau), li(bounds[g].low), li(bounds[g].high));
            for (k, &t) in origins.iter().enumerate() {
                let p = &preds[k];
                let combine = |l: usize| -> f64 {
                    let row = p.row(l);
                    match method {
                        Method::Naive => row[set.naive.unwrap()],
                        Method::Full => row[set.full.unwrap()],
                        _ => weight(method, l)
                            .iter()
                            .enumerate()
                            .map(|(m, w)| w * row[m])
                            .sum(),
                    }
                };
                let point = combine(lp);
                let (mut lower, mut upper) = (combine(lo), combine(hi));
                if lower > upper {
                    log::debug!("{method} tau={tau} origin {t}: interval bounds crossed, swapped");
                    std::mem::swap(&mut lower, &mut upper);
                    crossings.swapped += 1;
                }
                if point < lower || point > upper {
                    crossings.point_outside += 1;
                }
                records.push(ForecastRecord {
                    method,
                    tau,
                    origin: t,
                    point,
                    lower,
                    upper,
                    realized: realized[k],
                    nominal_p: cfg.nominal_p,
                });
            }
        }
    }
    records.sort_by(|a, b| {
        (a.method, level_key(a.tau), a.origin).cmp(&(b.method, level_key(b.tau), b.origin))
    });
    if crossings.swapped > 0 {
        log::warn!(
            "{} forecast intervals had crossing bounds",
            crossings.swapped
        );
    }

    let individual = if cfg.keep_individual {
        cfg.quantiles
            .iter()
            .map(|&tau| {
                let l = li(tau);
                IndividualForecasts {
                    tau,
                    predictions: DMatrix::from_fn(origins.len(), m_cand, |k, m| preds[k][(l, m)]),
                    realized: realized.clone(),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut models = set.models;
    models.truncate(m_cand);
    Ok(Backtest {
        split,
        lag_depth: lag,
        first_origin,
        models,
        weights,
        records,
        crossings,
        individual,
        estimation_factors: path.map(|mut p| p.swap_remove(0)),
    })
}

fn period_label(panel: Option<&Panel>, t: usize) -> String {
    panel
        .and_then(|p| p.time_index().get(t))
        .map_or_else(|| t.to_string(), |p| p.label().to_string())
}

/// Recursive factor estimates for windows ending at each origin.
fn factor_path(
    data: &BacktestData<'_>,
    cfg: &BacktestConfig,
    origins: &[usize],
) -> Result<Option<Vec<FactorEstimate>>> {
    let needed = cfg.pool.factors_needed();
    if needed == 0 {
        return Ok(None);
    }
    let panel = data
        .panel
        .ok_or_else(|| Error::Config("regressor pool uses factors but no panel is given".into()))?;
    if panel.n_periods() != data.target.len() {
        return Err(Error::Alignment(format!(
            "panel has {} periods, target has {}",
            panel.n_periods(),
            data.target.len()
        )));
    }
    if cfg.n_factors < needed {
        return Err(Error::Config(format!(
            "pool uses {needed} factors but only {} are extracted",
            cfg.n_factors
        )));
    }
    let lengths: Vec<usize> = origins.iter().map(|t| t + 1).collect();
    recursive_factor_path(panel, cfg.n_factors, &lengths, cfg.min_window)
        .map(Some)
        .map_err(|e| e.context("factor-extraction"))
}

#[allow(clippy::too_many_arguments)]
fn estimate_weights<'a>(
    method: Method,
    level: f64,
    l: usize,
    m_cand: usize,
    set: &ModelSet,
    designs: &[(DMatrix<f64>, Vec<f64>)],
    fit_at: &dyn Fn(usize, usize) -> &'a QuantileFit,
    t1: usize,
    cfg: &BacktestConfig,
) -> Result<Vec<f64>> {
    let fits: Vec<&QuantileFit> = (0..m_cand).map(|m| fit_at(l, m)).collect();
    let response = &designs[0].1;
    Ok(match method {
        Method::Equal => equal_weights(m_cand),
        Method::Aic | Method::Bic => {
            let kind = if method == Method::Aic {
                Criterion::Aic
            } else {
                Criterion::Bic
            };
            let crit: Vec<f64> = fits
                .iter()
                .map(|f| information_criterion(f, t1, kind))
                .collect();
            smoothed_weights(&crit)
        }
        Method::Qric => {
            let fitted = DMatrix::from_fn(t1, m_cand, |t, m| response[t] - fits[m].residuals[t]);
            let r: Vec<usize> = set.models[..m_cand].iter().map(|m| m.r()).collect();
            let largest = (0..m_cand).rev().max_by_key(|&m| r[m]).unwrap_or(0);
            let sparsity = estimate_sparsity(&fits[largest].residuals, level, t1)?;
            qric_weights(&fitted, response, &r, &sparsity, cfg.qric_scale)?
        }
        Method::Jackknife => {
            let cols: Vec<Vec<f64>> = designs[..m_cand]
                .par_iter()
                .map(|(x, y)| leave_one_out_fits(x, y, level).map(|f| f.predictions))
                .collect::<Result<_>>()?;
            let loo = DMatrix::from_fn(t1, m_cand, |t, m| cols[m][t]);
            jackknife_weights(&loo, response, level)?
        }
        Method::Naive | Method::Full => unreachable!("reference methods carry no weights"),
    })
}

/// `levels × models` matrix of quantile predictions for `y_{t+1}`.
fn origin_predictions<'a>(
    cfg: &BacktestConfig,
    set: &ModelSet,
    data: &RegressorData<'_>,
    t: usize,
    lag: usize,
    levels: &[f64],
    est_fit: &dyn Fn(usize, usize) -> &'a QuantileFit,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(levels.len(), set.models.len());
    for (m, model) in set.models.iter().enumerate() {
        let z = design_row(&cfg.pool, data, model, t)?;
        let design = match cfg.coef_scheme {
            CoefScheme::Recursive => Some(build_design(&cfg.pool, data, model, (lag - 1)..t)?),
            CoefScheme::Fixed => None,
        };
        for (l, &level) in levels.iter().enumerate() {
            let coef = match &design {
                Some((x, y)) => fit_qar(x, y, level)?.coefficients,
                None => est_fit(l, m).coefficients.clone(),
            };
            out[(l, m)] = z.iter().zip(&coef).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// `method,tau,origin,point,lower,upper,realized,nominal_p`, with the
/// origin written through `label`.
pub fn write_records_csv<W: std::io::Write>(
    records: &[ForecastRecord],
    label: &dyn Fn(usize) -> String,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(
        out,
        "method,tau,origin,point,lower,upper,realized,nominal_p"
    )?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.tau,
            label(r.origin),
            r.point,
            r.lower,
            r.upper,
            r.realized,
            r.nominal_p
        )?;
    }
    Ok(())
}

/// Reads records written by [`write_records_csv`]. Origins are numbered in
/// order of first appearance of their labels.
pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<ForecastRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let expected = [
        "method",
        "tau",
        "origin",
        "point",
        "lower",
        "upper",
        "realized",
        "nominal_p",
    ];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(Error::Ingestion {
            row: 0,
            column: "header".into(),
            message: format!("expected columns {}", expected.join(",")),
        });
    }
    let mut labels: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let num = |c: usize| -> Result<f64> {
            row[c].trim().parse::<f64>().map_err(|_| Error::Ingestion {
                row: i + 1,
                column: expected[c].into(),
                message: format!("not a number: {:?}", &row[c]),
            })
        };
        let method: Method = row[0].parse().map_err(|_| Error::Ingestion {
            row: i + 1,
            column: "method".into(),
            message: format!("unknown method {:?}", &row[0]),
        })?;
        let label = row[2].trim();
        let origin = labels.iter().position(|l| l == label).unwrap_or_else(|| {
            labels.push(label.to_string());
            labels.len() - 1
        });
        out.push(ForecastRecord {
            method,
            tau: num(1)?,
            origin,
            point: num(3)?,
            lower: num(4)?,
            upper: num(5)?,
            realized: num(6)?,
            nominal_p: num(7)?,
        });
    }
    Ok(out)
}

/// `method,tau,model_id,weight`.
pub fn write_weights_csv<W: std::io::Write>(
    weights: &[WeightVector],
    models: &[CandidateModel],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "method,tau,model_id,weight")?;
    let mut sorted: Vec<&WeightVector> = weights.iter().collect();
    sorted.sort_by_key(|w| (w.method, level_key(w.tau)));
    for w in sorted {
        for (m, x) in models.iter().zip(&w.weights) {
            writeln!(out, "{},{},{},{}", w.method, w.tau, m.id, x)?;
        }
    }
    Ok(())
}

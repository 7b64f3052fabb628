//! Out-of-sample scoring: unconditional coverage, interval score and final
//! prediction error per (method, τ).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forecast::ForecastRecord;
use crate::quantreg::tick_loss;
use crate::weights::Method;

/// Two-sided significance of a coverage deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Star {
    None,
    /// Rejected at 10%.
    Ten,
    /// Rejected at 5%.
    Five,
}

impl Star {
    pub fn as_str(self) -> &'static str {
        match self {
            Star::None => "",
            Star::Ten => "*",
            Star::Five => "**",
        }
    }
}

impl fmt::Display for Star {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Penalty multiplier in the interval score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreFactor {
    /// `2/(1−p)`.
    #[default]
    Coverage,
    /// `2/p`, treating `p` as the tail mass outside the interval.
    Classical,
}

impl ScoreFactor {
    pub fn multiplier(self, nominal_p: f64) -> f64 {
        match self {
            ScoreFactor::Coverage => 2.0 / (1.0 - nominal_p),
            ScoreFactor::Classical => 2.0 / nominal_p,
        }
    }
}

impl FromStr for ScoreFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<ScoreFactor> {
        match s.trim() {
            "coverage" => Ok(ScoreFactor::Coverage),
            "classical" => Ok(ScoreFactor::Classical),
            other => Err(Error::Config(format!("unknown score_factor {other:?}"))),
        }
    }
}

impl fmt::Display for ScoreFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreFactor::Coverage => "coverage",
            ScoreFactor::Classical => "classical",
        })
    }
}

pub fn covered(r: &ForecastRecord) -> bool {
    r.realized >= r.lower && r.realized <= r.upper
}

/// Share of records whose realization lies in `[lower, upper]`.
pub fn coverage_rate(records: &[ForecastRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    records.iter().filter(|r| covered(r)).count() as f64 / records.len() as f64
}

/// Normal-approximation binomial test of `rate` against `nominal_p`.
///
/// ```
/// use qarma::evaluate::{coverage_significance, Star};
/// assert_eq!(coverage_significance(11.0 / 53.0, 0.1, 53), Star::Five);
/// assert_eq!(coverage_significance(9.0 / 53.0, 0.1, 53), Star::Ten);
/// assert_eq!(coverage_significance(0.1, 0.1, 53), Star::None);
/// ```
pub fn coverage_significance(rate: f64, nominal_p: f64, p_eval: usize) -> Star {
    let z = (rate - nominal_p) / (nominal_p * (1.0 - nominal_p) / p_eval as f64).sqrt();
    if z.abs() > 1.96 {
        Star::Five
    } else if z.abs() > 1.645 {
        Star::Ten
    } else {
        Star::None
    }
}

/// `(U−L) + c·(L−y)·1{y<L} + c·(y−U)·1{y>U}`.
///
/// ```
/// use qarma::evaluate::{interval_score, ScoreFactor};
/// let s = interval_score(0.0, 1.0, 1.45, 0.1, ScoreFactor::Coverage);
/// assert!((s - 2.0).abs() < 1e-12);
/// ```
pub fn interval_score(
    lower: f64,
    upper: f64,
    realized: f64,
    nominal_p: f64,
    factor: ScoreFactor,
) -> f64 {
    let c = factor.multiplier(nominal_p);
    let mut s = upper - lower;
    if realized < lower {
        s += c * (lower - realized);
    }
    if realized > upper {
        s += c * (realized - upper);
    }
    s
}

pub fn average_interval_score(records: &[ForecastRecord], factor: ScoreFactor) -> f64 {
    let total: f64 = records
        .iter()
        .map(|r| interval_score(r.lower, r.upper, r.realized, r.nominal_p, factor))
        .sum();
    total / records.len() as f64
}

/// Mean tick loss of the point forecasts.
pub fn final_prediction_error(records: &[ForecastRecord]) -> f64 {
    let total: f64 = records
        .iter()
        .map(|r| tick_loss(r.realized - r.point, r.tau))
        .sum();
    total / records.len() as f64
}

/// Metrics for one (method, τ).
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub method: Method,
    pub tau: f64,
    pub coverage: f64,
    pub star: Star,
    pub interval_score: f64,
    pub fpe: f64,
    pub p_eval: usize,
    pub nominal_p: f64,
}

fn tau_key(tau: f64) -> i64 {
    (tau * 1e9).round() as i64
}

/// One report row per (method, τ), after checking that every method has
/// records at every τ for the same origins.
pub fn build_report(
    records: &[ForecastRecord],
    factor: ScoreFactor,
) -> Result<Vec<EvaluationReport>> {
    if records.is_empty() {
        return Err(Error::Incomplete("no forecast records".into()));
    }
    let mut groups: BTreeMap<(Method, i64), Vec<ForecastRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method, tau_key(r.tau)))
            .or_default()
            .push(r.clone());
    }
    let methods: Vec<Method> = {
        let mut m: Vec<Method> = groups.keys().map(|k| k.0).collect();
        m.dedup();
        m
    };
    let mut taus: Vec<(i64, f64)> = records.iter().map(|r| (tau_key(r.tau), r.tau)).collect();
    taus.sort_by_key(|t| t.0);
    taus.dedup_by_key(|t| t.0);

    let reference: Vec<usize> = {
        let mut o: Vec<usize> = groups
            .values()
            .next()
            .unwrap()
            .iter()
            .map(|r| r.origin)
            .collect();
        o.sort_unstable();
        o
    };
    let mut out = Vec::with_capacity(methods.len() * taus.len());
    for &method in &methods {
        for &(key, tau) in &taus {
            let Some(group) = groups.get(&(method, key)) else {
                return Err(Error::Incomplete(format!(
                    "no records for {method} at tau={tau}"
                )));
            };
            let mut origins: Vec<usize> = group.iter().map(|r| r.origin).collect();
            origins.sort_unstable();
            if origins != reference {
                return Err(Error::Incomplete(format!(
                    "{method} at tau={tau} has {} records over different origins than the rest ({})",
                    origins.len(),
                    reference.len()
                )));
            }
            if let Some(bad) = group
                .iter()
                .find(|r| !(r.lower <= r.upper) || !r.realized.is_finite())
            {
                return Err(Error::Incomplete(format!(
                    "{method} at tau={tau}, origin {}: unordered bounds or missing realization",
                    bad.origin
                )));
            }
            let p_eval = group.len();
            let coverage = coverage_rate(group);
            let nominal = group[0].nominal_p;
            out.push(EvaluationReport {
                method,
                tau,
                coverage,
                star: coverage_significance(coverage, nominal, p_eval),
                interval_score: average_interval_score(group, factor),
                fpe: final_prediction_error(group),
                p_eval,
                nominal_p: nominal,
            });
        }
    }
    Ok(out)
}

/// `method,tau,coverage,star,interval_score,fpe,P`.
pub fn write_report_csv<W: std::io::Write>(
    reports: &[EvaluationReport],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "method,tau,coverage,star,interval_score,fpe,P")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.tau, r.coverage, r.star, r.interval_score, r.fpe, r.p_eval
        )?;
    }
    Ok(())
}

/// Which metric a plot-data file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Coverage,
    IntervalScore,
    Fpe,
}

/// Long-format `tau,method,value`. The coverage file adds `band_low` and
/// `band_high` rows: the 10%-level acceptance region of the coverage test.
pub fn write_plot_csv<W: std::io::Write>(
    reports: &[EvaluationReport],
    metric: PlotMetric,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "tau,method,value")?;
    let mut taus: Vec<(i64, f64, usize, f64)> = Vec::new();
    for r in reports {
        let v = match metric {
            PlotMetric::Coverage => r.coverage,
            PlotMetric::IntervalScore => r.interval_score,
            PlotMetric::Fpe => r.fpe,
        };
        writeln!(out, "{},{},{}", r.tau, r.method, v)?;
        if !taus.iter().any(|t| t.0 == tau_key(r.tau)) {
            taus.push((tau_key(r.tau), r.tau, r.p_eval, r.nominal_p));
        }
    }
    if metric == PlotMetric::Coverage {
        for (_, tau, p_eval, nominal) in taus {
            let half = 1.645 * (nominal * (1.0 - nominal) / p_eval as f64).sqrt();
            writeln!(out, "{tau},band_low,{}", (nominal - half).max(0.0))?;
            writeln!(out, "{tau},band_high,{}", nominal + half)?;
        }
    }
    Ok(())
}

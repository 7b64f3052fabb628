//! Run configuration: plain-text `key = value` lines grouped under
//! `[section]` headers (or written as `section.key = value`).
//!
//! ```text
//! [data]
//! panel_path = panel.csv
//! target = GDP
//! aux = CPI
//! transforms.IP = logdiff
//!
//! [forecast]
//! quantiles = 0.1, 0.5, 0.9
//! methods = equal, qric, jackknife, naive
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::Transform;
use crate::error::{Error, Result};
use crate::evaluate::ScoreFactor;
use crate::factors::DEFAULT_MIN_WINDOW;
use crate::forecast::{BacktestConfig, CoefScheme};
use crate::models::RegressorPool;
use crate::synth::{ErrorDist, SyntheticSpec};
use crate::weights::{Method, QricScale};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Regressor pool choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PoolSpec {
    Standard,
    Counts {
        intercept: bool,
        own_lags: usize,
        aux_lags: usize,
        factor_lags: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub target: String,
    pub aux: Vec<String>,
    /// Panel columns kept out of factor extraction; the targets if unset.
    pub factor_exclude: Option<Vec<String>>,
    pub transforms: Vec<(String, Transform)>,
    pub pool: PoolSpec,
    pub factors: usize,
    pub min_model_size: usize,
    pub min_window: usize,
    pub quantiles: Vec<f64>,
    pub nominal_p: f64,
    pub methods: Vec<Method>,
    pub estimation_end: Option<usize>,
    pub coef_scheme: CoefScheme,
    pub qric_scale: QricScale,
    pub score_factor: ScoreFactor,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: DataSource::Synthetic(SyntheticSpec::default()),
            target: "y1".into(),
            aux: vec!["y2".into()],
            factor_exclude: None,
            transforms: Vec::new(),
            pool: PoolSpec::Standard,
            factors: 2,
            min_model_size: 2,
            min_window: DEFAULT_MIN_WINDOW,
            quantiles: (1..=9).map(|i| i as f64 / 10.0).collect(),
            nominal_p: 0.10,
            methods: Method::ALL.to_vec(),
            estimation_end: None,
            coef_scheme: CoefScheme::Recursive,
            qric_scale: QricScale::Mean,
            score_factor: ScoreFactor::Coverage,
            seed: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Flattens `[section]` headers into `section.key` entries.
fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut section = String::new();
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        let key = if section.is_empty() || k.starts_with(&format!("{section}.")) {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key {key}",
                i + 1
            )));
        }
    }
    Ok(out)
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig> {
        let entries = parse_entries(text)?;
        let mut cfg = RunConfig {
            output_dir: base.join("out"),
            ..RunConfig::default()
        };
        let mut panel_path = None;
        let mut synth = SyntheticSpec::default();
        let mut synth_seen = false;
        let mut synth_seed = None;
        let (mut intercept, mut own, mut auxl, mut facl, mut custom) = (true, 2, 1, 1, false);

        for (key, v) in &entries {
            let v = v.as_str();
            if let Some(series) = key.strip_prefix("data.transforms.") {
                cfg.transforms.push((series.to_string(), v.parse()?));
                continue;
            }
            if let Some(field) = key.strip_prefix("synthetic.") {
                synth_seen = true;
                match field {
                    "t" => synth.t = num(key, v)?,
                    "n" => synth.n = num(key, v)?,
                    "k" => synth.k = num(key, v)?,
                    "loading_scale" => synth.loading_scale = num(key, v)?,
                    "noise_scale" => synth.noise_scale = num(key, v)?,
                    "signal_to_noise" => {
                        synth = synth.clone().with_signal_to_noise(num(key, v)?);
                    }
                    "factor_ar" => synth.factor_ar = num(key, v)?,
                    "a0" => synth.a0 = num(key, v)?,
                    "a1" | "ar" => synth.a1 = num(key, v)?,
                    "b" => synth.b = num(key, v)?,
                    "c0" => synth.c0 = num(key, v)?,
                    "c1" => synth.c1 = num(key, v)?,
                    "d" => synth.d = num(key, v)?,
                    "sigma" => synth.sigma = num(key, v)?,
                    "errors" => synth.errors = v.parse::<ErrorDist>()?,
                    "seed" => synth_seed = Some(num(key, v)?),
                    _ => return Err(Error::Config(format!("unknown key {key}"))),
                }
                continue;
            }
            match key.as_str() {
                "data.panel_path" => panel_path = Some(base.join(v)),
                "data.target" => cfg.target = v.to_string(),
                "data.aux" => cfg.aux = list(v),
                "data.factor_exclude" => cfg.factor_exclude = Some(list(v)),
                "model.pool" => match v {
                    "standard" => custom = false,
                    "custom" => custom = true,
                    _ => return Err(Error::Config(format!("{key}: expected standard or custom"))),
                },
                "model.intercept" => intercept = boolean(key, v)?,
                "model.own_lags" => own = num(key, v)?,
                "model.aux_lags" => auxl = num(key, v)?,
                "model.factor_lags" => facl = num(key, v)?,
                "model.factors" => cfg.factors = num(key, v)?,
                "model.min_model_size" => cfg.min_model_size = num(key, v)?,
                "model.min_window" => cfg.min_window = num(key, v)?,
                "forecast.quantiles" => {
                    cfg.quantiles = list(v).iter().map(|q| num(key, q)).collect::<Result<_>>()?
                }
                "forecast.nominal_p" => cfg.nominal_p = num(key, v)?,
                "forecast.methods" => {
                    cfg.methods = list(v).iter().map(|m| m.parse()).collect::<Result<_>>()?
                }
                "forecast.estimation_end" => {
                    cfg.estimation_end = match v {
                        "auto" => None,
                        _ => Some(num(key, v)?),
                    }
                }
                "forecast.coef_scheme" => cfg.coef_scheme = v.parse()?,
                "forecast.qric_scale" => cfg.qric_scale = v.parse()?,
                "evaluate.score_factor" => cfg.score_factor = v.parse()?,
                "run.seed" => cfg.seed = num(key, v)?,
                "run.output_dir" => cfg.output_dir = base.join(v),
                _ => return Err(Error::Config(format!("unknown key {key}"))),
            }
        }
        if custom {
            cfg.pool = PoolSpec::Counts {
                intercept,
                own_lags: own,
                aux_lags: auxl,
                factor_lags: facl,
            };
        }
        cfg.source = match (panel_path, synth_seen) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "give either data.panel_path or a [synthetic] section, not both".into(),
                ))
            }
            (Some(p), false) => DataSource::Csv(p),
            (None, _) => {
                synth.seed = synth_seed.unwrap_or(cfg.seed);
                DataSource::Synthetic(synth)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base)
    }

    /// Replaces the run seed, and the synthetic seed with it.
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.seed = seed;
        if let DataSource::Synthetic(s) = &mut self.source {
            s.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0))
            || self.quantiles.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(
                "quantiles must be strictly increasing inside (0, 1)".into(),
            ));
        }
        if !(self.nominal_p > 0.0 && self.nominal_p < 1.0) {
            return Err(Error::Config(format!(
                "nominal_p {} outside (0, 1)",
                self.nominal_p
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.target.is_empty() {
            return Err(Error::Config("no target series".into()));
        }
        self.pool()?;
        Ok(())
    }

    pub fn pool(&self) -> Result<RegressorPool> {
        match &self.pool {
            PoolSpec::Standard => Ok(RegressorPool::standard()),
            PoolSpec::Counts {
                intercept,
                own_lags,
                aux_lags,
                factor_lags,
            } => RegressorPool::from_counts(
                *intercept,
                *own_lags,
                self.aux.len(),
                *aux_lags,
                self.factors,
                *factor_lags,
            ),
        }
    }

    pub fn backtest_config(&self) -> Result<BacktestConfig> {
        Ok(BacktestConfig {
            pool: self.pool()?,
            min_model_size: self.min_model_size,
            quantiles: self.quantiles.clone(),
            nominal_p: self.nominal_p,
            methods: self.methods.clone(),
            coef_scheme: self.coef_scheme,
            qric_scale: self.qric_scale,
            estimation_end: self.estimation_end,
            n_factors: self.factors,
            min_window: self.min_window,
            keep_individual: false,
        })
    }

    /// Every setting, in a form [`RunConfig::parse`] reads back to an
    /// equal config. Paths are written as given.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[String]| v.join(", ");
        let _ = writeln!(s, "[data]");
        match &self.source {
            DataSource::Csv(p) => {
                let _ = writeln!(s, "panel_path = {}", p.display());
            }
            DataSource::Synthetic(_) => {}
        }
        let _ = writeln!(s, "target = {}", self.target);
        let _ = writeln!(s, "aux = {}", join(&self.aux));
        if let Some(ex) = &self.factor_exclude {
            let _ = writeln!(s, "factor_exclude = {}", join(ex));
        }
        let mut transforms = self.transforms.clone();
        transforms.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, t) in &transforms {
            let _ = writeln!(s, "transforms.{name} = {t}");
        }
        if let DataSource::Synthetic(sp) = &self.source {
            let _ = writeln!(s, "\n[synthetic]");
            for line in sp.sidecar().lines().filter(|l| !l.starts_with('#')) {
                let _ = writeln!(s, "{}", line.replacen('=', " = ", 1));
            }
        }
        let _ = writeln!(s, "\n[model]");
        match &self.pool {
            PoolSpec::Standard => {
                let _ = writeln!(s, "pool = standard");
            }
            PoolSpec::Counts {
                intercept,
                own_lags,
                aux_lags,
                factor_lags,
            } => {
                let _ = writeln!(s, "pool = custom");
                let _ = writeln!(s, "intercept = {intercept}");
                let _ = writeln!(s, "own_lags = {own_lags}");
                let _ = writeln!(s, "aux_lags = {aux_lags}");
                let _ = writeln!(s, "factor_lags = {factor_lags}");
            }
        }
        let _ = writeln!(s, "factors = {}", self.factors);
        let _ = writeln!(s, "min_model_size = {}", self.min_model_size);
        let _ = writeln!(s, "min_window = {}", self.min_window);
        let _ = writeln!(s, "\n[forecast]");
        let q: Vec<String> = self.quantiles.iter().map(|q| q.to_string()).collect();
        let _ = writeln!(s, "quantiles = {}", q.join(", "));
        let _ = writeln!(s, "nominal_p = {}", self.nominal_p);
        let m: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "methods = {}", m.join(", "));
        match self.estimation_end {
            Some(e) => {
                let _ = writeln!(s, "estimation_end = {e}");
            }
            None => {
                let _ = writeln!(s, "estimation_end = auto");
            }
        }
        let _ = writeln!(s, "coef_scheme = {}", self.coef_scheme);
        let _ = writeln!(s, "qric_scale = {}", self.qric_scale);
        let _ = writeln!(s, "\n[evaluate]");
        let _ = writeln!(s, "score_factor = {}", self.score_factor);
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }
}

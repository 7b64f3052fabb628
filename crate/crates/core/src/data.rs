//! Panel ingestion, column transforms, standardization and the
//! estimation/evaluation split.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Smallest panel that still supports factor extraction.
pub const MIN_PERIODS: usize = 8;
pub const MIN_SERIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PeriodKey {
    Quarter { year: i32, quarter: u8 },
    Date(NaiveDate),
}

/// A period label such as `1991Q2` or `2020-03-31`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Period {
    label: String,
    key: PeriodKey,
}

impl Period {
    pub fn parse(label: &str) -> Option<Period> {
        let label = label.trim();
        let key = if let Some((y, q)) = label.split_once(['Q', 'q']) {
            let year: i32 = y.trim().parse().ok()?;
            let quarter: u8 = q.trim().parse().ok()?;
            if !(1..=4).contains(&quarter) {
                return None;
            }
            PeriodKey::Quarter { year, quarter }
        } else {
            PeriodKey::Date(NaiveDate::parse_from_str(label, "%Y-%m-%d").ok()?)
        };
        Some(Period {
            label: label.to_string(),
            key,
        })
    }

    /// Quarterly label `year`Q`quarter`, `quarter` in 1..=4.
    pub fn quarter(year: i32, quarter: u8) -> Period {
        assert!((1..=4).contains(&quarter), "quarter out of range");
        Period {
            label: format!("{year}Q{quarter}"),
            key: PeriodKey::Quarter { year, quarter },
        }
    }

    /// The quarter following a quarterly label; `None` for dates.
    pub fn next_quarter(&self) -> Option<Period> {
        match self.key {
            PeriodKey::Quarter { year, quarter: 4 } => Some(Period::quarter(year + 1, 1)),
            PeriodKey::Quarter { year, quarter } => Some(Period::quarter(year, quarter + 1)),
            PeriodKey::Date(_) => None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn comparable(&self, other: &Period) -> Option<Ordering> {
        match (&self.key, &other.key) {
            (PeriodKey::Quarter { .. }, PeriodKey::Quarter { .. })
            | (PeriodKey::Date(_), PeriodKey::Date(_)) => Some(self.key.cmp(&other.key)),
            _ => None,
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// T×N matrix of stationary predictors with its time index and series names.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    time_index: Vec<Period>,
    series_names: Vec<String>,
}

impl Panel {
    pub fn new(
        values: DMatrix<f64>,
        time_index: Vec<Period>,
        series_names: Vec<String>,
    ) -> Result<Panel> {
        if values.nrows() != time_index.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} period labels",
                values.nrows(),
                time_index.len()
            )));
        }
        if values.ncols() != series_names.len() {
            return Err(Error::Dimension(format!(
                "{} columns but {} series names",
                values.ncols(),
                series_names.len()
            )));
        }
        for (row, pair) in time_index.windows(2).enumerate() {
            if pair[0].comparable(&pair[1]) != Some(Ordering::Less) {
                return Err(Error::Ordering {
                    row: row + 2,
                    label: pair[1].label.clone(),
                });
            }
        }
        if let Some((i, j)) = first_non_finite(&values) {
            return Err(Error::Ingestion {
                row: i + 1,
                column: series_names[j].clone(),
                message: "missing or non-finite value".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for name in &series_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate series name {name:?}")));
            }
        }
        Ok(Panel {
            values,
            time_index,
            series_names,
        })
    }

    /// Panel with synthetic quarterly labels starting at 1991Q2.
    pub fn from_matrix(values: DMatrix<f64>, series_names: Vec<String>) -> Result<Panel> {
        let time_index = quarterly_index(Period::quarter(1991, 2), values.nrows());
        Panel::new(values, time_index, series_names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn time_index(&self) -> &[Period] {
        &self.time_index
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    /// Number of periods, T.
    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    /// Number of series, N.
    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.series_names.iter().position(|s| s == name)
    }

    pub fn series(&self, name: &str) -> Result<TargetSeries> {
        let j = self
            .column_index(name)
            .ok_or_else(|| Error::Config(format!("no series named {name:?} in panel")))?;
        Ok(TargetSeries {
            name: name.to_string(),
            values: self.values.column(j).iter().copied().collect(),
        })
    }

    /// The first `rows` periods.
    pub fn head(&self, rows: usize) -> Panel {
        let rows = rows.min(self.n_periods());
        Panel {
            values: self.values.rows(0, rows).into_owned(),
            time_index: self.time_index[..rows].to_vec(),
            series_names: self.series_names.clone(),
        }
    }

    /// Panel without the named columns.
    pub fn without(&self, names: &[&str]) -> Panel {
        let keep: Vec<usize> = (0..self.n_series())
            .filter(|&j| !names.contains(&self.series_names[j].as_str()))
            .collect();
        self.select_columns(&keep)
    }

    pub fn select_columns(&self, columns: &[usize]) -> Panel {
        Panel {
            values: self.values.select_columns(columns),
            time_index: self.time_index.clone(),
            series_names: columns
                .iter()
                .map(|&j| self.series_names[j].clone())
                .collect(),
        }
    }

    /// Checks the size floor required for factor extraction.
    pub fn ensure_factor_ready(&self) -> Result<()> {
        if self.n_periods() < MIN_PERIODS || self.n_series() < MIN_SERIES {
            return Err(Error::InsufficientData(format!(
                "panel is {}x{}, need at least {MIN_PERIODS} periods and {MIN_SERIES} series",
                self.n_periods(),
                self.n_series()
            )));
        }
        Ok(())
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

pub fn quarterly_index(start: Period, len: usize) -> Vec<Period> {
    let mut out = Vec::with_capacity(len);
    let mut p = start;
    for _ in 0..len {
        let next = p.next_quarter().expect("quarterly start label");
        out.push(p);
        p = next;
    }
    out
}

/// A target (or auxiliary targeted) variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries {
    pub name: String,
    pub values: Vec<f64>,
}

impl TargetSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> TargetSeries {
        TargetSeries {
            name: name.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which columns `load_panel` keeps.
#[derive(Debug, Clone, Default)]
pub struct PanelSchema {
    /// `None` keeps every numeric column.
    pub columns: Option<Vec<String>>,
}

/// Reads a CSV whose first column holds period labels and whose remaining
/// columns are numeric series. Rows with a missing cell are rejected.
pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<Panel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, schema)
}

pub fn read_panel<R: std::io::Read>(reader: R, schema: &PanelSchema) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Ingestion {
            row: 0,
            column: headers.get(0).unwrap_or("").to_string(),
            message: "need a period column and at least one series".into(),
        });
    }
    let all_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let selected: Vec<usize> = match &schema.columns {
        None => (0..all_names.len()).collect(),
        Some(cols) => cols
            .iter()
            .map(|c| {
                all_names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| Error::Ingestion {
                        row: 0,
                        column: c.clone(),
                        message: "column not present in header".into(),
                    })
            })
            .collect::<Result<_>>()?,
    };

    let mut labels = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingestion {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Ingestion {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let label = record.get(0).unwrap_or("");
        let period = Period::parse(label).ok_or_else(|| Error::Ingestion {
            row,
            column: headers.get(0).unwrap_or("").to_string(),
            message: format!("unparseable period label {label:?}"),
        })?;
        labels.push(period);
        for &j in &selected {
            let cell = record.get(j + 1).unwrap_or("");
            let parsed = if cell.is_empty() {
                None
            } else {
                cell.parse::<f64>().ok().filter(|v| v.is_finite())
            };
            match parsed {
                Some(v) => data.push(v),
                None => {
                    return Err(Error::Ingestion {
                        row,
                        column: all_names[j].clone(),
                        message: if cell.is_empty() {
                            "missing value".into()
                        } else {
                            format!("not a finite number: {cell:?}")
                        },
                    })
                }
            }
        }
    }
    let names: Vec<String> = selected.iter().map(|&j| all_names[j].clone()).collect();
    let values = DMatrix::from_row_slice(labels.len(), names.len(), &data);
    Panel::new(values, labels, names)
}

/// Writes a panel in the same CSV layout `load_panel` reads.
pub fn write_panel<W: std::io::Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["period".to_string()];
    header.extend(panel.series_names.iter().cloned());
    w.write_record(&header)?;
    for (i, period) in panel.time_index.iter().enumerate() {
        let mut rec = vec![period.label.clone()];
        rec.extend(panel.values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<panel>", e))?;
    Ok(())
}

/// Column transform applied at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    #[default]
    None,
    Diff,
    LogDiff,
}

impl std::str::FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Transform> {
        match s.trim() {
            "none" => Ok(Transform::None),
            "diff" => Ok(Transform::Diff),
            "logdiff" => Ok(Transform::LogDiff),
            other => Err(Error::Config(format!(
                "unknown transform {other:?} (expected diff, logdiff or none)"
            ))),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::Diff => "diff",
            Transform::LogDiff => "logdiff",
        })
    }
}

/// Applies per-series transforms. When any differencing is requested the
/// first period is dropped from every column so the panel stays balanced.
pub fn apply_transforms(panel: &Panel, transforms: &[(String, Transform)]) -> Result<Panel> {
    let mut per_column = vec![Transform::None; panel.n_series()];
    for (name, t) in transforms {
        let j = panel
            .column_index(name)
            .ok_or_else(|| Error::Config(format!("transform for unknown series {name:?}")))?;
        per_column[j] = *t;
    }
    if per_column.iter().all(|t| *t == Transform::None) {
        return Ok(panel.clone());
    }
    let t = panel.n_periods();
    let mut out = DMatrix::zeros(t - 1, panel.n_series());
    for (j, tr) in per_column.iter().enumerate() {
        for i in 1..t {
            let (prev, cur) = (panel.values[(i - 1, j)], panel.values[(i, j)]);
            out[(i - 1, j)] = match tr {
                Transform::None => cur,
                Transform::Diff => cur - prev,
                Transform::LogDiff => {
                    if prev <= 0.0 || cur <= 0.0 {
                        return Err(Error::Ingestion {
                            row: if prev <= 0.0 { i } else { i + 1 },
                            column: panel.series_names[j].clone(),
                            message: "log-difference of a non-positive value".into(),
                        });
                    }
                    cur.ln() - prev.ln()
                }
            };
        }
    }
    Panel::new(
        out,
        panel.time_index[1..].to_vec(),
        panel.series_names.clone(),
    )
}

/// Column means and sample standard deviations (divisor T−1).
pub fn column_moments(values: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let t = values.nrows() as f64;
    values
        .column_iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / t;
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            (mean, (ss / (t - 1.0)).sqrt())
        })
        .collect()
}

/// Centres every column and scales it to unit sample variance.
pub fn standardize(panel: &Panel) -> Result<Panel> {
    if panel.n_periods() < 2 {
        return Err(Error::InsufficientData(
            "standardization needs at least two periods".into(),
        ));
    }
    let moments = column_moments(&panel.values);
    let mut values = panel.values.clone();
    for (j, &(mean, sd)) in moments.iter().enumerate() {
        if !(sd > 1e-14 * (1.0 + mean.abs())) {
            return Err(Error::DegenerateColumn {
                series: panel.series_names[j].clone(),
            });
        }
        values.column_mut(j).apply(|v| *v = (*v - mean) / sd);
    }
    Ok(Panel {
        values,
        time_index: panel.time_index.clone(),
        series_names: panel.series_names.clone(),
    })
}

/// Estimation/evaluation split over the regression sample.
///
/// The regression sample has `t_total - lag_depth` (response, regressor)
/// pairs; the first `estimation_end` pairs form the estimation sample and
/// the remaining `evaluation_count` pairs are forecast one step ahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSplit {
    pub estimation_end: usize,
    pub evaluation_count: usize,
}

/// Splits at `floor(t_total / 2)`.
pub fn split_sample(t_total: usize, lag_depth: usize) -> Result<SampleSplit> {
    if t_total <= 2 * lag_depth + 4 {
        return Err(Error::InsufficientData(format!(
            "{t_total} periods cannot support lag depth {lag_depth} (need more than {})",
            2 * lag_depth + 4
        )));
    }
    split_sample_at(t_total, lag_depth, t_total / 2)
}

/// Split with an explicit estimation size.
pub fn split_sample_at(
    t_total: usize,
    lag_depth: usize,
    estimation_end: usize,
) -> Result<SampleSplit> {
    if estimation_end <= 1 || estimation_end >= t_total || t_total < estimation_end + lag_depth + 1
    {
        return Err(Error::InsufficientData(format!(
            "estimation end {estimation_end} leaves no evaluation periods \
             (T = {t_total}, lag depth {lag_depth})"
        )));
    }
    Ok(SampleSplit {
        estimation_end,
        evaluation_count: t_total - estimation_end - lag_depth,
    })
}

//! End-to-end runs: load or generate data, backtest, score, and write
//! artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{DataSource, RunConfig};
use crate::data::{apply_transforms, load_panel, write_panel, Panel, PanelSchema, TargetSeries};
use crate::error::{Error, Result};
use crate::evaluate::{
    build_report, write_plot_csv, write_report_csv, EvaluationReport, PlotMetric,
};
use crate::factors::FactorEstimate;
use crate::forecast::{run_backtest, write_records_csv, write_weights_csv, Backtest, BacktestData};
use crate::models::write_models_csv;
use crate::synth::{generate_synthetic, write_true_quantiles, SyntheticData, SyntheticSpec};

/// Optional extra outputs.
#[derive(Debug, Clone, Default)]
pub struct DumpOptions {
    pub factors_dir: Option<PathBuf>,
    pub models_path: Option<PathBuf>,
    pub weights_path: Option<PathBuf>,
}

/// Everything a run produced, besides the files on disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub backtest: Backtest,
    pub reports: Vec<EvaluationReport>,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Caps rayon's global pool at `QARMA_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("QARMA_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::Config(format!("QARMA_THREADS={v:?} is not a positive integer"))
        })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// Panel after transforms, plus the synthetic truth when generated.
pub fn load_data(cfg: &RunConfig) -> Result<(Panel, Option<(SyntheticSpec, SyntheticData)>)> {
    let (panel, synth) = match &cfg.source {
        DataSource::Csv(path) => (load_panel(path, &PanelSchema::default())?, None),
        DataSource::Synthetic(spec) => {
            let d = generate_synthetic(spec)?;
            (d.panel.clone(), Some((spec.clone(), d)))
        }
    };
    let panel = if cfg.transforms.is_empty() {
        panel
    } else {
        apply_transforms(&panel, &cfg.transforms)?
    };
    Ok((panel, synth))
}

/// Target, auxiliary series and the factor panel drawn from `panel`.
pub fn split_panel(
    cfg: &RunConfig,
    panel: &Panel,
) -> Result<(TargetSeries, Vec<TargetSeries>, Panel)> {
    let target = panel.series(&cfg.target)?;
    let aux = cfg
        .aux
        .iter()
        .map(|a| panel.series(a))
        .collect::<Result<Vec<_>>>()?;
    let excluded: Vec<&str> = match &cfg.factor_exclude {
        Some(ex) => ex.iter().map(String::as_str).collect(),
        None => std::iter::once(cfg.target.as_str())
            .chain(cfg.aux.iter().map(String::as_str))
            .collect(),
    };
    Ok((target, aux, panel.without(&excluded)))
}

pub fn run_pipeline(cfg: &RunConfig, dumps: &DumpOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let (panel, synth) = load_data(cfg).map_err(|e| e.context("core-data"))?;
    let (target, aux, factor_panel) =
        split_panel(cfg, &panel).map_err(|e| e.context("core-data"))?;
    let bt_cfg = cfg.backtest_config()?;
    let uses_factors = bt_cfg.pool.factors_needed() > 0;
    let data = BacktestData {
        target: &target,
        aux: &aux,
        panel: uses_factors.then_some(&factor_panel),
    };
    let backtest = run_backtest(&data, &bt_cfg).map_err(|e| e.context("forecasting"))?;
    let reports =
        build_report(&backtest.records, cfg.score_factor).map_err(|e| e.context("evaluation"))?;

    let labels: Vec<String> = panel
        .time_index()
        .iter()
        .map(|p| p.label().to_string())
        .collect();
    let label = |t: usize| labels[t].clone();
    let out = &cfg.output_dir;
    let mut files = Vec::new();
    let mut emit = |path: PathBuf, bytes: Vec<u8>| -> Result<()> {
        write_atomic(&path, &bytes)?;
        files.push(path);
        Ok(())
    };
    emit(
        out.join("forecasts.csv"),
        render(|b| write_records_csv(&backtest.records, &label, b)),
    )?;
    emit(
        out.join("report.csv"),
        render(|b| write_report_csv(&reports, b)),
    )?;
    for (name, metric) in [
        ("plot_coverage.csv", PlotMetric::Coverage),
        ("plot_interval_score.csv", PlotMetric::IntervalScore),
        ("plot_fpe.csv", PlotMetric::Fpe),
    ] {
        emit(
            out.join(name),
            render(|b| write_plot_csv(&reports, metric, b)),
        )?;
    }
    emit(out.join("config.txt"), cfg.to_text().into_bytes())?;
    if let Some((spec, d)) = &synth {
        emit(out.join("synthetic_truth.txt"), spec.sidecar().into_bytes())?;
        emit(
            out.join("true_quantiles.csv"),
            render(|b| write_true_quantiles(spec, d, &cfg.quantiles, b)),
        )?;
        emit(out.join("panel.csv"), render_panel(&d.panel)?)?;
    }
    if let Some(p) = &dumps.models_path {
        let pool = bt_cfg.pool.size();
        emit(
            p.clone(),
            render(|b| write_models_csv(&backtest.models, pool, b)),
        )?;
    }
    if let Some(p) = &dumps.weights_path {
        emit(
            p.clone(),
            render(|b| write_weights_csv(&backtest.weights, &backtest.models, b)),
        )?;
    }
    if let Some(dir) = &dumps.factors_dir {
        match &backtest.estimation_factors {
            Some(f) => {
                emit(
                    dir.join("factors.csv"),
                    render(|b| write_factors(f, &labels, b)),
                )?;
                emit(
                    dir.join("loadings.csv"),
                    render(|b| write_loadings(f, factor_panel.series_names(), b)),
                )?;
            }
            None => log::warn!("pool uses no factors; nothing to dump"),
        }
    }

    let summary = summarize(&backtest, &reports, &target.name);
    Ok(RunOutcome {
        backtest,
        reports,
        files,
        summary,
    })
}

fn render_panel(panel: &Panel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_panel(panel, &mut buf)?;
    Ok(buf)
}

fn write_factors<W: std::io::Write>(
    f: &FactorEstimate,
    labels: &[String],
    mut out: W,
) -> std::io::Result<()> {
    let cols: Vec<String> = (1..=f.k).map(|j| format!("f{j}")).collect();
    writeln!(out, "period,{}", cols.join(","))?;
    for (i, label) in labels.iter().take(f.factors.nrows()).enumerate() {
        let row: Vec<String> = f.factors.row(i).iter().map(|x| x.to_string()).collect();
        writeln!(out, "{label},{}", row.join(","))?;
    }
    Ok(())
}

fn write_loadings<W: std::io::Write>(
    f: &FactorEstimate,
    names: &[String],
    mut out: W,
) -> std::io::Result<()> {
    let cols: Vec<String> = (1..=f.k).map(|j| format!("f{j}")).collect();
    writeln!(out, "series,{}", cols.join(","))?;
    for (i, name) in names.iter().enumerate() {
        let row: Vec<String> = f.loadings.row(i).iter().map(|x| x.to_string()).collect();
        writeln!(out, "{name},{}", row.join(","))?;
    }
    Ok(())
}

/// Text table of coverage, interval score and FPE per (method, τ).
pub fn summarize(bt: &Backtest, reports: &[EvaluationReport], target: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "target {target}: estimation {} pairs, evaluation P = {}, {} candidate models",
        bt.split.estimation_end,
        bt.split.evaluation_count,
        bt.models.len()
    );
    if bt.crossings.swapped > 0 || bt.crossings.point_outside > 0 {
        let _ = writeln!(
            s,
            "quantile crossing: {} intervals swapped, {} point forecasts outside their interval",
            bt.crossings.swapped, bt.crossings.point_outside
        );
    }
    let _ = writeln!(
        s,
        "{:<10} {:>5} {:>9} {:<3} {:>10} {:>10}",
        "method", "tau", "coverage", "", "int.score", "fpe"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<10} {:>5.2} {:>9.4} {:<3} {:>10.4} {:>10.4}",
            r.method.as_str(),
            r.tau,
            r.coverage,
            r.star.as_str(),
            r.interval_score,
            r.fpe
        );
    }
    s
}

/// Scores a forecasts file and writes the report and plot data.
pub fn run_evaluate(
    forecasts: &Path,
    out: &Path,
    factor: crate::evaluate::ScoreFactor,
) -> Result<Vec<EvaluationReport>> {
    let f = fs::File::open(forecasts).map_err(|e| Error::io(forecasts, e))?;
    let records = crate::forecast::read_records_csv(f)?;
    let reports = build_report(&records, factor).map_err(|e| e.context("evaluation"))?;
    write_atomic(
        &out.join("report.csv"),
        &render(|b| write_report_csv(&reports, b)),
    )?;
    for (name, metric) in [
        ("plot_coverage.csv", PlotMetric::Coverage),
        ("plot_interval_score.csv", PlotMetric::IntervalScore),
        ("plot_fpe.csv", PlotMetric::Fpe),
    ] {
        write_atomic(
            &out.join(name),
            &render(|b| write_plot_csv(&reports, metric, b)),
        )?;
    }
    Ok(reports)
}

/// Writes a synthetic panel with its truth files into `out`.
pub fn run_synth(spec: &SyntheticSpec, quantiles: &[f64], out: &Path) -> Result<SyntheticData> {
    let d = generate_synthetic(spec)?;
    write_atomic(&out.join("panel.csv"), &render_panel(&d.panel)?)?;
    write_atomic(&out.join("synthetic_truth.txt"), spec.sidecar().as_bytes())?;
    write_atomic(
        &out.join("true_quantiles.csv"),
        &render(|b| write_true_quantiles(spec, &d, quantiles, b)),
    )?;
    Ok(d)
}

use std::path::Path;
use std::process::{Command, Output};

fn qarma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qarma"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn dump_models_matches_golden() {
    let out = qarma(&["dump-models"]);
    assert!(out.status.success());
    assert_eq!(out.stdout, include_bytes!("golden/table3_models.csv"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let out = qarma(&["forecast", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let bad = write(dir.path(), "bad.cfg", "[model]\nflavour = vanilla\n");
    let out = qarma(&["forecast", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = qarma(&["dump-models", "--pool-size", "6", "--min-size", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let forecasts = write(
        dir.path(),
        "f.csv",
        "method,tau,origin,point,lower,upper,realized,nominal_p\n",
    );
    let out = qarma(&[
        "evaluate",
        "--forecasts",
        &forecasts,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn forecast_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "[forecast]\nquantiles = 0.05, 0.5\nnominal_p = 0.2\nmethods = naive, equal, qric\n\n[run]\nseed = 2\n",
    );
    let out = qarma(&["forecast", "--config", &cfg]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("clipped"));
    let run = dir.path().join("out");
    for f in [
        "forecasts.csv",
        "report.csv",
        "plot_coverage.csv",
        "plot_fpe.csv",
        "config.txt",
        "panel.csv",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let again = dir.path().join("again");
    let out = qarma(&[
        "evaluate",
        "--forecasts",
        run.join("forecasts.csv").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(run.join("report.csv")).unwrap(),
        std::fs::read(again.join("report.csv")).unwrap()
    );
}

#[test]
fn synth_writes_truth_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = qarma(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--t",
        "80",
        "--n",
        "10",
        "--errors",
        "student-t(5)",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let panel = std::fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    assert_eq!(panel.lines().count(), 81);
    assert!(panel.lines().next().unwrap().contains("y1,y2,x1"));
    assert!(dir.path().join("true_quantiles.csv").exists());
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexdep::evaluate::synthetic::synthetic_panel;

const BIN: &str = env!("CARGO_BIN_EXE_flexdep");

fn wide_csv(header: &[String], dates: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = format!("date,{}\n", header.join(","));
    for (d, r) in dates.iter().zip(rows) {
        s.push_str(d);
        for v in r {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Writes a small synthetic data set and a fast config into `dir`.
fn fixture(dir: &Path) -> PathBuf {
    let p = synthetic_panel(2, 330, 1, 11).unwrap();
    std::fs::write(dir.join("returns.csv"), wide_csv(&p.assets, &p.dates, &p.returns)).unwrap();
    std::fs::write(
        dir.join("covariates.csv"),
        wide_csv(&p.covariate_names, &p.dates, &p.covariates),
    )
    .unwrap();
    let cfg = r#"seed = 5
[data]
returns = "returns.csv"
covariates = "covariates.csv"
[schedule]
insample = 300
oos = 30
refit_every = 30
[marginal]
n_starts = 2
max_iter = 150
[copula]
max_iter = 15
restarts = 1
[simulation]
draws = 2000
[allocation]
upsilon = [3.0, 10.0]
n_random = 2
[strategies]
enabled = ["FDDM", "NMV", "EW"]
[evaluation]
rolling_window = 52
n_boot = 99
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    let o = Command::new(BIN)
        .arg("--config")
        .arg(cfg)
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    o
}

fn ok(cfg: &Path, out: &Path, args: &[&str]) {
    let o = run(cfg, out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn staged_pipeline_matches_backtest_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let stage = dir.path().join("stage");
    let s = |name: &str| stage.join(name).to_string_lossy().into_owned();

    ok(&cfg, &stage, &["fit-marginals"]);
    ok(&cfg, &stage, &["pit", "--model", &s("model.toml")]);
    ok(
        &cfg,
        &stage,
        &["fit-copula", "--model", &s("model.toml"), "--pits", &s("pits.csv")],
    );
    ok(
        &cfg,
        &stage,
        &["forecast", "--model", &s("model.toml"), "--pits", &s("pits.csv")],
    );
    ok(
        &cfg,
        &stage,
        &["simulate", "--forecast", &s("forecast.json"), "--draws", "10"],
    );
    assert_eq!(read(stage.join("draws.csv")).lines().count(), 11);
    ok(&cfg, &stage, &["optimize", "--forecast", &s("forecast.json")]);
    assert_eq!(read(stage.join("weights.csv")).lines().count(), 3);
    ok(&cfg, &stage, &["gof", "--pits", &s("pits.csv")]);
    assert_eq!(read(stage.join("gof.csv")).lines().count(), 3);
    ok(&cfg, &stage, &["summary-stats"]);
    assert_eq!(read(stage.join("summary_stats.csv")).lines().count(), 3);

    let bt = dir.path().join("bt");
    ok(&cfg, &bt, &["backtest"]);
    assert_eq!(read(stage.join("model.toml")), read(bt.join("first_refit.toml")));

    let bt2 = dir.path().join("bt2");
    ok(&cfg, &bt2, &["backtest"]);
    for f in ["periods.csv", "summary.json", "first_refit.toml"] {
        assert_eq!(read(bt.join(f)), read(bt2.join(f)), "{f} differs between runs");
    }
    // Every strategy is reported per upsilon: 3 × 2 × 30 rows.
    assert_eq!(read(bt.join("periods.csv")).lines().count(), 1 + 3 * 2 * 30);

    ok(
        &cfg,
        &bt,
        &["evaluate", "--periods", &bt.join("periods.csv").to_string_lossy()],
    );
    let ev: serde_json::Value = serde_json::from_str(&read(bt.join("evaluation.json"))).unwrap();
    assert!(!ev.as_array().unwrap().is_empty());
}

#[test]
fn select_reports_twelve_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let out = dir.path().join("o");
    ok(&cfg, &out, &["fit-marginals"]);
    ok(
        &cfg,
        &out,
        &["pit", "--model", &out.join("model.toml").to_string_lossy()],
    );
    ok(
        &cfg,
        &out,
        &["select", "--pits", &out.join("pits.csv").to_string_lossy()],
    );
    assert_eq!(read(out.join("selection.csv")).lines().count(), 13);
}

#[test]
fn errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let out = dir.path().join("o");
    ok(&cfg, &out, &["fit-marginals"]);
    let model = out.join("model.toml");
    let text = read(model.clone()).replace("version = 1", "version = 7");
    std::fs::write(&model, text).unwrap();
    let o = run(&cfg, &out, &["pit", "--model", &model.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_slice(o.stderr.split(|b| *b == b'\n').rev().find(|l| !l.is_empty()).unwrap()).unwrap();
    assert_eq!(err["error"], "model_file");
    assert!(err["message"].as_str().unwrap().contains("version 7"));

    std::fs::write(dir.path().join("returns.csv"), "date,A\n2020-01-03,1\n2020-01-10,x\n").unwrap();
    let o = run(&cfg, &out, &["summary-stats"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

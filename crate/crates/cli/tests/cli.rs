use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use threshold_cli::config::Settings;
use threshold_cli::parse_args;

const CHEAP: [&str; 12] = [
    "--counties",
    "8",
    "--warmup",
    "150",
    "--iters",
    "150",
    "--leapfrog-steps",
    "32",
    "--density-grid",
    "101",
    "--density-draws",
    "10",
];

fn thresholdtest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thresholdtest"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn with_cheap<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut all = args.to_vec();
    all.extend(CHEAP);
    all
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn demo_prints_both_scenarios_without_writing() {
    let out = thresholdtest(&["demo"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("positivity 50.0%"));
    assert!(text.contains("positivity 75.0%"));
    assert!(text.contains("higher threshold, lower positivity"));
    assert!(!Path::new("output").join("demo.txt").exists());
}

#[test]
fn demo_writes_when_out_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let out = thresholdtest(&["demo", "--out", path(dir.path())]);
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("demo.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(
        thresholdtest(&["fit", "--no-such-key", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        thresholdtest(&["fit", "--chains", "zero"]).status.code(),
        Some(2)
    );
    assert_eq!(
        thresholdtest(&["fit", "--config", "/nonexistent/run.conf"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        thresholdtest(&["fit", "--counts", "/nonexistent/counts.csv"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let out = thresholdtest(&["fit", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no input data"));
}

#[test]
fn malformed_counts_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    fs::write(
        &counts,
        "county_id,race,population,tests,cases\na,white,100,10,20\n",
    )
    .unwrap();
    let out = thresholdtest(&[
        "fit",
        "--counts",
        path(&counts),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unconverged_fit_exits_with_four_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(
        thresholdtest(&with_cheap(&["simulate", "--out", path(&sim)]))
            .status
            .success()
    );
    let fit = dir.path().join("fit");
    let counts = sim.join("counts.csv");
    let out = thresholdtest(&[
        "fit",
        "--counts",
        path(&counts),
        "--out",
        path(&fit),
        "--warmup",
        "20",
        "--iters",
        "20",
        "--leapfrog-steps",
        "2",
        "--init",
        "random",
        "--density-grid",
        "11",
        "--density-draws",
        "5",
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(fit.join("draws.csv").exists());
    assert!(fit.join("diagnostics.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["status"].as_str().unwrap().contains("R-hat"));
}

#[test]
fn simulate_fit_report_and_ppc_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(
        thresholdtest(&with_cheap(&["simulate", "--out", path(&sim)]))
            .status
            .success()
    );
    for name in [
        "counts.csv",
        "scenario.txt",
        "tests.csv",
        "cases.csv",
        "census.csv",
    ] {
        assert!(sim.join(name).exists(), "{name}");
    }

    // Raw files processed with the original method give back the simulated counts.
    let fit = dir.path().join("fit");
    let (tests, cases, census) = (
        sim.join("tests.csv"),
        sim.join("cases.csv"),
        sim.join("census.csv"),
    );
    let draws = fit.join("draws.csv");
    let raw_args = [
        "--tests",
        path(&tests),
        "--cases",
        path(&cases),
        "--census",
        path(&census),
        "--min-population",
        "0",
        "--rhat-threshold",
        "100",
    ];
    let mut args = with_cheap(&["fit", "--out", path(&fit)]);
    args.extend(raw_args);
    let out = thresholdtest(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "draws.csv",
        "diagnostics.csv",
        "sampler.json",
        "report.json",
        "weighted_thresholds.csv",
        "ratios.csv",
        "county_thresholds.csv",
        "positivity.csv",
        "ppc.csv",
        "density_curves.csv",
        "manifest.json",
        "config.txt",
    ] {
        assert!(fit.join(name).exists(), "{name}");
    }
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ratio black"));

    // Rebuilding the report from saved draws reproduces the fit's tables.
    let rebuilt = dir.path().join("rebuilt");
    let mut args = with_cheap(&["report", "--out", path(&rebuilt), "--draws", path(&draws)]);
    args.extend(raw_args);
    let out = thresholdtest(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "weighted_thresholds.csv",
        "ratios.csv",
        "county_thresholds.csv",
        "ppc.csv",
        "density_curves.csv",
    ] {
        assert_eq!(
            fs::read(fit.join(name)).unwrap(),
            fs::read(rebuilt.join(name)).unwrap(),
            "{name}"
        );
    }

    let ppc_dir = dir.path().join("ppc");
    let mut args = with_cheap(&["ppc", "--out", path(&ppc_dir), "--draws", path(&draws)]);
    args.extend(raw_args);
    let out = thresholdtest(&args);
    assert!(out.status.success());
    assert_eq!(
        fs::read(fit.join("ppc.csv")).unwrap(),
        fs::read(ppc_dir.join("ppc.csv")).unwrap()
    );

    // The echoed configuration reruns the fit to identical draws.
    let rerun = dir.path().join("rerun");
    let out = thresholdtest(&[
        "fit",
        "--config",
        path(&fit.join("config.txt")),
        "--out",
        path(&rerun),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read(fit.join("draws.csv")).unwrap(),
        fs::read(rerun.join("draws.csv")).unwrap()
    );
}

#[test]
fn draws_from_another_model_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(
        thresholdtest(&with_cheap(&["simulate", "--out", path(&sim)]))
            .status
            .success()
    );
    let fit = dir.path().join("fit");
    let counts = sim.join("counts.csv");
    let args = with_cheap(&[
        "fit",
        "--counts",
        path(&counts),
        "--out",
        path(&fit),
        "--rhat-threshold",
        "100",
    ]);
    assert!(thresholdtest(&args).status.success());
    let out = thresholdtest(&[
        "report",
        "--counts",
        path(&counts),
        "--out",
        path(&fit),
        "--county-delta",
        "true",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flags_override_config_file_and_paths_follow_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        "seed = 5\nchains = 2\ncounts = data/counts.csv\nout = results\n",
    )
    .unwrap();
    let (command, settings) = parse_args([
        "thresholdtest",
        "fit",
        "--config",
        path(&conf),
        "--chains",
        "3",
    ])
    .unwrap();
    assert_eq!(command, "fit");
    let cfg = settings.resolve().unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.fit.sampler.chains, 3);
    assert_eq!(cfg.counts.unwrap(), dir.path().join("data/counts.csv"));
    assert_eq!(cfg.out, Path::new("results"));
    assert!(settings.is_explicit("chains"));
    assert!(!settings.is_explicit("warmup"));
    assert_eq!(Settings::default().get("warmup"), "1500");
}

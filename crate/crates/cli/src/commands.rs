//! The subcommands. Each writes its outputs plus `manifest.json` and
//! `config.txt` into the output directory and returns a typed summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use threshold_core::data::{ObservedCounts, Race};
use threshold_core::fit::{fit, Fit};
use threshold_core::ingest::{self, write_raw, FilterSummary, ProcessingMethod};
use threshold_core::model::{Model, Variant};
use threshold_core::report::{
    self, density_rows, risk_distribution_curves, risk_grid, write_draws, write_rows,
    DisparityReport, PpcTable, RaceSummary, Summary, ThresholdDraws,
};
use threshold_core::synth::{
    inframarginality_demo, paper_hypothetical, recovery_scenario, reverse_direction_demo,
    simulate_variant, to_raw_records, DemoReport, RecoveryDesign, TrueScenario,
};

use crate::config::{RunConfig, Settings};
use crate::error::CliError;

pub const COMMANDS: [&str; 7] = [
    "fit",
    "simulate",
    "recover",
    "ppc",
    "report",
    "demo",
    "robustness",
];

/// Runs `command` with fully resolved settings.
pub fn run(command: &str, settings: &Settings) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = settings.resolve()?;
    let mut outputs = Vec::new();
    let result = match command {
        "fit" => cmd_fit(&cfg, &mut outputs).map(|s| print_fit(&s)),
        "simulate" => cmd_simulate(&cfg, &mut outputs)
            .map(|s| println!("simulated {} cells into {}", s.cells, cfg.out.display())),
        "recover" => cmd_recover(&cfg, &mut outputs).map(|s| print_recovery(&s)),
        "ppc" => cmd_ppc(&cfg, &mut outputs).map(|t| {
            println!(
                "mean errors: tests per capita {:+.6}, positivity {:+.6} over {} cells",
                t.mean_test_rate_error,
                t.mean_positivity_error,
                t.rows.len()
            )
        }),
        "report" => cmd_report(&cfg, &mut outputs).map(|r| print_report(&r)),
        "demo" => {
            let write = settings.is_explicit("out");
            cmd_demo(write.then_some(cfg.out.as_path()), &mut outputs).map(|reports| {
                for r in reports {
                    println!("{}", r.to_text());
                }
            })
        }
        "robustness" => cmd_robustness(&cfg, &mut outputs).map(|rows| print_robustness(&rows)),
        other => Err(CliError::Config(format!(
            "unknown command `{other}` (expected one of {})",
            COMMANDS.join(", ")
        ))),
    };
    let demo_without_out = command == "demo" && !settings.is_explicit("out");
    if !demo_without_out && !matches!(result, Err(CliError::Config(_))) {
        write_manifest(
            &cfg.out,
            command,
            settings,
            start,
            &outputs,
            result.as_ref().err(),
        )?;
    }
    result
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a std::collections::BTreeMap<String, String>,
    rerun: String,
    outputs: &'a [String],
    status: String,
    wall_time_seconds: f64,
}

fn write_manifest(
    out: &Path,
    command: &str,
    settings: &Settings,
    start: Instant,
    outputs: &[String],
    error: Option<&CliError>,
) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), settings.to_text())?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: settings.as_map(),
        rerun: format!(
            "thresholdtest {command} --config {}",
            out.join("config.txt").display()
        ),
        outputs,
        status: error.map_or_else(|| "ok".to_string(), |e| e.to_string()),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(out.join("manifest.json"), json + "\n")?;
    Ok(())
}

fn require_file(key: &str, path: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let path = path
        .clone()
        .ok_or_else(|| CliError::Config(format!("key `{key}` must be set")))?;
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "{key} file {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Counts from `counts`, or from the raw files processed with `method`.
pub fn load_counts(
    cfg: &RunConfig,
    method: ProcessingMethod,
) -> Result<(ObservedCounts, Option<FilterSummary>), CliError> {
    if cfg.counts.is_some() {
        let path = require_file("counts", &cfg.counts)?;
        return Ok((ObservedCounts::read_csv(&path)?, None));
    }
    if cfg.tests.is_none() && cfg.cases.is_none() && cfg.census.is_none() {
        return Err(CliError::Config(
            "no input data: set `counts`, or `tests`, `cases` and `census`".into(),
        ));
    }
    let tests = require_file("tests", &cfg.tests)?;
    let cases = require_file("cases", &cfg.cases)?;
    let census = require_file("census", &cfg.census)?;
    let (counts, summary) = ingest::load(&tests, &cases, &census, method, cfg.min_population)?;
    log::info!(
        "kept {} of {} counties (min population {})",
        summary.counties_retained,
        summary.counties_in,
        summary.min_population
    );
    Ok((counts, Some(summary)))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))
}

fn push(outputs: &mut Vec<String>, names: &[&str]) {
    outputs.extend(names.iter().map(|s| s.to_string()));
}

#[derive(Serialize)]
struct DiagnosticsRow<'a> {
    parameter: &'a str,
    mean: f64,
    sd: f64,
    rhat: Option<f64>,
    ess: Option<f64>,
}

#[derive(Serialize)]
struct ChainInfo {
    chain: usize,
    step_size: f64,
    warmup_divergences: usize,
    divergences: usize,
    mean_accept_prob: f64,
    inverse_mass: Vec<f64>,
}

#[derive(Serialize)]
struct SamplerInfo {
    max_rhat: Option<f64>,
    min_ess: Option<f64>,
    divergences: usize,
    mode_log_density: Option<f64>,
    mode_gradient_norm: Option<f64>,
    chains: Vec<ChainInfo>,
}

/// Result of one fit with its written outputs.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub report: DisparityReport,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
    pub out: PathBuf,
}

fn write_diagnostics(dir: &Path, model: &Model, result: &Fit) -> Result<(), CliError> {
    let names = model.param_names();
    let draws = &result.draws;
    if let Some(diag) = &draws.diagnostics {
        let rows: Vec<DiagnosticsRow> = names
            .iter()
            .zip(&diag.params)
            .map(|(name, p)| DiagnosticsRow {
                parameter: name,
                mean: p.mean,
                sd: p.sd,
                rhat: p.rhat,
                ess: p.ess,
            })
            .collect();
        write_rows(&dir.join("diagnostics.csv"), &rows)?;
    }
    let info = SamplerInfo {
        max_rhat: draws.diagnostics.as_ref().and_then(|d| d.max_rhat()),
        min_ess: draws.diagnostics.as_ref().and_then(|d| d.min_ess()),
        divergences: draws.divergences(),
        mode_log_density: result.mode.as_ref().map(|m| m.log_density),
        mode_gradient_norm: result.mode.as_ref().map(|m| m.gradient_norm()),
        chains: draws
            .chains
            .iter()
            .enumerate()
            .map(|(k, c)| ChainInfo {
                chain: k,
                step_size: c.step_size,
                warmup_divergences: c.warmup_divergences,
                divergences: c.divergent.iter().filter(|&&d| d).count(),
                mean_accept_prob: c.accept_prob.iter().sum::<f64>()
                    / c.accept_prob.len().max(1) as f64,
                inverse_mass: c.inverse_mass.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&info).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(dir.join("sampler.json"), json + "\n")?;
    Ok(())
}

fn write_density(dir: &Path, cfg: &RunConfig, model: &Model, result: &Fit) -> Result<(), CliError> {
    let grid = risk_grid(cfg.density_grid)?;
    let curves = risk_distribution_curves(model, &result.draws, &grid, cfg.density_draws)?;
    write_rows(&dir.join("density_curves.csv"), &density_rows(&curves))?;
    Ok(())
}

/// Fits `data` and writes draws, diagnostics, report tables and density
/// curves into `dir`. The convergence gate is left to the caller.
pub fn fit_and_report(
    cfg: &RunConfig,
    data: ObservedCounts,
    dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<(Model, Fit, FitSummary), CliError> {
    ensure_dir(dir)?;
    let model = Model::new(data, cfg.hyper.clone())?;
    log::info!(
        "fitting {} parameters: {} chains x ({} warmup + {} draws)",
        model.layout().dim(),
        cfg.fit.sampler.chains,
        cfg.fit.sampler.warmup,
        cfg.fit.sampler.samples
    );
    let result = fit(&model, &cfg.fit)?;
    write_draws(&dir.join("draws.csv"), &model.param_names(), &result.draws)?;
    write_diagnostics(dir, &model, &result)?;
    let report = DisparityReport::build(&model, &result.draws)?;
    report.write_dir(dir)?;
    write_density(dir, cfg, &model, &result)?;
    let prefix = |name: &str| {
        dir.strip_prefix(&cfg.out)
            .ok()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| name.to_string(), |p| p.join(name).display().to_string())
    };
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
    ] {
        outputs.push(prefix(name));
    }
    let summary = FitSummary {
        report,
        max_rhat: result.draws.diagnostics.as_ref().and_then(|d| d.max_rhat()),
        divergences: result.draws.divergences(),
        out: dir.to_path_buf(),
    };
    Ok((model, result, summary))
}

fn gate(cfg: &RunConfig, max_rhat: Option<f64>, written: &Path) -> Result<(), CliError> {
    match max_rhat {
        Some(r) if r > cfg.rhat_threshold || r.is_nan() => Err(CliError::Convergence {
            max_rhat: r,
            threshold: cfg.rhat_threshold,
            written: written.display().to_string(),
        }),
        _ => Ok(()),
    }
}

pub fn cmd_fit(cfg: &RunConfig, outputs: &mut Vec<String>) -> Result<FitSummary, CliError> {
    let (data, _) = load_counts(cfg, cfg.method)?;
    let (_, _, summary) = fit_and_report(cfg, data, &cfg.out, outputs)?;
    gate(cfg, summary.max_rhat, &cfg.out)?;
    Ok(summary)
}

fn print_fit(s: &FitSummary) {
    print_report(&s.report);
    if let Some(r) = s.max_rhat {
        println!("max split R-hat {r:.4}, divergences {}", s.divergences);
    }
}

fn print_report(r: &DisparityReport) {
    for s in &r.weighted_thresholds {
        println!(
            "threshold {:<9} {:.4} ({:.4}, {:.4})",
            s.race.as_str(),
            s.mean,
            s.lower,
            s.upper
        );
    }
    for s in &r.ratios {
        println!(
            "ratio {:<9}:white {:.3} ({:.3}, {:.3})",
            s.race.as_str(),
            s.mean,
            s.lower,
            s.upper
        );
    }
}

/// The scenario named by `scenario`, or the generated recovery scenario.
pub fn load_scenario(cfg: &RunConfig) -> Result<TrueScenario, CliError> {
    match &cfg.scenario {
        Some(_) => {
            let path = require_file("scenario", &cfg.scenario)?;
            Ok(TrueScenario::read(&path)?)
        }
        None => {
            let design = RecoveryDesign {
                counties: cfg.counties,
                ..RecoveryDesign::default()
            };
            Ok(recovery_scenario(&design, cfg.seed)?.scenario)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimulateSummary {
    pub cells: usize,
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    outputs: &mut Vec<String>,
) -> Result<SimulateSummary, CliError> {
    let scenario = load_scenario(cfg)?;
    let counts = simulate_variant(&scenario, cfg.hyper.variant)?;
    ensure_dir(&cfg.out)?;
    scenario.write(&cfg.out.join("scenario.txt"))?;
    counts.write_csv(&cfg.out.join("counts.csv"))?;
    let raw = to_raw_records(&counts, cfg.seed)?;
    write_raw(
        &raw,
        &cfg.out.join("tests.csv"),
        &cfg.out.join("cases.csv"),
        &cfg.out.join("census.csv"),
    )?;
    push(
        outputs,
        &[
            "scenario.txt",
            "counts.csv",
            "tests.csv",
            "cases.csv",
            "census.csv",
        ],
    );
    Ok(SimulateSummary {
        cells: counts.cells().len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RecoveryThreshold {
    pub race: Race,
    pub truth: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub relative_error: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RecoveryCell {
    pub county_id: String,
    pub race: Race,
    pub truth: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoverySummary {
    pub thresholds: Vec<RecoveryThreshold>,
    pub ratios: Vec<RecoveryThreshold>,
    pub cells: Vec<RecoveryCell>,
    pub coverage: f64,
    pub mean_test_rate_error: f64,
    pub mean_positivity_error: f64,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
}

fn compare(race: Race, truth: f64, s: Summary) -> RecoveryThreshold {
    RecoveryThreshold {
        race,
        truth,
        mean: s.mean,
        lower: s.lower,
        upper: s.upper,
        relative_error: (s.mean - truth) / truth,
        covered: s.lower <= truth && truth <= s.upper,
    }
}

fn find(summaries: &[RaceSummary], race: Race) -> Option<Summary> {
    summaries
        .iter()
        .find(|s| s.race == race)
        .map(RaceSummary::summary)
}

pub fn cmd_recover(
    cfg: &RunConfig,
    outputs: &mut Vec<String>,
) -> Result<RecoverySummary, CliError> {
    let scenario = load_scenario(cfg)?;
    let data = simulate_variant(&scenario, cfg.hyper.variant)?;
    ensure_dir(&cfg.out)?;
    scenario.write(&cfg.out.join("scenario.txt"))?;
    data.write_csv(&cfg.out.join("counts.csv"))?;
    push(outputs, &["scenario.txt", "counts.csv"]);
    let weights = report::county_weights(&data);
    let truth_grid = scenario.threshold_grid();
    let (model, result, fit_summary) = fit_and_report(cfg, data.clone(), &cfg.out, outputs)?;

    let true_weighted: Vec<f64> = truth_grid
        .iter()
        .map(|per_county| report::weighted_mean(per_county, &weights))
        .collect::<Result<_, _>>()?;
    let races = data.races().to_vec();
    let thresholds = races
        .iter()
        .enumerate()
        .filter_map(|(r, &race)| {
            find(&fit_summary.report.weighted_thresholds, race)
                .map(|s| compare(race, true_weighted[r], s))
        })
        .collect::<Vec<_>>();
    let ratios = match races.iter().position(|&r| r == Race::White) {
        Some(white) => races
            .iter()
            .enumerate()
            .filter(|&(r, _)| r != white)
            .filter_map(|(r, &race)| {
                find(&fit_summary.report.ratios, race)
                    .map(|s| compare(race, true_weighted[r] / true_weighted[white], s))
            })
            .collect(),
        None => Vec::new(),
    };

    let county = ThresholdDraws::from_posterior(&model, &result.draws)?.county_summaries()?;
    let cells: Vec<RecoveryCell> = data
        .cells()
        .iter()
        .map(|c| {
            let s = county[c.race][c.county];
            let truth = truth_grid[c.race][c.county];
            RecoveryCell {
                county_id: data.counties()[c.county].clone(),
                race: races[c.race],
                truth,
                mean: s.mean,
                lower: s.lower,
                upper: s.upper,
                covered: s.lower <= truth && truth <= s.upper,
            }
        })
        .collect();
    let coverage = cells.iter().filter(|c| c.covered).count() as f64 / cells.len().max(1) as f64;
    let summary = RecoverySummary {
        thresholds,
        ratios,
        coverage,
        mean_test_rate_error: fit_summary.report.ppc.mean_test_rate_error,
        mean_positivity_error: fit_summary.report.ppc.mean_positivity_error,
        max_rhat: fit_summary.max_rhat,
        divergences: fit_summary.divergences,
        cells,
    };
    write_rows(
        &cfg.out.join("recovery_thresholds.csv"),
        &summary.thresholds,
    )?;
    write_rows(&cfg.out.join("recovery_ratios.csv"), &summary.ratios)?;
    write_rows(&cfg.out.join("recovery_cells.csv"), &summary.cells)?;
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(cfg.out.join("recovery.json"), json + "\n")?;
    push(
        outputs,
        &[
            "recovery_thresholds.csv",
            "recovery_ratios.csv",
            "recovery_cells.csv",
            "recovery.json",
        ],
    );
    gate(cfg, summary.max_rhat, &cfg.out)?;
    Ok(summary)
}

fn print_recovery(s: &RecoverySummary) {
    for t in &s.thresholds {
        println!(
            "threshold {:<9} truth {:.4} posterior {:.4} ({:.4}, {:.4}) relative error {:+.3}",
            t.race.as_str(),
            t.truth,
            t.mean,
            t.lower,
            t.upper,
            t.relative_error
        );
    }
    for t in &s.ratios {
        println!(
            "ratio {:<9} truth {:.3} posterior {:.3} ({:.3}, {:.3}) covered {}",
            t.race.as_str(),
            t.truth,
            t.mean,
            t.lower,
            t.upper,
            t.covered
        );
    }
    println!(
        "95% interval coverage of county thresholds: {:.3}",
        s.coverage
    );
    println!(
        "PPC mean errors: tests per capita {:+.6}, positivity {:+.6}",
        s.mean_test_rate_error, s.mean_positivity_error
    );
}

fn draws_path(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let path = cfg
        .draws
        .clone()
        .unwrap_or_else(|| cfg.out.join("draws.csv"));
    require_file("draws", &Some(path))
}

fn model_and_draws(cfg: &RunConfig) -> Result<(Model, hmc::PosteriorDraws), CliError> {
    let (data, _) = load_counts(cfg, cfg.method)?;
    let model = Model::new(data, cfg.hyper.clone())?;
    let (names, draws) = report::read_draws(&draws_path(cfg)?)?;
    if names != model.param_names() {
        return Err(CliError::Data(
            "draws file parameters do not match the model built from the data and configuration"
                .into(),
        ));
    }
    Ok((model, draws))
}

pub fn cmd_ppc(cfg: &RunConfig, outputs: &mut Vec<String>) -> Result<PpcTable, CliError> {
    let (model, draws) = model_and_draws(cfg)?;
    let table = report::ppc(&model, &draws)?;
    ensure_dir(&cfg.out)?;
    write_rows(&cfg.out.join("ppc.csv"), &table.rows)?;
    push(outputs, &["ppc.csv"]);
    Ok(table)
}

pub fn cmd_report(cfg: &RunConfig, outputs: &mut Vec<String>) -> Result<DisparityReport, CliError> {
    let (model, draws) = model_and_draws(cfg)?;
    let report = DisparityReport::build(&model, &draws)?;
    ensure_dir(&cfg.out)?;
    report.write_dir(&cfg.out)?;
    let grid = risk_grid(cfg.density_grid)?;
    let curves = risk_distribution_curves(&model, &draws, &grid, cfg.density_draws)?;
    write_rows(&cfg.out.join("density_curves.csv"), &density_rows(&curves))?;
    push(
        outputs,
        &[
            "report.json",
            "weighted_thresholds.csv",
            "ratios.csv",
            "county_thresholds.csv",
            "positivity.csv",
            "ppc.csv",
            "density_curves.csv",
        ],
    );
    Ok(report)
}

/// Both discrete demonstrations; written to `out` as text and JSON when given.
pub fn cmd_demo(
    out: Option<&Path>,
    outputs: &mut Vec<String>,
) -> Result<Vec<DemoReport>, CliError> {
    let reports = vec![
        inframarginality_demo(&paper_hypothetical())?,
        inframarginality_demo(&reverse_direction_demo())?,
    ];
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let text: Vec<String> = reports.iter().map(DemoReport::to_text).collect();
        fs::write(dir.join("demo.txt"), text.join("\n"))?;
        let json: Vec<serde_json::Value> = reports
            .iter()
            .map(|r| serde_json::from_str(&r.to_json()))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Other(e.to_string()))?;
        let json =
            serde_json::to_string_pretty(&json).map_err(|e| CliError::Other(e.to_string()))?;
        fs::write(dir.join("demo.json"), json + "\n")?;
        push(outputs, &["demo.txt", "demo.json"]);
    }
    Ok(reports)
}

/// One row of the robustness grid.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RobustnessRow {
    pub method: String,
    pub variant: String,
    pub race: Race,
    /// `threshold` or `ratio`.
    pub quantity: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub max_rhat: Option<f64>,
}

/// Fits every configured method and variant. Rows are rewritten to
/// `robustness.csv` after each fit, so a failure keeps earlier rows.
pub fn cmd_robustness(
    cfg: &RunConfig,
    outputs: &mut Vec<String>,
) -> Result<Vec<RobustnessRow>, CliError> {
    if cfg.counts.is_some() {
        return Err(CliError::Config(
            "robustness needs the raw `tests`, `cases` and `census` files, not processed `counts`"
                .into(),
        ));
    }
    ensure_dir(&cfg.out)?;
    let table = cfg.out.join("robustness.csv");
    outputs.push("robustness.csv".into());
    let mut rows: Vec<RobustnessRow> = Vec::new();
    write_rows(&table, &rows)?;
    let mut worst: Option<f64> = None;
    for &method in &cfg.robustness_methods {
        for &variant in &cfg.robustness_variants {
            let (data, _) = load_counts(cfg, method)?;
            let mut run_cfg = cfg.clone();
            run_cfg.hyper.variant = variant;
            run_cfg.method = method;
            let dir = cfg.out.join(format!("{}_{}", method, variant));
            log::info!("robustness grid: method {method}, variant {variant}");
            let (_, _, summary) = fit_and_report(&run_cfg, data, &dir, outputs)?;
            let spec_row = |quantity: &str, s: &RaceSummary| RobustnessRow {
                method: method.to_string(),
                variant: variant.to_string(),
                race: s.race,
                quantity: quantity.to_string(),
                mean: s.mean,
                lower: s.lower,
                upper: s.upper,
                max_rhat: summary.max_rhat,
            };
            rows.extend(
                summary
                    .report
                    .weighted_thresholds
                    .iter()
                    .map(|s| spec_row("threshold", s)),
            );
            rows.extend(summary.report.ratios.iter().map(|s| spec_row("ratio", s)));
            write_rows(&table, &rows)?;
            if let Some(r) = summary.max_rhat {
                worst = Some(worst.map_or(r, |w: f64| w.max(r)));
            }
        }
    }
    gate(cfg, worst, &cfg.out)?;
    Ok(rows)
}

fn print_robustness(rows: &[RobustnessRow]) {
    let mut specs: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.variant.clone());
        if !specs.contains(&key) {
            specs.push(key);
        }
    }
    for (method, variant) in specs {
        let cells: Vec<String> = rows
            .iter()
            .filter(|r| r.method == method && r.variant == variant)
            .map(|r| {
                let label = if r.quantity == "ratio" {
                    format!("{}:white", r.race.as_str())
                } else {
                    r.race.as_str().to_string()
                };
                format!("{label} {:.3} ({:.3}, {:.3})", r.mean, r.lower, r.upper)
            })
            .collect();
        println!("{method:<18} {variant:<8} {}", cells.join("  "));
    }
}

/// The processing method parsed from a method name, for callers outside the config.
pub fn parse_method(name: &str) -> Result<ProcessingMethod, CliError> {
    name.parse().map_err(CliError::Config)
}

/// The variant parsed from a name.
pub fn parse_variant(name: &str) -> Result<Variant, CliError> {
    name.parse().map_err(CliError::Config)
}

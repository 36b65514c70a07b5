//! Run configuration: a flat `key = value` text file with `#` comments, where
//! every key can be overridden on the command line as `--key value`.
//! Dashes and underscores in keys are interchangeable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hmc::SamplerConfig;
use threshold_core::fit::{FitSettings, InitStrategy};
use threshold_core::ingest::ProcessingMethod;
use threshold_core::model::{Hyperparams, NormalPrior, Variant};
use threshold_core::special::logit;

use crate::error::CliError;

pub struct KeySpec {
    pub name: &'static str,
    pub help: &'static str,
    default: fn() -> String,
}

macro_rules! key {
    ($name:literal, $default:expr, $help:literal) => {
        KeySpec {
            name: $name,
            help: $help,
            default: || ($default).to_string(),
        }
    };
}

/// Every recognized key, in the order they are echoed.
pub const KEYS: &[KeySpec] = &[
    key!("counts", "", "processed counts CSV (county_id,race,population,tests,cases); used instead of the raw files when set"),
    key!("tests", "", "raw tests file (by race and by ethnicity)"),
    key!("cases", "", "raw cases file (by race and by ethnicity)"),
    key!("census", "", "census populations file"),
    key!("method", "original", "processing of raw files: original, raw or subtract"),
    key!("min_population", 500, "keep counties whose Black and Hispanic populations both reach this"),
    key!("variant", "poisson", "distribution of test counts: poisson or binomial"),
    key!("phi_race_location", logit(0.01), "prior mean of race prevalence effects (logit scale)"),
    key!("phi_race_scale", 1.5, "prior sd of race prevalence effects"),
    key!("delta_race_location", 0.0, "prior mean of race separation effects (log scale)"),
    key!("delta_race_scale", 0.5, "prior sd of race separation effects"),
    key!("zeta_race_location", logit(0.05), "prior mean of race threshold effects (logit scale)"),
    key!("zeta_race_scale", 1.5, "prior sd of race threshold effects"),
    key!("sigma_phi_scale", 0.5, "half-normal scale of the county prevalence sd"),
    key!("sigma_zeta_scale", 0.5, "half-normal scale of the county threshold sd"),
    key!("sigma_delta_scale", 0.5, "half-normal scale of the county separation sd"),
    key!("county_delta", false, "add county effects on the separation"),
    key!("chains", 4, "number of chains"),
    key!("warmup", 1500, "warmup iterations per chain"),
    key!("iters", 1500, "sampling iterations per chain"),
    key!("leapfrog_steps", 512, "upper bound of the jittered number of leapfrog steps"),
    key!("target_acceptance", 0.8, "dual-averaging target acceptance probability"),
    key!("init", "mode", "chain starts: mode (around the posterior mode) or random"),
    key!("init_jitter", 0.5, "largest offset from the mode for mode-based starts"),
    key!("parallel", true, "run chains on separate threads"),
    key!("seed", 1, "seed for sampling and simulation"),
    key!("out", "output", "output directory"),
    key!("rhat_threshold", 1.05, "largest acceptable split R-hat"),
    key!("scenario", "", "scenario file for simulate/recover; the default recovery scenario when empty"),
    key!("counties", 50, "counties in the generated recovery scenario"),
    key!("draws", "", "draws CSV for report/ppc; <out>/draws.csv when empty"),
    key!("density_grid", 2001, "risk grid points for density curves"),
    key!("density_draws", 200, "draws used for density curves (evenly thinned)"),
    key!("robustness_methods", "original,raw,subtract", "processing methods in the robustness grid"),
    key!("robustness_variants", "poisson,binomial", "model variants in the robustness grid"),
];

/// Keys naming input files. Relative values in a config file are taken
/// relative to the directory holding that file.
pub const INPUT_PATHS: [&str; 6] = ["counts", "tests", "cases", "census", "scenario", "draws"];

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == key)
}

/// Resolved string values of every key, remembering which were set explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    explicit: Vec<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|k| (k.name.to_string(), (k.default)()))
                .collect(),
            explicit: Vec::new(),
        }
    }
}

impl Settings {
    /// Parses configuration text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut settings = Self::default();
        settings.apply_text(text)?;
        Ok(settings)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    i + 1
                ))
            })?;
            self.set(key, value.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut file = Self::default();
        file.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for key in &file.explicit {
            let value = file.get(key);
            if INPUT_PATHS.contains(&key.as_str())
                && !value.is_empty()
                && Path::new(value).is_relative()
            {
                self.set(key, &base.join(value).display().to_string())?;
            } else {
                self.set(key, value)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = normalize(key);
        if spec(&key).is_none() {
            return Err(CliError::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.clone(), value.to_string());
        if !self.explicit.contains(&key) {
            self.explicit.push(key);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.iter().any(|k| k == key)
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).parse().map_err(|e| {
            CliError::Config(format!(
                "key `{key}`: cannot parse `{}`: {e}",
                self.get(key)
            ))
        })
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Configuration text that reproduces these settings.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let mut value = self.get(k.name).to_string();
            if INPUT_PATHS.contains(&k.name) && !value.is_empty() {
                if let Ok(absolute) = std::fs::canonicalize(&value) {
                    value = absolute.display().to_string();
                }
            }
            let _ = writeln!(out, "# {}\n{} = {}", k.help, k.name, value);
        }
        out
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let list = |key: &str| -> Vec<String> {
            self.get(key)
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let methods = list("robustness_methods")
            .iter()
            .map(|m| m.parse::<ProcessingMethod>().map_err(CliError::Config))
            .collect::<Result<Vec<_>, _>>()?;
        let variants = list("robustness_variants")
            .iter()
            .map(|v| v.parse::<Variant>().map_err(CliError::Config))
            .collect::<Result<Vec<_>, _>>()?;
        let variant: Variant = self.get("variant").parse().map_err(CliError::Config)?;
        let hyper = Hyperparams {
            phi_race: NormalPrior::new(
                self.parse("phi_race_location")?,
                self.parse("phi_race_scale")?,
            ),
            delta_race: NormalPrior::new(
                self.parse("delta_race_location")?,
                self.parse("delta_race_scale")?,
            ),
            zeta_race: NormalPrior::new(
                self.parse("zeta_race_location")?,
                self.parse("zeta_race_scale")?,
            ),
            sigma_phi_scale: self.parse("sigma_phi_scale")?,
            sigma_zeta_scale: self.parse("sigma_zeta_scale")?,
            sigma_delta_scale: self.parse("sigma_delta_scale")?,
            county_delta: self.parse("county_delta")?,
            variant,
        };
        hyper
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let sampler = SamplerConfig {
            chains: self.parse("chains")?,
            warmup: self.parse("warmup")?,
            samples: self.parse("iters")?,
            max_leapfrog_steps: self.parse("leapfrog_steps")?,
            target_acceptance: self.parse("target_acceptance")?,
            seed: self.parse("seed")?,
            parallel: self.parse("parallel")?,
            ..SamplerConfig::default()
        };
        sampler
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let fit = FitSettings {
            sampler,
            init: self
                .get("init")
                .parse::<InitStrategy>()
                .map_err(CliError::Config)?,
            init_jitter: self.parse("init_jitter")?,
        };
        let rhat_threshold: f64 = self.parse("rhat_threshold")?;
        if !(rhat_threshold >= 1.0) {
            return Err(CliError::Config(format!(
                "rhat_threshold must be at least 1, got {rhat_threshold}"
            )));
        }
        Ok(RunConfig {
            counts: self.path("counts"),
            tests: self.path("tests"),
            cases: self.path("cases"),
            census: self.path("census"),
            method: self.get("method").parse().map_err(CliError::Config)?,
            min_population: self.parse("min_population")?,
            hyper,
            fit,
            seed: self.parse("seed")?,
            out: PathBuf::from(self.get("out")),
            rhat_threshold,
            scenario: self.path("scenario"),
            counties: self.parse("counties")?,
            draws: self.path("draws"),
            density_grid: self.parse("density_grid")?,
            density_draws: self.parse("density_draws")?,
            robustness_methods: methods,
            robustness_variants: variants,
        })
    }
}

/// Typed configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub counts: Option<PathBuf>,
    pub tests: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    pub census: Option<PathBuf>,
    pub method: ProcessingMethod,
    pub min_population: u64,
    pub hyper: Hyperparams,
    pub fit: FitSettings,
    pub seed: u64,
    pub out: PathBuf,
    pub rhat_threshold: f64,
    pub scenario: Option<PathBuf>,
    pub counties: usize,
    pub draws: Option<PathBuf>,
    pub density_grid: usize,
    pub density_draws: usize,
    pub robustness_methods: Vec<ProcessingMethod>,
    pub robustness_variants: Vec<Variant>,
}

//! End-to-end posterior sampling for a [`Model`].

use hmc::{
    find_mode, jittered_starts, run_chains, HmcError, Init, Mode, OptimizeConfig, PosteriorDraws,
    SamplerConfig,
};
use serde::{Deserialize, Serialize};

use crate::model::Model;

/// How chains are started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Climb to the posterior mode from the moment-matched point, then
    /// scatter chains around it.
    Mode,
    /// Uniform coordinates in `[-init_radius, init_radius]`.
    Random,
}

impl std::str::FromStr for InitStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mode" => Ok(Self::Mode),
            "random" => Ok(Self::Random),
            other => Err(format!(
                "unknown init strategy `{other}` (expected mode or random)"
            )),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mode => "mode",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub sampler: SamplerConfig,
    pub init: InitStrategy,
    /// Largest per-coordinate offset from the mode for mode-based starts.
    pub init_jitter: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig {
                warmup: 1500,
                samples: 1500,
                max_leapfrog_steps: 512,
                ..SamplerConfig::default()
            },
            init: InitStrategy::Mode,
            init_jitter: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub draws: PosteriorDraws,
    /// The mode used to place the chains, when mode-based starts were used.
    pub mode: Option<Mode>,
}

/// Samples the posterior of `model`.
pub fn fit(model: &Model, settings: &FitSettings) -> Result<Fit, HmcError> {
    match settings.init {
        InitStrategy::Random => Ok(Fit {
            draws: run_chains(model, &settings.sampler, &Init::Random)?,
            mode: None,
        }),
        InitStrategy::Mode => {
            let mode = find_mode(
                model,
                &model.moment_matched_point(),
                &OptimizeConfig::default(),
            )?;
            log::info!(
                "posterior mode: log density {:.3}, gradient norm {:.2e} after {} iterations",
                mode.log_density,
                mode.gradient_norm(),
                mode.iterations
            );
            let starts = jittered_starts(
                model,
                &mode.position,
                settings.sampler.chains,
                settings.init_jitter,
                settings.sampler.seed,
            )?;
            let draws = run_chains(model, &settings.sampler, &Init::PerChain(starts))?;
            Ok(Fit {
                draws,
                mode: Some(mode),
            })
        }
    }
}

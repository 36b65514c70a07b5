//! Fixed-trajectory Hamiltonian Monte Carlo.
//!
//! The sampler integrates Hamiltonian dynamics with a kick-drift-kick leapfrog
//! scheme, draws the number of leapfrog steps uniformly from `1..=L` on every
//! transition, and adapts a step size (dual averaging) and a diagonal inverse
//! mass matrix during warmup. Chains run on their own threads with their own
//! seeded generator, so results only depend on the configuration.
//!
//! ```no_run
//! use hmc::{run_chains, Init, SamplerConfig, TargetDensity};
//!
//! struct StdNormal;
//! impl TargetDensity for StdNormal {
//!     fn dim(&self) -> usize { 1 }
//!     fn log_density(&self, x: &[f64]) -> f64 { -0.5 * x[0] * x[0] }
//!     fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
//!         g[0] = -x[0];
//!         -0.5 * x[0] * x[0]
//!     }
//! }
//!
//! let draws = run_chains(&StdNormal, &SamplerConfig::default(), &Init::Random).unwrap();
//! println!("{:?}", draws.diagnostics);
//! ```

mod adapt;
pub mod diagnostics;
mod error;
mod integrator;
pub mod optimize;
mod sampler;
mod target;

pub use diagnostics::{effective_sample_size, split_rhat, Diagnostics, ParamDiagnostics};
pub use error::HmcError;
pub use integrator::leapfrog;
pub use optimize::{find_mode, jittered_starts, Mode, OptimizeConfig};
pub use sampler::{run_chains, ChainDraws, Init, PosteriorDraws, SamplerConfig};
pub use target::TargetDensity;

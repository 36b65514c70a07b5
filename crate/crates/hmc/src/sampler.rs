use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg32;

use crate::adapt::{DualAveraging, RunningVariance};
use crate::diagnostics::{diagnostics, Diagnostics};
use crate::integrator::{integrate, PhasePoint};
use crate::{HmcError, TargetDensity};

/// Energy error above which a transition counts as divergent.
const DIVERGENCE_ENERGY: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    /// Upper bound `L` of the jittered trajectory length; each transition
    /// uses a uniform draw from `1..=L` leapfrog steps.
    pub max_leapfrog_steps: usize,
    pub target_acceptance: f64,
    /// Chain `k` seeds its generator with `seed + k`.
    pub seed: u64,
    /// Random initial coordinates are uniform in `[-init_radius, init_radius]`.
    pub init_radius: f64,
    pub max_init_attempts: usize,
    /// Run chains on separate threads. Output does not depend on this.
    pub parallel: bool,
    /// Keep warmup positions in [`ChainDraws::warmup_draws`].
    pub keep_warmup: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            max_leapfrog_steps: 32,
            target_acceptance: 0.8,
            seed: 1,
            init_radius: 2.0,
            max_init_attempts: 100,
            parallel: true,
            keep_warmup: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), HmcError> {
        let fail = |msg: &str| Err(HmcError::Config(msg.to_string()));
        if self.chains == 0 {
            return fail("chains must be at least 1");
        }
        if self.samples == 0 {
            return fail("sampling iterations must be at least 1");
        }
        if self.max_leapfrog_steps == 0 {
            return fail("leapfrog steps must be at least 1");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return fail("target acceptance must lie in (0, 1)");
        }
        if !(self.init_radius > 0.0 && self.init_radius.is_finite()) {
            return fail("init radius must be positive");
        }
        Ok(())
    }
}

/// Where chains start.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Random,
    Point(Vec<f64>),
    PerChain(Vec<Vec<f64>>),
}

/// Sampling-phase output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// `iterations × dim`.
    pub draws: Vec<Vec<f64>>,
    pub log_density: Vec<f64>,
    pub divergent: Vec<bool>,
    pub accept_prob: Vec<f64>,
    pub step_size: f64,
    pub inverse_mass: Vec<f64>,
    pub warmup_divergences: usize,
    /// Warmup positions, empty unless [`SamplerConfig::keep_warmup`] is set.
    pub warmup_draws: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub dim: usize,
    pub chains: Vec<ChainDraws>,
    /// `None` when fewer than two chains were run.
    pub diagnostics: Option<Diagnostics>,
}

impl PosteriorDraws {
    /// Wraps chains and computes diagnostics when at least two chains exist.
    pub fn new(dim: usize, chains: Vec<ChainDraws>) -> Self {
        let mut out = Self {
            dim,
            chains,
            diagnostics: None,
        };
        if out.num_chains() >= 2 {
            out.diagnostics = diagnostics(&out).ok();
        }
        out
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    /// Iterations per chain (the shortest chain if they differ).
    pub fn num_iterations(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).min().unwrap_or(0)
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_draws() == 0
    }

    /// All draws in chain order.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(|d| d.as_slice()))
    }

    /// Values of coordinate `index`, one vector per chain.
    pub fn coordinate(&self, index: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(|d| d[index]).collect())
            .collect()
    }

    pub fn divergences(&self) -> usize {
        self.chains
            .iter()
            .map(|c| c.divergent.iter().filter(|&&d| d).count())
            .sum()
    }

    pub fn mean_accept_prob(&self) -> f64 {
        let n = self.total_draws();
        if n == 0 {
            return f64::NAN;
        }
        self.chains
            .iter()
            .flat_map(|c| c.accept_prob.iter())
            .sum::<f64>()
            / n as f64
    }
}

/// Runs `config.chains` independent chains and returns the sampling-phase draws.
///
/// Warmup: the first half uses an identity mass matrix while dual averaging
/// tunes the step size. The second half is split into two variance windows
/// (ending at 35% and 85% of it) whose regularized variances become the inverse mass;
/// dual averaging restarts after each. The remaining 15% only tunes the step
/// size. Warmups shorter than 20 iterations tune the step size only.
pub fn run_chains<T: TargetDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    init: &Init,
) -> Result<PosteriorDraws, HmcError> {
    config.validate()?;
    let dim = target.dim();
    let starts: Vec<Option<Vec<f64>>> = match init {
        Init::Random => vec![None; config.chains],
        Init::Point(p) => vec![Some(p.clone()); config.chains],
        Init::PerChain(ps) => {
            if ps.len() != config.chains {
                return Err(HmcError::Config(format!(
                    "{} initial points for {} chains",
                    ps.len(),
                    config.chains
                )));
            }
            ps.iter().cloned().map(Some).collect()
        }
    };
    for start in starts.iter().flatten() {
        if start.len() != dim {
            return Err(HmcError::Dimension {
                expected: dim,
                got: start.len(),
            });
        }
    }

    let results: Vec<Result<ChainDraws, HmcError>> = if config.parallel && config.chains > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = starts
                .iter()
                .enumerate()
                .map(|(k, start)| {
                    scope.spawn(move || run_chain(target, config, start.as_deref(), k))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain thread panicked"))
                .collect()
        })
    } else {
        starts
            .iter()
            .enumerate()
            .map(|(k, start)| run_chain(target, config, start.as_deref(), k))
            .collect()
    };
    let chains = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(PosteriorDraws::new(dim, chains))
}

struct WarmupSchedule {
    window_start: usize,
    window_ends: [usize; 2],
}

impl WarmupSchedule {
    fn new(warmup: usize) -> Option<Self> {
        if warmup < 20 {
            return None;
        }
        let half = warmup / 2;
        let rest = (warmup - half) as f64;
        let first = half + (0.35 * rest).round() as usize;
        let second = half + (0.85 * rest).round() as usize;
        Some(Self {
            window_start: half,
            window_ends: [first, second],
        })
    }

    fn collects(&self, iteration: usize) -> bool {
        iteration >= self.window_start && iteration < self.window_ends[1]
    }

    fn closes_window(&self, iteration: usize) -> bool {
        self.window_ends.contains(&(iteration + 1))
    }
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
}

fn run_chain<T: TargetDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    start: Option<&[f64]>,
    chain: usize,
) -> Result<ChainDraws, HmcError> {
    let dim = target.dim();
    let mut rng = Pcg32::seed_from_u64(config.seed.wrapping_add(chain as u64));
    let mut point = initial_point(target, config, start, chain, &mut rng)?;
    let mut inverse_mass = vec![1.0; dim];

    let mut step = find_reasonable_step(target, &point, 1.0, &inverse_mass, &mut rng);
    let mut averaging = DualAveraging::new(step, config.target_acceptance);
    let schedule = WarmupSchedule::new(config.warmup);
    let mut variance = RunningVariance::new(dim);
    let mut warmup_divergences = 0;
    let mut warmup_draws = Vec::new();

    for it in 0..config.warmup {
        let t = transition(
            target,
            &mut point,
            step,
            &inverse_mass,
            config.max_leapfrog_steps,
            &mut rng,
        );
        warmup_divergences += usize::from(t.divergent);
        if config.keep_warmup {
            warmup_draws.push(point.position.clone());
        }
        step = averaging.update(t.accept_prob);
        if let Some(schedule) = &schedule {
            if schedule.collects(it) {
                variance.push(&point.position);
            }
            if schedule.closes_window(it) && variance.count() > 1 {
                inverse_mass = variance.regularized_variance();
                variance = RunningVariance::new(dim);
                step = find_reasonable_step(target, &point, step, &inverse_mass, &mut rng);
                averaging = DualAveraging::new(step, config.target_acceptance);
            }
        }
    }
    if config.warmup > 0 {
        if warmup_divergences == config.warmup {
            return Err(HmcError::AdaptationFailed { chain });
        }
        step = averaging.final_step();
    }

    let mut out = ChainDraws {
        draws: Vec::with_capacity(config.samples),
        log_density: Vec::with_capacity(config.samples),
        divergent: Vec::with_capacity(config.samples),
        accept_prob: Vec::with_capacity(config.samples),
        step_size: step,
        inverse_mass: inverse_mass.clone(),
        warmup_divergences,
        warmup_draws,
    };
    for _ in 0..config.samples {
        let t = transition(
            target,
            &mut point,
            step,
            &inverse_mass,
            config.max_leapfrog_steps,
            &mut rng,
        );
        out.draws.push(point.position.clone());
        out.log_density.push(point.log_density);
        out.divergent.push(t.divergent);
        out.accept_prob.push(t.accept_prob);
    }
    Ok(out)
}

fn initial_point<T: TargetDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    start: Option<&[f64]>,
    chain: usize,
    rng: &mut Pcg32,
) -> Result<PhasePoint, HmcError> {
    let dim = target.dim();
    if let Some(start) = start {
        let point = PhasePoint::new(target, start.to_vec(), vec![0.0; dim]);
        return if point.is_finite() {
            Ok(point)
        } else {
            Err(HmcError::Initialization { chain, attempts: 1 })
        };
    }
    for _ in 0..config.max_init_attempts {
        let position: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-config.init_radius..=config.init_radius))
            .collect();
        let point = PhasePoint::new(target, position, vec![0.0; dim]);
        if point.is_finite() {
            return Ok(point);
        }
    }
    Err(HmcError::Initialization {
        chain,
        attempts: config.max_init_attempts,
    })
}

fn sample_momentum(inverse_mass: &[f64], rng: &mut Pcg32) -> Vec<f64> {
    inverse_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect()
}

fn transition<T: TargetDensity + ?Sized>(
    target: &T,
    point: &mut PhasePoint,
    step: f64,
    inverse_mass: &[f64],
    max_steps: usize,
    rng: &mut Pcg32,
) -> Transition {
    let mut proposal = point.clone();
    proposal.momentum = sample_momentum(inverse_mass, rng);
    let initial = proposal.hamiltonian(inverse_mass);
    let steps = rng.random_range(1..=max_steps);
    let integrated = integrate(target, &mut proposal, step, steps, inverse_mass);
    // Always consume the uniform so the stream does not depend on divergences.
    let u: f64 = rng.random();
    let energy_error = proposal.hamiltonian(inverse_mass) - initial;
    if integrated.is_err() || !energy_error.is_finite() || energy_error > DIVERGENCE_ENERGY {
        return Transition {
            accept_prob: 0.0,
            divergent: true,
        };
    }
    let accept_prob = (-energy_error).exp().min(1.0);
    if u < accept_prob {
        *point = proposal;
    }
    Transition {
        accept_prob,
        divergent: false,
    }
}

/// Doubles or halves `step` until a single leapfrog step crosses an
/// acceptance probability of 0.8.
fn find_reasonable_step<T: TargetDensity + ?Sized>(
    target: &T,
    point: &PhasePoint,
    step: f64,
    inverse_mass: &[f64],
    rng: &mut Pcg32,
) -> f64 {
    let threshold = 0.8f64.ln();
    let log_accept = |step: f64, rng: &mut Pcg32| {
        let mut trial = point.clone();
        trial.momentum = sample_momentum(inverse_mass, rng);
        let h0 = trial.hamiltonian(inverse_mass);
        match integrate(target, &mut trial, step, 1, inverse_mass) {
            Ok(()) => {
                let delta = h0 - trial.hamiltonian(inverse_mass);
                if delta.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    delta
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut step = step;
    let up = log_accept(step, rng) > threshold;
    for _ in 0..100 {
        let next = if up { step * 2.0 } else { step * 0.5 };
        let la = log_accept(next, rng);
        if up && !(la > threshold) {
            break;
        }
        step = next;
        if !up && la > threshold {
            break;
        }
        if !(1e-12..=1e7).contains(&step) {
            break;
        }
    }
    step
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gauss2 {
        rho: f64,
    }

    impl TargetDensity for Gauss2 {
        fn dim(&self) -> usize {
            2
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            let mut g = [0.0; 2];
            self.log_density_and_gradient(x, &mut g)
        }
        fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let c = 1.0 / (1.0 - self.rho * self.rho);
            g[0] = -c * (x[0] - self.rho * x[1]);
            g[1] = -c * (x[1] - self.rho * x[0]);
            -0.5 * c * (x[0] * x[0] - 2.0 * self.rho * x[0] * x[1] + x[1] * x[1])
        }
    }

    fn small_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains: 2,
            warmup: 200,
            samples: 200,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let a = run_chains(&Gauss2 { rho: 0.5 }, &small_config(9), &Init::Random).unwrap();
        let b = run_chains(&Gauss2 { rho: 0.5 }, &small_config(9), &Init::Random).unwrap();
        assert_eq!(a, b);
        let serial = SamplerConfig {
            parallel: false,
            ..small_config(9)
        };
        let c = run_chains(&Gauss2 { rho: 0.5 }, &serial, &Init::Random).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn different_seeds_differ() {
        let a = run_chains(&Gauss2 { rho: 0.5 }, &small_config(1), &Init::Random).unwrap();
        let b = run_chains(&Gauss2 { rho: 0.5 }, &small_config(2), &Init::Random).unwrap();
        assert_ne!(a.chains[0].draws, b.chains[0].draws);
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = SamplerConfig {
            target_acceptance: 1.0,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            run_chains(&Gauss2 { rho: 0.0 }, &bad, &Init::Random),
            Err(HmcError::Config(_))
        ));
        let bad = SamplerConfig {
            samples: 0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn nowhere_finite_target_fails_to_initialize() {
        struct Void;
        impl TargetDensity for Void {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
            fn log_density_and_gradient(&self, _: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                f64::NEG_INFINITY
            }
        }
        let err = run_chains(&Void, &small_config(3), &Init::Random).unwrap_err();
        assert_eq!(
            err,
            HmcError::Initialization {
                chain: 0,
                attempts: 100
            }
        );
    }

    #[test]
    fn always_divergent_warmup_fails_to_adapt() {
        // A huge outward gradient at the support edge pushes every trajectory out.
        struct Pinned;
        impl TargetDensity for Pinned {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, x: &[f64]) -> f64 {
                if x[0] <= 0.25 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 1e300;
                self.log_density(x)
            }
        }
        let err = run_chains(&Pinned, &small_config(3), &Init::Point(vec![0.25])).unwrap_err();
        assert!(matches!(err, HmcError::AdaptationFailed { .. }));
    }

    #[test]
    fn warmup_schedule_windows() {
        let s = WarmupSchedule::new(1000).unwrap();
        assert_eq!(s.window_start, 500);
        assert_eq!(s.window_ends, [675, 925]);
        assert!(!s.collects(499));
        assert!(s.collects(500));
        assert!(!s.collects(925));
        assert!(s.closes_window(674));
        assert!(WarmupSchedule::new(10).is_none());
    }

    #[test]
    fn explicit_init_dimension_checked() {
        let err = run_chains(
            &Gauss2 { rho: 0.0 },
            &small_config(1),
            &Init::Point(vec![0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, HmcError::Dimension { .. }));
    }
}

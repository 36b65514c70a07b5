//! Hierarchical threshold model over (race, county) cells.
//!
//! Cell parameters are built from additive race and county effects:
//!
//! ```text
//! phi_rd = logistic(phi_r + phi_d)      prevalence
//! delta_rd = exp(delta_r [+ delta_d])   separation
//! z_rd = logistic(zeta_r + zeta_d)      testing threshold
//! ```
//!
//! Observed tests follow `Pois(n f)` (or `Bin(n, f)`), and cases among the
//! tested follow `Bin(t, g)`, where `f` and `g` are the tail mass and tail mean
//! of the cell's discriminant risk distribution above `z`.
//!
//! # Unconstrained layout
//!
//! The sampler works on a flat vector laid out as
//! `[phi_r (R), delta_r (R), zeta_r (R), phi_d (D-1), zeta_d (D-1),
//! delta_d (D-1, optional), ln sigma_phi, ln sigma_zeta, ln sigma_delta (optional)]`.
//! County effects sum to zero: only the first `D - 1` are free and the last is
//! minus their sum.

use std::fmt;
use std::str::FromStr;

use hmc::{PosteriorDraws, TargetDensity};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ObservedCounts;
use crate::riskdist::{DiscriminantParams, RiskDistError, Threshold};
use crate::special::{
    ln_add_exp, ln_choose, ln_factorial, ln_logistic, ln_norm_cdf, ln_norm_pdf, logistic, logit,
};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter vector contains a non-finite value at index {0}")]
    NonFiniteParameter(usize),
    #[error("log posterior is not finite at this point")]
    NonFiniteLogPosterior,
    #[error("invalid hyperparameter {name}: {value}")]
    Hyperparameter { name: &'static str, value: f64 },
    #[error("binomial variant requires tests <= population, county {county} race {race} has {tests} > {population}")]
    TestsExceedPopulation {
        county: String,
        race: String,
        tests: u64,
        population: u64,
    },
    #[error("{what} effects must sum to zero across counties (sum {sum})")]
    NotCentered { what: &'static str, sum: f64 },
    #[error("data must contain at least one race and one county")]
    EmptyIndex,
    #[error("no posterior draws")]
    EmptyDraws,
    #[error(transparent)]
    RiskDist(#[from] RiskDistError),
}

/// Distribution of test counts given population and testing probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Poisson,
    Binomial,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Poisson => "poisson",
            Variant::Binomial => "binomial",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(Variant::Poisson),
            "binomial" => Ok(Variant::Binomial),
            other => Err(format!(
                "unknown model variant `{other}` (expected poisson or binomial)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub location: f64,
    pub scale: f64,
}

impl NormalPrior {
    pub fn new(location: f64, scale: f64) -> Self {
        Self { location, scale }
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        -0.5 * z * z - self.scale.ln() - LN_SQRT_2PI
    }

    fn d_ln_pdf(&self, x: f64) -> f64 {
        -(x - self.location) / (self.scale * self.scale)
    }
}

/// Priors and the likelihood variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Race prevalence effect, logit scale.
    pub phi_race: NormalPrior,
    /// Race separation effect, log scale.
    pub delta_race: NormalPrior,
    /// Race threshold effect, logit scale.
    pub zeta_race: NormalPrior,
    /// Half-normal scales of the county effect standard deviations.
    pub sigma_phi_scale: f64,
    pub sigma_zeta_scale: f64,
    pub sigma_delta_scale: f64,
    /// Adds county effects on the log separation.
    pub county_delta: bool,
    pub variant: Variant,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            phi_race: NormalPrior::new(logit(0.01), 1.5),
            delta_race: NormalPrior::new(0.0, 0.5),
            zeta_race: NormalPrior::new(logit(0.05), 1.5),
            sigma_phi_scale: 0.5,
            sigma_zeta_scale: 0.5,
            sigma_delta_scale: 0.5,
            county_delta: false,
            variant: Variant::Poisson,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("phi_race_location", self.phi_race.location, false),
            ("phi_race_scale", self.phi_race.scale, true),
            ("delta_race_location", self.delta_race.location, false),
            ("delta_race_scale", self.delta_race.scale, true),
            ("zeta_race_location", self.zeta_race.location, false),
            ("zeta_race_scale", self.zeta_race.scale, true),
            ("sigma_phi_scale", self.sigma_phi_scale, true),
            ("sigma_zeta_scale", self.sigma_zeta_scale, true),
            ("sigma_delta_scale", self.sigma_delta_scale, true),
        ];
        for (name, value, positive) in checks {
            if !value.is_finite() || (positive && value <= 0.0) {
                return Err(ModelError::Hyperparameter { name, value });
            }
        }
        Ok(())
    }
}

fn half_normal_ln_pdf(sigma: f64, scale: f64) -> f64 {
    std::f64::consts::LN_2 - scale.ln() - LN_SQRT_2PI - 0.5 * (sigma / scale).powi(2)
}

/// Positions of each parameter block in the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    races: usize,
    counties: usize,
    county_delta: bool,
}

impl ParamLayout {
    pub fn new(races: usize, counties: usize, county_delta: bool) -> Self {
        Self {
            races,
            counties,
            county_delta,
        }
    }

    pub fn races(&self) -> usize {
        self.races
    }

    pub fn counties(&self) -> usize {
        self.counties
    }

    pub fn county_delta(&self) -> bool {
        self.county_delta
    }

    fn free_counties(&self) -> usize {
        self.counties.saturating_sub(1)
    }

    pub fn phi_race(&self) -> std::ops::Range<usize> {
        0..self.races
    }

    pub fn delta_race(&self) -> std::ops::Range<usize> {
        self.races..2 * self.races
    }

    pub fn zeta_race(&self) -> std::ops::Range<usize> {
        2 * self.races..3 * self.races
    }

    pub fn phi_county(&self) -> std::ops::Range<usize> {
        let start = 3 * self.races;
        start..start + self.free_counties()
    }

    pub fn zeta_county(&self) -> std::ops::Range<usize> {
        let start = self.phi_county().end;
        start..start + self.free_counties()
    }

    /// Empty when county separation effects are disabled.
    pub fn delta_county(&self) -> std::ops::Range<usize> {
        let start = self.zeta_county().end;
        start
            ..start
                + if self.county_delta {
                    self.free_counties()
                } else {
                    0
                }
    }

    pub fn log_sigma_phi(&self) -> usize {
        self.delta_county().end
    }

    pub fn log_sigma_zeta(&self) -> usize {
        self.log_sigma_phi() + 1
    }

    pub fn log_sigma_delta(&self) -> Option<usize> {
        self.county_delta.then(|| self.log_sigma_zeta() + 1)
    }

    pub fn dim(&self) -> usize {
        self.log_sigma_zeta() + 1 + usize::from(self.county_delta)
    }

    /// Human-readable coordinate names, given race and county labels.
    pub fn names<R: fmt::Display, C: fmt::Display>(
        &self,
        races: &[R],
        counties: &[C],
    ) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for block in ["phi_race", "delta_race", "zeta_race"] {
            names.extend(races.iter().map(|r| format!("{block}[{r}]")));
        }
        let free = &counties[..self.free_counties()];
        names.extend(free.iter().map(|c| format!("phi_county[{c}]")));
        names.extend(free.iter().map(|c| format!("zeta_county[{c}]")));
        if self.county_delta {
            names.extend(free.iter().map(|c| format!("delta_county[{c}]")));
        }
        names.push("log_sigma_phi".into());
        names.push("log_sigma_zeta".into());
        if self.county_delta {
            names.push("log_sigma_delta".into());
        }
        names
    }

    fn check(&self, theta: &[f64]) -> Result<(), ModelError> {
        if theta.len() != self.dim() {
            return Err(ModelError::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn centered(&self, free: &[f64]) -> Vec<f64> {
        if self.counties == 0 {
            return Vec::new();
        }
        let mut effects = free.to_vec();
        effects.push(-free.iter().sum::<f64>());
        effects
    }

    pub fn constrain(&self, theta: &[f64]) -> Result<LatentParams, ModelError> {
        self.check(theta)?;
        Ok(LatentParams {
            phi_race: theta[self.phi_race()].to_vec(),
            delta_race: theta[self.delta_race()].to_vec(),
            zeta_race: theta[self.zeta_race()].to_vec(),
            phi_county: self.centered(&theta[self.phi_county()]),
            zeta_county: self.centered(&theta[self.zeta_county()]),
            delta_county: self
                .county_delta
                .then(|| self.centered(&theta[self.delta_county()])),
            sigma_phi: theta[self.log_sigma_phi()].exp(),
            sigma_zeta: theta[self.log_sigma_zeta()].exp(),
            sigma_delta: self.log_sigma_delta().map(|i| theta[i].exp()),
        })
    }

    pub fn unconstrain(&self, latent: &LatentParams) -> Result<Vec<f64>, ModelError> {
        let mismatch = |got: usize, expected: usize| ModelError::Dimension { expected, got };
        for block in [&latent.phi_race, &latent.delta_race, &latent.zeta_race] {
            if block.len() != self.races {
                return Err(mismatch(block.len(), self.races));
            }
        }
        let mut county_blocks = vec![("phi", &latent.phi_county), ("zeta", &latent.zeta_county)];
        match (&latent.delta_county, self.county_delta) {
            (Some(d), true) => county_blocks.push(("delta", d)),
            (None, false) => {}
            (Some(d), false) => return Err(mismatch(d.len(), 0)),
            (None, true) => return Err(mismatch(0, self.counties)),
        }
        for (what, block) in &county_blocks {
            if block.len() != self.counties {
                return Err(mismatch(block.len(), self.counties));
            }
            let sum: f64 = block.iter().sum();
            let scale = block.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            if sum.abs() > 1e-9 * scale * self.counties as f64 {
                return Err(ModelError::NotCentered { what, sum });
            }
        }
        if latent.sigma_delta.is_some() != self.county_delta {
            return Err(mismatch(
                usize::from(latent.sigma_delta.is_some()),
                usize::from(self.county_delta),
            ));
        }
        let mut theta = Vec::with_capacity(self.dim());
        theta.extend(&latent.phi_race);
        theta.extend(&latent.delta_race);
        theta.extend(&latent.zeta_race);
        for (_, block) in &county_blocks {
            theta.extend(&block[..self.free_counties()]);
        }
        theta.push(latent.sigma_phi.ln());
        theta.push(latent.sigma_zeta.ln());
        if let Some(s) = latent.sigma_delta {
            theta.push(s.ln());
        }
        Ok(theta)
    }

    /// Log-Jacobian of the `exp` transforms taking log-scales to scales.
    pub fn log_jacobian(&self, theta: &[f64]) -> Result<f64, ModelError> {
        self.check(theta)?;
        Ok(theta[self.log_sigma_phi()]
            + theta[self.log_sigma_zeta()]
            + self.log_sigma_delta().map_or(0.0, |i| theta[i]))
    }
}

/// Race and county effects on their natural scales.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub phi_race: Vec<f64>,
    pub delta_race: Vec<f64>,
    pub zeta_race: Vec<f64>,
    pub phi_county: Vec<f64>,
    pub zeta_county: Vec<f64>,
    pub delta_county: Option<Vec<f64>>,
    pub sigma_phi: f64,
    pub sigma_zeta: f64,
    pub sigma_delta: Option<f64>,
}

impl LatentParams {
    /// Logit prevalence, log separation and logit threshold of a cell.
    pub fn cell_linear(&self, race: usize, county: usize) -> (f64, f64, f64) {
        let delta_county = self.delta_county.as_ref().map_or(0.0, |d| d[county]);
        (
            self.phi_race[race] + self.phi_county[county],
            self.delta_race[race] + delta_county,
            self.zeta_race[race] + self.zeta_county[county],
        )
    }

    pub fn prevalence(&self, race: usize, county: usize) -> f64 {
        logistic(self.cell_linear(race, county).0)
    }

    pub fn separation(&self, race: usize, county: usize) -> f64 {
        self.cell_linear(race, county).1.exp()
    }

    pub fn threshold(&self, race: usize, county: usize) -> f64 {
        logistic(self.cell_linear(race, county).2)
    }

    pub fn risk_distribution(
        &self,
        race: usize,
        county: usize,
    ) -> Result<DiscriminantParams, RiskDistError> {
        DiscriminantParams::new(self.prevalence(race, county), self.separation(race, county))
    }

    /// Testing probability and expected positivity of a cell.
    pub fn cell_rates(&self, race: usize, county: usize) -> CellPrediction {
        let (a, v, w) = self.cell_linear(race, county);
        let terms = CellTerms::new(a, v, w);
        CellPrediction {
            race,
            county,
            f: terms.ln_f.exp(),
            g: terms.g(),
        }
    }
}

/// Expected testing rate and positivity of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellPrediction {
    pub race: usize,
    pub county: usize,
    pub f: f64,
    pub g: f64,
}

/// Shared intermediate quantities of a cell at logit prevalence `a`, log
/// separation `v` and logit threshold `w`.
struct CellTerms {
    a: f64,
    delta: f64,
    s: f64,
    ln_pi: f64,
    ln_1m_pi: f64,
    /// `ln Φ(delta - s)`, tail mass of the infected component.
    ln_tail_sick: f64,
    /// `ln Φ(-s)`, tail mass of the uninfected component.
    ln_tail_healthy: f64,
    ln_f: f64,
}

impl CellTerms {
    fn new(a: f64, v: f64, w: f64) -> Self {
        let delta = v.exp();
        let s = (w - a) / delta + 0.5 * delta;
        let ln_pi = ln_logistic(a);
        let ln_1m_pi = ln_logistic(-a);
        let ln_tail_sick = ln_norm_cdf(delta - s);
        let ln_tail_healthy = ln_norm_cdf(-s);
        let ln_f = ln_add_exp(ln_pi + ln_tail_sick, ln_1m_pi + ln_tail_healthy);
        Self {
            a,
            delta,
            s,
            ln_pi,
            ln_1m_pi,
            ln_tail_sick,
            ln_tail_healthy,
            ln_f,
        }
    }

    fn g(&self) -> f64 {
        logistic(self.a + self.ln_tail_sick - self.ln_tail_healthy)
    }

    /// `ln(1 - f)`, from the lower tails directly.
    fn ln_1m_f(&self) -> f64 {
        ln_add_exp(
            self.ln_pi + ln_norm_cdf(self.s - self.delta),
            self.ln_1m_pi + ln_norm_cdf(self.s),
        )
    }
}

/// `k * l` with `0 * l = 0` for any `l`, including `-inf`.
fn xlogy(k: f64, l: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * l
    }
}

/// Cell log-likelihood and its partials with respect to `(a, v, w)`.
#[derive(Debug, Clone, Copy)]
struct CellEval {
    ll: f64,
    da: f64,
    dv: f64,
    dw: f64,
}

fn eval_cell(
    a: f64,
    v: f64,
    w: f64,
    n: u64,
    t: u64,
    c: u64,
    variant: Variant,
    want_grad: bool,
) -> CellEval {
    let terms = CellTerms::new(a, v, w);
    let f = terms.ln_f.exp();
    let (nf, tf, cf) = (n as f64, t as f64, c as f64);
    let neg_inf = CellEval {
        ll: f64::NEG_INFINITY,
        da: f64::NAN,
        dv: f64::NAN,
        dw: f64::NAN,
    };
    if t > 0 && f == 0.0 {
        return neg_inf;
    }
    // The ln f terms of the test and case likelihoods cancel, leaving the
    // case term in terms of the two component tail masses.
    let case_ll = ln_choose(t, c)
        + xlogy(cf, terms.ln_pi + terms.ln_tail_sick)
        + xlogy(tf - cf, terms.ln_1m_pi + terms.ln_tail_healthy);
    let (count_ll, ln_1m_f) = match variant {
        Variant::Poisson => (xlogy(tf, nf.ln()) - nf * f - ln_factorial(t), 0.0),
        Variant::Binomial => {
            let ln_1m_f = terms.ln_1m_f();
            (ln_choose(n, t) + xlogy(nf - tf, ln_1m_f), ln_1m_f)
        }
    };
    let ll = case_ll + count_ll;
    if !ll.is_finite() {
        return neg_inf;
    }
    if !want_grad {
        return CellEval {
            ll,
            da: 0.0,
            dv: 0.0,
            dw: 0.0,
        };
    }

    let delta = terms.delta;
    let inv_delta = 1.0 / delta;
    let s_v = -(w - a) * inv_delta + 0.5 * delta;
    let x_sick = delta - terms.s;
    let x_healthy = -terms.s;
    // d(x_sick) and d(x_healthy) with respect to (a, v, w).
    let sick = [inv_delta, delta - s_v, -inv_delta];
    let healthy = [inv_delta, -s_v, -inv_delta];
    let pi = logistic(a);
    let one_m_pi = logistic(-a);

    let ln_pdf_sick = ln_norm_pdf(x_sick);
    let ln_pdf_healthy = ln_norm_pdf(x_healthy);
    // φ(x) / Φ(x) from the log tails already in hand.
    let slope_sick = (ln_pdf_sick - terms.ln_tail_sick).exp();
    let slope_healthy = (ln_pdf_healthy - terms.ln_tail_healthy).exp();
    let mut case_grad = [0.0; 3];
    for k in 0..3 {
        case_grad[k] = cf * slope_sick * sick[k] + (tf - cf) * slope_healthy * healthy[k];
    }
    case_grad[0] += cf * one_m_pi - (tf - cf) * pi;

    // Derivative of f scaled by `coefficient`, or of ln(1 - f) scaled by
    // `n - t`. The latter is built from the upper tails so that it stays
    // accurate when f is close to one.
    let (scale, ln_norm, tail_gap) = match variant {
        Variant::Poisson => (
            -nf,
            0.0,
            terms.ln_tail_sick.exp() - terms.ln_tail_healthy.exp(),
        ),
        Variant::Binomial if n == t => (0.0, 0.0, 0.0),
        Variant::Binomial => (
            nf - tf,
            ln_1m_f,
            ln_norm_cdf(terms.s - delta).exp() - ln_norm_cdf(terms.s).exp(),
        ),
    };
    let sign = if variant == Variant::Poisson {
        1.0
    } else {
        -1.0
    };
    let dens_sick = (terms.ln_pi + ln_pdf_sick - ln_norm).exp();
    let dens_healthy = (terms.ln_1m_pi + ln_pdf_healthy - ln_norm).exp();
    let mut d = [0.0; 3];
    for k in 0..3 {
        d[k] = sign * (dens_sick * sick[k] + dens_healthy * healthy[k]);
    }
    d[0] += pi * one_m_pi * tail_gap / ln_norm.exp();

    CellEval {
        ll,
        da: case_grad[0] + scale * d[0],
        dv: case_grad[1] + scale * d[1],
        dw: case_grad[2] + scale * d[2],
    }
}

/// Log-pmf of `t ~ Pois(n f)` (or `Bin(n, f)`) plus `c ~ Bin(t, g)`, written
/// directly in terms of the rates.
pub fn count_log_likelihood(f: f64, g: f64, n: u64, t: u64, c: u64, variant: Variant) -> f64 {
    let tests = match variant {
        Variant::Poisson => poisson_ln_pmf(t, n as f64 * f),
        Variant::Binomial => binomial_ln_pmf(t, n, f),
    };
    tests + binomial_ln_pmf(c, t, g)
}

pub fn poisson_ln_pmf(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    xlogy(k as f64, mean.ln()) - mean - ln_factorial(k)
}

pub fn binomial_ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_choose(n, k) + xlogy(k as f64, p.ln()) + xlogy((n - k) as f64, (-p).ln_1p())
}

/// Gradient of the log posterior with every county effect treated as its own
/// coordinate (before the sum-to-zero map), and scales on the log scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectGradient {
    pub phi_race: Vec<f64>,
    pub delta_race: Vec<f64>,
    pub zeta_race: Vec<f64>,
    pub phi_county: Vec<f64>,
    pub zeta_county: Vec<f64>,
    pub delta_county: Option<Vec<f64>>,
    pub log_sigma_phi: f64,
    pub log_sigma_zeta: f64,
    pub log_sigma_delta: Option<f64>,
}

/// Posterior target over the unconstrained vector.
#[derive(Debug, Clone)]
pub struct Model {
    data: ObservedCounts,
    hyper: Hyperparams,
    layout: ParamLayout,
}

impl Model {
    pub fn new(data: ObservedCounts, hyper: Hyperparams) -> Result<Self, ModelError> {
        hyper.validate()?;
        if data.num_races() == 0 || data.num_counties() == 0 {
            return Err(ModelError::EmptyIndex);
        }
        if hyper.variant == Variant::Binomial {
            if let Some(cell) = data.cells().iter().find(|c| c.tests > c.population) {
                return Err(ModelError::TestsExceedPopulation {
                    county: data.counties()[cell.county].clone(),
                    race: data.races()[cell.race].to_string(),
                    tests: cell.tests,
                    population: cell.population,
                });
            }
        }
        let layout = ParamLayout::new(data.num_races(), data.num_counties(), hyper.county_delta);
        Ok(Self {
            data,
            hyper,
            layout,
        })
    }

    pub fn data(&self) -> &ObservedCounts {
        &self.data
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layout.names(self.data.races(), self.data.counties())
    }

    fn checked_latent(&self, theta: &[f64]) -> Result<LatentParams, ModelError> {
        self.layout.check(theta)?;
        if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
            return Err(ModelError::NonFiniteParameter(i));
        }
        self.layout.constrain(theta)
    }

    /// Sum of cell log-likelihoods.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64, ModelError> {
        let latent = self.checked_latent(theta)?;
        Ok(self.likelihood_pass(&latent, None))
    }

    /// Log prior density of the effects and scales, including the Jacobian
    /// of the log-scale transforms.
    pub fn log_prior(&self, theta: &[f64]) -> Result<f64, ModelError> {
        let latent = self.checked_latent(theta)?;
        Ok(self.prior_pass(&latent, None) + self.layout.log_jacobian(theta)?)
    }

    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64, ModelError> {
        let latent = self.checked_latent(theta)?;
        let lp = self.likelihood_pass(&latent, None)
            + self.prior_pass(&latent, None)
            + self.layout.log_jacobian(theta)?;
        Ok(if lp.is_nan() { f64::NEG_INFINITY } else { lp })
    }

    pub fn effect_gradient(&self, theta: &[f64]) -> Result<EffectGradient, ModelError> {
        let latent = self.checked_latent(theta)?;
        let (lp, grad) = self.value_and_effect_gradient(&latent, theta)?;
        if lp.is_finite() {
            Ok(grad)
        } else {
            Err(ModelError::NonFiniteLogPosterior)
        }
    }

    pub fn grad_log_posterior(&self, theta: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut gradient = vec![0.0; self.layout.dim()];
        let lp = self.log_posterior_and_gradient(theta, &mut gradient)?;
        if lp.is_finite() && gradient.iter().all(|g| g.is_finite()) {
            Ok(gradient)
        } else {
            Err(ModelError::NonFiniteLogPosterior)
        }
    }

    /// Fills `gradient` and returns the log posterior, which may be `-inf`.
    pub fn log_posterior_and_gradient(
        &self,
        theta: &[f64],
        gradient: &mut [f64],
    ) -> Result<f64, ModelError> {
        let latent = self.checked_latent(theta)?;
        if gradient.len() != self.layout.dim() {
            return Err(ModelError::Dimension {
                expected: self.layout.dim(),
                got: gradient.len(),
            });
        }
        let (lp, effects) = self.value_and_effect_gradient(&latent, theta)?;
        self.pull_back(&effects, gradient);
        Ok(lp)
    }

    fn value_and_effect_gradient(
        &self,
        latent: &LatentParams,
        theta: &[f64],
    ) -> Result<(f64, EffectGradient), ModelError> {
        let r = self.layout.races();
        let d = self.layout.counties();
        let mut grad = EffectGradient {
            phi_race: vec![0.0; r],
            delta_race: vec![0.0; r],
            zeta_race: vec![0.0; r],
            phi_county: vec![0.0; d],
            zeta_county: vec![0.0; d],
            delta_county: self.hyper.county_delta.then(|| vec![0.0; d]),
            log_sigma_phi: 0.0,
            log_sigma_zeta: 0.0,
            log_sigma_delta: self.hyper.county_delta.then_some(0.0),
        };
        let ll = self.likelihood_pass(latent, Some(&mut grad));
        let prior = self.prior_pass(latent, Some(&mut grad));
        let lp = ll + prior + self.layout.log_jacobian(theta)?;
        Ok((if lp.is_nan() { f64::NEG_INFINITY } else { lp }, grad))
    }

    fn likelihood_pass(&self, latent: &LatentParams, mut grad: Option<&mut EffectGradient>) -> f64 {
        let mut total = 0.0;
        for cell in self.data.cells() {
            let (a, v, w) = latent.cell_linear(cell.race, cell.county);
            let eval = eval_cell(
                a,
                v,
                w,
                cell.population,
                cell.tests,
                cell.cases,
                self.hyper.variant,
                grad.is_some(),
            );
            total += eval.ll;
            if let Some(g) = grad.as_deref_mut() {
                g.phi_race[cell.race] += eval.da;
                g.phi_county[cell.county] += eval.da;
                g.delta_race[cell.race] += eval.dv;
                if let Some(dc) = g.delta_county.as_mut() {
                    dc[cell.county] += eval.dv;
                }
                g.zeta_race[cell.race] += eval.dw;
                g.zeta_county[cell.county] += eval.dw;
            }
        }
        total
    }

    fn prior_pass(&self, latent: &LatentParams, mut grad: Option<&mut EffectGradient>) -> f64 {
        let h = &self.hyper;
        let mut total = 0.0;
        let race_blocks = [
            (&latent.phi_race, h.phi_race),
            (&latent.delta_race, h.delta_race),
            (&latent.zeta_race, h.zeta_race),
        ];
        for (k, (values, prior)) in race_blocks.into_iter().enumerate() {
            for (i, &x) in values.iter().enumerate() {
                total += prior.ln_pdf(x);
                if let Some(g) = grad.as_deref_mut() {
                    let target = match k {
                        0 => &mut g.phi_race,
                        1 => &mut g.delta_race,
                        _ => &mut g.zeta_race,
                    };
                    target[i] += prior.d_ln_pdf(x);
                }
            }
        }

        let free = self.layout.free_counties() as f64;
        let county_block =
            |effects: &[f64], sigma: f64, scale: f64, out: Option<(&mut [f64], &mut f64)>| {
                let sum_sq: f64 = effects.iter().map(|x| x * x).sum();
                let var = sigma * sigma;
                let value = -free * (sigma.ln() + LN_SQRT_2PI) - 0.5 * sum_sq / var
                    + half_normal_ln_pdf(sigma, scale);
                if let Some((effect_grad, log_sigma_grad)) = out {
                    for (g, &x) in effect_grad.iter_mut().zip(effects) {
                        *g -= x / var;
                    }
                    *log_sigma_grad += -free + sum_sq / var - var / (scale * scale) + 1.0;
                }
                value
            };
        match grad {
            Some(g) => {
                total += county_block(
                    &latent.phi_county,
                    latent.sigma_phi,
                    h.sigma_phi_scale,
                    Some((&mut g.phi_county, &mut g.log_sigma_phi)),
                );
                total += county_block(
                    &latent.zeta_county,
                    latent.sigma_zeta,
                    h.sigma_zeta_scale,
                    Some((&mut g.zeta_county, &mut g.log_sigma_zeta)),
                );
                if let (Some(effects), Some(sigma), Some(eg), Some(sg)) = (
                    latent.delta_county.as_ref(),
                    latent.sigma_delta,
                    g.delta_county.as_mut(),
                    g.log_sigma_delta.as_mut(),
                ) {
                    total += county_block(effects, sigma, h.sigma_delta_scale, Some((eg, sg)));
                }
            }
            None => {
                total += county_block(
                    &latent.phi_county,
                    latent.sigma_phi,
                    h.sigma_phi_scale,
                    None,
                );
                total += county_block(
                    &latent.zeta_county,
                    latent.sigma_zeta,
                    h.sigma_zeta_scale,
                    None,
                );
                if let (Some(effects), Some(sigma)) =
                    (latent.delta_county.as_ref(), latent.sigma_delta)
                {
                    total += county_block(effects, sigma, h.sigma_delta_scale, None);
                }
            }
        }
        total
    }

    /// Maps an effect-space gradient onto the unconstrained coordinates.
    fn pull_back(&self, effects: &EffectGradient, out: &mut [f64]) {
        let layout = &self.layout;
        out[layout.phi_race()].copy_from_slice(&effects.phi_race);
        out[layout.delta_race()].copy_from_slice(&effects.delta_race);
        out[layout.zeta_race()].copy_from_slice(&effects.zeta_race);
        let centered = |g: &[f64], dst: &mut [f64]| {
            if let Some(&last) = g.last() {
                for (o, &gj) in dst.iter_mut().zip(g) {
                    *o = gj - last;
                }
            }
        };
        centered(&effects.phi_county, &mut out[layout.phi_county()]);
        centered(&effects.zeta_county, &mut out[layout.zeta_county()]);
        if let Some(dc) = &effects.delta_county {
            centered(dc, &mut out[layout.delta_county()]);
        }
        out[layout.log_sigma_phi()] = effects.log_sigma_phi;
        out[layout.log_sigma_zeta()] = effects.log_sigma_zeta;
        if let (Some(i), Some(g)) = (layout.log_sigma_delta(), effects.log_sigma_delta) {
            out[i] = g;
        }
    }

    /// Cell rates at one parameter vector, in cell order.
    pub fn cell_rates(&self, theta: &[f64]) -> Result<Vec<CellPrediction>, ModelError> {
        let latent = self.checked_latent(theta)?;
        Ok(self
            .data
            .cells()
            .iter()
            .map(|c| latent.cell_rates(c.race, c.county))
            .collect())
    }

    /// Posterior-mean `f` and `g` per cell, averaged over the given draws.
    pub fn predict_from<'a, I>(&self, draws: I) -> Result<Vec<CellPrediction>, ModelError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut sums: Vec<CellPrediction> = Vec::new();
        let mut count = 0usize;
        for theta in draws {
            let rates = self.cell_rates(theta)?;
            if sums.is_empty() {
                sums = rates;
            } else {
                for (s, r) in sums.iter_mut().zip(&rates) {
                    s.f += r.f;
                    s.g += r.g;
                }
            }
            count += 1;
        }
        if count == 0 {
            return Err(ModelError::EmptyDraws);
        }
        let k = count as f64;
        for s in &mut sums {
            s.f /= k;
            s.g /= k;
        }
        Ok(sums)
    }

    pub fn predict(&self, draws: &PosteriorDraws) -> Result<Vec<CellPrediction>, ModelError> {
        self.predict_from(draws.iter())
    }

    /// A starting point matched to the data: county effects at zero, scales
    /// at their prior medians, and for each race the prevalence and threshold
    /// that reproduce the pooled testing rate and positivity at unit
    /// separation.
    pub fn moment_matched_point(&self) -> Vec<f64> {
        let layout = &self.layout;
        let mut theta = vec![0.0; layout.dim()];
        let mut totals = vec![(0.0, 0.0, 0.0); layout.races()];
        for c in self.data.cells() {
            let t = &mut totals[c.race];
            t.0 += c.population as f64;
            t.1 += c.tests as f64;
            t.2 += c.cases as f64;
        }
        for (r, &(n, t, c)) in totals.iter().enumerate() {
            let f = ((t + 0.5) / (n + 1.0)).clamp(1e-9, 1.0 - 1e-9);
            let g = ((c + 0.5) / (t + 1.0)).clamp(1e-6, 1.0 - 1e-6);
            let (a, w) = match_rates(f, g, 0.0);
            theta[layout.phi_race().start + r] = a;
            theta[layout.zeta_race().start + r] = w;
        }
        const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;
        theta[layout.log_sigma_phi()] = (HALF_NORMAL_MEDIAN * self.hyper.sigma_phi_scale).ln();
        theta[layout.log_sigma_zeta()] = (HALF_NORMAL_MEDIAN * self.hyper.sigma_zeta_scale).ln();
        if let Some(i) = layout.log_sigma_delta() {
            theta[i] = (HALF_NORMAL_MEDIAN * self.hyper.sigma_delta_scale).ln();
        }
        theta
    }

    /// Threshold of every (race, county) pair at one parameter vector, indexed `[race][county]`.
    pub fn thresholds(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        let latent = self.checked_latent(theta)?;
        Ok((0..self.layout.races())
            .map(|r| {
                (0..self.layout.counties())
                    .map(|d| latent.threshold(r, d))
                    .collect()
            })
            .collect())
    }
}

impl TargetDensity for Model {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density(&self, position: &[f64]) -> f64 {
        self.log_posterior(position).unwrap_or(f64::NEG_INFINITY)
    }

    fn log_density_and_gradient(&self, position: &[f64], gradient: &mut [f64]) -> f64 {
        match self.log_posterior_and_gradient(position, gradient) {
            Ok(lp) if lp.is_finite() && gradient.iter().all(|g| g.is_finite()) => lp,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Finds logit prevalence `a` and logit threshold `w` with testing rate `f`
/// and positivity `g` at log separation `v`, by nested bisection. Targets
/// outside the reachable set end at the nearest bracket edge.
pub fn match_rates(f: f64, g: f64, v: f64) -> (f64, f64) {
    let ln_target = f.ln();
    let threshold_for = |a: f64| bisect(-40.0, 40.0, |w| CellTerms::new(a, v, w).ln_f > ln_target);
    let a = bisect(-20.0, 20.0, |a| {
        CellTerms::new(a, v, threshold_for(a)).g() < g
    });
    (a, threshold_for(a))
}

/// Bisection for the point in `[lo, hi]` where `below` switches from true to false.
fn bisect<F: Fn(f64) -> bool>(mut lo: f64, mut hi: f64, below: F) -> f64 {
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Riskdist-based cell rates, for checking the fused computation.
pub fn cell_rates_via_riskdist(phi: f64, delta: f64, z: f64) -> Result<(f64, f64), ModelError> {
    let params = DiscriminantParams::new(phi, delta)?;
    let threshold = Threshold::new(z)?;
    Ok((params.ccdf_above(threshold), params.mean_above(threshold)?))
}

//! Discriminant risk distributions on `[0, 1]`.
//!
//! A latent signal `s` is drawn from a two-component, unit-variance Gaussian
//! mixture: with probability `phi` from `N(delta, 1)` (has the disease) and
//! with probability `1 - phi` from `N(0, 1)`. A person's risk is the
//! posterior probability of disease given the signal,
//!
//! ```text
//! logit p(s) = logit(phi) + delta * s - delta^2 / 2,
//! ```
//!
//! which is strictly increasing in `s` for `delta > 0`. The distribution of
//! `p(s)` is the risk distribution; its mean is `phi` and `delta` controls how
//! spread out (informative) it is. Since `p` is monotone in `s`, a risk
//! threshold `z` maps to a signal cutoff `s_z` and
//!
//! ```text
//! P(p > z)        = phi Φ(delta - s_z) + (1 - phi) Φ(-s_z)
//! E[p | p > z]    = phi Φ(delta - s_z) / P(p > z).
//! ```
//!
//! `delta = 0` is the point mass at `phi`.

use std::sync::OnceLock;

use thiserror::Error;

use crate::special::{ln_add_exp, ln_norm_cdf, logistic, logit, norm_cdf, norm_pdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskDistError {
    #[error("prevalence must lie in (0, 1), got {0}")]
    Prevalence(f64),
    #[error("separation must be finite and non-negative, got {0}")]
    Separation(f64),
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("degenerate distribution has no signal cutoff")]
    NoSignalCutoff,
    #[error("conditional mean undefined above threshold")]
    EmptyTail,
    #[error("density undefined for degenerate distribution")]
    DegenerateDensity,
    #[error("risk must lie in (0, 1), got {0}")]
    Risk(f64),
}

/// Prevalence `phi` and signal separation `delta` of a discriminant distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminantParams {
    phi: f64,
    delta: f64,
}

/// A testing threshold on the risk scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(z: f64) -> Result<Self, RiskDistError> {
        if z > 0.0 && z < 1.0 {
            Ok(Self(z))
        } else {
            Err(RiskDistError::Threshold(z))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl DiscriminantParams {
    pub fn new(phi: f64, delta: f64) -> Result<Self, RiskDistError> {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(RiskDistError::Prevalence(phi));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(RiskDistError::Separation(delta));
        }
        Ok(Self { phi, delta })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_degenerate(&self) -> bool {
        self.delta == 0.0
    }

    /// Risk `p(s)` of a person with signal `s`.
    pub fn risk_at_signal(&self, s: f64) -> f64 {
        logistic(logit(self.phi) + self.delta * s - 0.5 * self.delta * self.delta)
    }

    /// Signal `s_z` at which the risk equals `z`.
    pub fn signal_cutoff(&self, z: Threshold) -> Result<f64, RiskDistError> {
        if self.is_degenerate() {
            return Err(RiskDistError::NoSignalCutoff);
        }
        let d = self.delta;
        Ok((logit(z.0) - logit(self.phi) + 0.5 * d * d) / d)
    }

    /// Probability mass above the threshold, `P(p > z)`.
    pub fn ccdf_above(&self, z: Threshold) -> f64 {
        match self.signal_cutoff(z) {
            Ok(s) => self.phi * norm_cdf(self.delta - s) + (1.0 - self.phi) * norm_cdf(-s),
            Err(_) => step(z.0 < self.phi),
        }
    }

    /// Probability mass at or below the threshold, computed directly rather
    /// than as `1 - ccdf_above`.
    pub fn cdf_below(&self, z: Threshold) -> f64 {
        match self.signal_cutoff(z) {
            Ok(s) => self.phi * norm_cdf(s - self.delta) + (1.0 - self.phi) * norm_cdf(s),
            Err(_) => step(z.0 >= self.phi),
        }
    }

    /// Conditional mean `E[p | p > z]`.
    pub fn mean_above(&self, z: Threshold) -> Result<f64, RiskDistError> {
        let s = match self.signal_cutoff(z) {
            Ok(s) => s,
            Err(_) if z.0 < self.phi => return Ok(self.phi),
            Err(_) => return Err(RiskDistError::EmptyTail),
        };
        let ln_sick = ln_norm_cdf(self.delta - s);
        let ln_healthy = ln_norm_cdf(-s);
        if ln_sick == f64::NEG_INFINITY && ln_healthy == f64::NEG_INFINITY {
            return Err(RiskDistError::EmptyTail);
        }
        // phi A / (phi A + (1 - phi) B) as a logistic of the log-odds.
        Ok(logistic(logit(self.phi) + ln_sick - ln_healthy))
    }

    /// `ln P(p > z)`, accurate when the tail mass underflows in linear space.
    pub fn ln_ccdf_above(&self, z: Threshold) -> f64 {
        match self.signal_cutoff(z) {
            Ok(s) => ln_add_exp(
                self.phi.ln() + ln_norm_cdf(self.delta - s),
                (-self.phi).ln_1p() + ln_norm_cdf(-s),
            ),
            Err(_) => step(z.0 < self.phi).ln(),
        }
    }

    /// Density of the risk distribution at `p`.
    pub fn density(&self, p: f64) -> Result<f64, RiskDistError> {
        if self.is_degenerate() {
            return Err(RiskDistError::DegenerateDensity);
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(RiskDistError::Risk(p));
        }
        let d = self.delta;
        let s = ((p / (1.0 - p)).ln() - logit(self.phi) + 0.5 * d * d) / d;
        Ok(self.signal_density(s) / (d * p * (1.0 - p)))
    }

    /// Mixture density of the latent signal.
    pub fn signal_density(&self, s: f64) -> f64 {
        self.phi * norm_pdf(s - self.delta) + (1.0 - self.phi) * norm_pdf(s)
    }
}

fn step(on: bool) -> f64 {
    if on {
        1.0
    } else {
        0.0
    }
}

const GL_ORDER: usize = 20;
const PANEL_WIDTH: f64 = 0.25;
const SIGNAL_MARGIN: f64 = 12.0;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on `P_n`.
fn gauss_legendre() -> &'static [(f64, f64); GL_ORDER] {
    static RULE: OnceLock<[(f64, f64); GL_ORDER]> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut rule = [(0.0, 0.0); GL_ORDER];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut derivative = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                derivative = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / derivative;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            rule[i] = (x, 2.0 / ((1.0 - x * x) * derivative * derivative));
        }
        rule
    })
}

fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let panels = ((hi - lo) / PANEL_WIDTH).ceil().max(1.0) as usize;
    let width = (hi - lo) / panels as f64;
    let rule = gauss_legendre();
    let mut total = 0.0;
    for k in 0..panels {
        let mid = lo + (k as f64 + 0.5) * width;
        let half = 0.5 * width;
        total += half
            * rule
                .iter()
                .map(|&(x, w)| w * f(mid + half * x))
                .sum::<f64>();
    }
    total
}

/// Independent numerical route to `(P(p > z), E[p | p > z])`.
///
/// Integrates the signal mixture density, and the risk `p(s)` times that
/// density, over `s` from the cutoff up to `delta + 12` with composite
/// 20-point Gauss-Legendre panels. The conditional mean is `NaN` if the tail
/// mass is zero.
pub fn quadrature_oracle(
    params: &DiscriminantParams,
    z: Threshold,
) -> Result<(f64, f64), RiskDistError> {
    let cutoff = params.signal_cutoff(z)?;
    let lo = cutoff.max(-SIGNAL_MARGIN);
    let hi = params.delta + SIGNAL_MARGIN;
    let mass = integrate(|s| params.signal_density(s), lo, hi);
    let first_moment = integrate(
        |s| params.risk_at_signal(s) * params.signal_density(s),
        lo,
        hi,
    );
    let mean = if mass > 0.0 {
        first_moment / mass
    } else {
        f64::NAN
    };
    Ok((mass, mean))
}

/// Trapezoid-free quadrature of `g(p) * density(p)` over `p` in `(lo, hi)`,
/// done in the signal domain where the integrand is smooth.
pub fn integrate_over_risk<G: Fn(f64) -> f64>(
    params: &DiscriminantParams,
    lo: f64,
    hi: f64,
    g: G,
) -> Result<f64, RiskDistError> {
    if params.is_degenerate() {
        return Err(RiskDistError::DegenerateDensity);
    }
    let d = params.delta;
    let to_signal = |p: f64| {
        if p <= 0.0 {
            -SIGNAL_MARGIN
        } else if p >= 1.0 {
            d + SIGNAL_MARGIN
        } else {
            (((p / (1.0 - p)).ln() - logit(params.phi) + 0.5 * d * d) / d)
                .clamp(-SIGNAL_MARGIN, d + SIGNAL_MARGIN)
        }
    };
    Ok(integrate(
        |s| g(params.risk_at_signal(s)) * params.signal_density(s),
        to_signal(lo),
        to_signal(hi),
    ))
}

//! Split-chain R-hat and effective sample size.
//!
//! Each chain is cut into two halves (dropping the middle draw when the length
//! is odd), so `m` chains give `2m` segments. R-hat compares between- and
//! within-segment variance. ESS sums segment-averaged autocorrelations using
//! Geyer's initial positive sequence: lags are summed in pairs until the first
//! negative paired sum, then made monotone.

use crate::{HmcError, PosteriorDraws};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiagnostics {
    pub mean: f64,
    pub sd: f64,
    /// `None` when the draws have zero variance.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

impl ParamDiagnostics {
    /// Monte Carlo standard error of the mean.
    pub fn mcse(&self) -> Option<f64> {
        self.ess.map(|ess| self.sd / ess.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub params: Vec<ParamDiagnostics>,
    pub divergences: usize,
}

impl Diagnostics {
    /// Largest defined R-hat, `None` if no parameter has one.
    pub fn max_rhat(&self) -> Option<f64> {
        self.params
            .iter()
            .filter_map(|p| p.rhat)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }

    pub fn min_ess(&self) -> Option<f64> {
        self.params
            .iter()
            .filter_map(|p| p.ess)
            .fold(None, |acc, e| Some(acc.map_or(e, |a: f64| a.min(e))))
    }
}

/// Per-parameter summaries for a multi-chain run.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<Diagnostics, HmcError> {
    let mut params = Vec::with_capacity(draws.dim);
    for j in 0..draws.dim {
        let chains = draws.coordinate(j);
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let segments = split(&refs)?;
        let all: Vec<f64> = refs.iter().flat_map(|c| c.iter().copied()).collect();
        let mean = mean(&all);
        let sd = variance(&all, mean).sqrt();
        let (rhat, ess) = match (rhat_of_segments(&segments), ess_of_segments(&segments)) {
            (Ok(r), Ok(e)) => (Some(r), Some(e)),
            (Err(HmcError::DegenerateVariance), _) | (_, Err(HmcError::DegenerateVariance)) => {
                (None, None)
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        params.push(ParamDiagnostics {
            mean,
            sd,
            rhat,
            ess,
        });
    }
    Ok(Diagnostics {
        params,
        divergences: draws.divergences(),
    })
}

/// Split-chain potential scale reduction for one scalar quantity.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64, HmcError> {
    rhat_of_segments(&split(chains)?)
}

/// Split-chain effective sample size for one scalar quantity.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64, HmcError> {
    ess_of_segments(&split(chains)?)
}

fn split<'a>(chains: &[&'a [f64]]) -> Result<Vec<&'a [f64]>, HmcError> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    let segments = 2 * chains.len();
    if segments < 4 || half < 2 {
        return Err(HmcError::TooFewSegments {
            segments: if half == 0 { 0 } else { segments },
            length: half,
        });
    }
    let mut out = Vec::with_capacity(segments);
    for chain in chains {
        let chain = &chain[..n];
        if chain.iter().any(|v| !v.is_finite()) {
            return Err(HmcError::NonFiniteDraw);
        }
        out.push(&chain[..half]);
        out.push(&chain[n - half..]);
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn rhat_of_segments(segments: &[&[f64]]) -> Result<f64, HmcError> {
    let n = segments[0].len() as f64;
    let means: Vec<f64> = segments.iter().map(|s| mean(s)).collect();
    let within = segments
        .iter()
        .zip(&means)
        .map(|(s, &m)| variance(s, m))
        .sum::<f64>()
        / segments.len() as f64;
    if !(within > 0.0) {
        return Err(HmcError::DegenerateVariance);
    }
    let between_over_n = variance(&means, mean(&means));
    let var_plus = (n - 1.0) / n * within + between_over_n;
    Ok((var_plus / within).sqrt())
}

/// Biased (divide-by-n) autocovariance at `lag`.
fn autocovariance(xs: &[f64], mean: f64, lag: usize) -> f64 {
    let n = xs.len();
    xs[..n - lag]
        .iter()
        .zip(&xs[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>()
        / n as f64
}

fn ess_of_segments(segments: &[&[f64]]) -> Result<f64, HmcError> {
    let m = segments.len() as f64;
    let n = segments[0].len();
    let nf = n as f64;
    let means: Vec<f64> = segments.iter().map(|s| mean(s)).collect();
    let mean_acov = |lag: usize| {
        segments
            .iter()
            .zip(&means)
            .map(|(s, &mu)| autocovariance(s, mu, lag))
            .sum::<f64>()
            / m
    };
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    if !(mean_var > 0.0) {
        return Err(HmcError::DegenerateVariance);
    }
    let var_plus = mean_var * (nf - 1.0) / nf + variance(&means, mean(&means));
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n + 1];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut s = 1;
    while s + 4 < n && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 {
        rho_hat[max_s + 1] = even;
    }
    let mut k = 1;
    while max_s >= 3 && k <= max_s - 3 {
        let previous = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > previous {
            rho_hat[k + 1] = previous / 2.0;
            rho_hat[k + 2] = rho_hat[k + 1];
        }
        k += 2;
    }
    let total = m * nf;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    Ok((total / tau).min(total * total.log10()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use rand_pcg::Pcg32;

    fn iid_chains(chains: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Pcg32::seed_from_u64(seed);
        (0..chains)
            .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn refs(chains: &[Vec<f64>]) -> Vec<&[f64]> {
        chains.iter().map(|c| c.as_slice()).collect()
    }

    #[test]
    fn iid_reference() {
        let chains = iid_chains(4, 1000, 17);
        let r = split_rhat(&refs(&chains)).unwrap();
        assert!((0.99..=1.02).contains(&r), "rhat {r}");
        let ess = effective_sample_size(&refs(&chains)).unwrap();
        assert!((ess - 4000.0).abs() < 0.25 * 4000.0, "ess {ess}");
    }

    #[test]
    fn offset_chains_flagged() {
        let mut chains = iid_chains(2, 500, 5);
        chains[0].iter_mut().for_each(|v| *v += 10.0);
        chains[1].iter_mut().for_each(|v| *v -= 10.0);
        let r = split_rhat(&refs(&chains)).unwrap();
        assert!(r > 1.1, "rhat {r}");
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let chains = vec![vec![2.5; 100], vec![2.5; 100]];
        assert_eq!(
            split_rhat(&refs(&chains)),
            Err(HmcError::DegenerateVariance)
        );
        assert_eq!(
            effective_sample_size(&refs(&chains)),
            Err(HmcError::DegenerateVariance)
        );
    }

    #[test]
    fn one_chain_is_too_few_segments() {
        let chains = iid_chains(1, 100, 1);
        assert!(matches!(
            split_rhat(&refs(&chains)),
            Err(HmcError::TooFewSegments { segments: 2, .. })
        ));
        let short = vec![vec![1.0, 2.0, 3.0], vec![0.5, 0.1, 0.2]];
        assert!(matches!(
            split_rhat(&refs(&short)),
            Err(HmcError::TooFewSegments { .. })
        ));
    }

    #[test]
    fn odd_length_drops_middle_draw() {
        // The middle value is wild; dropping it leaves two identical halves per chain.
        let a = vec![1.0, 2.0, 3.0, 1000.0, 1.0, 2.0, 3.0];
        let b = vec![1.0, 2.0, 3.0, -1000.0, 1.0, 2.0, 3.0];
        let r = split_rhat(&[&a, &b]).unwrap();
        assert!((r - (2.0f64 / 3.0).sqrt()).abs() < 1e-12, "rhat {r}");
    }

    #[test]
    fn autocorrelated_chain_has_lower_ess() {
        let mut rng = Pcg32::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = 0.9 * x + e;
                        x
                    })
                    .collect()
            })
            .collect();
        let ess = effective_sample_size(&refs(&chains)).unwrap();
        // AR(1) with phi = 0.9: ESS / N = (1 - phi) / (1 + phi) ~ 0.053.
        let ratio = ess / 8000.0;
        assert!((0.035..0.075).contains(&ratio), "ess ratio {ratio}");
    }
}

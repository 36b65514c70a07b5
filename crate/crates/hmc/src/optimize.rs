//! Limited-memory BFGS ascent to a local maximum of a target density.
//!
//! Used to start chains near the bulk of the posterior. The line search
//! backtracks until the Armijo condition holds. Once the expected gain is
//! below the rounding error of the log density, the strong Wolfe curvature
//! condition on the directional derivative decides instead.
//! Curvature pairs with
//! non-positive `s · y` are skipped so the inverse-Hessian estimate stays
//! positive definite.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use crate::{HmcError, TargetDensity};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub max_iterations: usize,
    /// Stop once the gradient's infinity norm falls below this.
    pub gradient_tolerance: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// The search counts as stalled after `stall_iterations` consecutive steps
    /// that each raise the log density by less than `value_tolerance` times
    /// `max(1, |log density|)` without bringing the gradient norm below 90%
    /// of its smallest value so far.
    pub value_tolerance: f64,
    pub stall_iterations: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            memory: 100,
            value_tolerance: 1e-13,
            stall_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub position: Vec<f64>,
    pub log_density: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    /// Whether the gradient tolerance was reached. When `false` the search
    /// stalled or ran out of iterations, and `position` is the best point found.
    pub converged: bool,
}

impl Mode {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Climbs from `start` towards a local maximum of `target`.
pub fn find_mode<T: TargetDensity + ?Sized>(
    target: &T,
    start: &[f64],
    config: &OptimizeConfig,
) -> Result<Mode, HmcError> {
    let dim = target.dim();
    if start.len() != dim {
        return Err(HmcError::Dimension {
            expected: dim,
            got: start.len(),
        });
    }
    let mut x = start.to_vec();
    let mut grad = vec![0.0; dim];
    let mut value = target.log_density_and_gradient(&x, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(HmcError::Initialization {
            chain: 0,
            attempts: 1,
        });
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut trial_grad = vec![0.0; dim];
    let norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut stalled_for = 0;
    let mut best_norm = norm(&grad);

    for iteration in 0..config.max_iterations {
        if norm(&grad) < config.gradient_tolerance {
            return Ok(Mode {
                position: x,
                log_density: value,
                gradient: grad,
                iterations: iteration,
                converged: true,
            });
        }
        // Two-loop recursion on the negated objective, whose gradient is `-grad`.
        let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let alpha = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha * yi;
            }
            alphas.push(alpha);
        }
        let gamma = pairs
            .back()
            .map_or(1.0 / norm(&grad).max(1.0), |(s, y, _)| {
                dot(s, y) / dot(y, y)
            });
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), alpha) in pairs.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha - beta) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        let mut direction = q;
        let mut slope = dot(&direction, &grad);
        if !(slope > 0.0) {
            pairs.clear();
            direction = grad.clone();
            slope = dot(&direction, &grad);
        }

        let noise = 64.0 * f64::EPSILON * value.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x
                .iter()
                .zip(&direction)
                .map(|(xi, di)| xi + step * di)
                .collect();
            let trial_value = target.log_density_and_gradient(&trial, &mut trial_grad);
            let finite = trial_value.is_finite() && trial_grad.iter().all(|g| g.is_finite());
            let accept = if step * slope > noise {
                trial_value >= value + 1e-4 * step * slope
            } else {
                dot(&direction, &trial_grad).abs() <= 0.9 * slope
            };
            if finite && accept {
                accepted = Some((trial, trial_value));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, trial_value)) = accepted else {
            if !pairs.is_empty() {
                pairs.clear();
                continue;
            }
            return Ok(Mode {
                position: x,
                log_density: value,
                gradient: grad,
                iterations: iteration,
                converged: false,
            });
        };
        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Curvature pair for the negated objective: y = -(g_new - g_old).
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| b - a).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let trial_norm = norm(&trial_grad);
        let gained = trial_value - value >= config.value_tolerance * value.abs().max(1.0);
        if gained || trial_norm < 0.9 * best_norm {
            stalled_for = 0;
        } else {
            stalled_for += 1;
        }
        best_norm = best_norm.min(trial_norm);
        x = trial;
        value = trial_value;
        grad.copy_from_slice(&trial_grad);
        if stalled_for >= config.stall_iterations {
            return Ok(Mode {
                converged: norm(&grad) < config.gradient_tolerance,
                position: x,
                log_density: value,
                gradient: grad,
                iterations: iteration + 1,
            });
        }
    }
    Ok(Mode {
        converged: norm(&grad) < config.gradient_tolerance,
        position: x,
        log_density: value,
        gradient: grad,
        iterations: config.max_iterations,
    })
}

/// One starting point per chain, scattered around `center`.
///
/// Each chain draws a direction uniformly from `[-1, 1]^dim` and scales it by
/// `max_scale`, halving the scale until the log density has dropped by at
/// most `dim / 2` from its value at `center`. Points so close to a mode carry
/// roughly the potential energy of a typical draw, so the first trajectories
/// do not turn a large energy surplus into a long excursion.
pub fn jittered_starts<T: TargetDensity + ?Sized>(
    target: &T,
    center: &[f64],
    chains: usize,
    max_scale: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, HmcError> {
    let dim = target.dim();
    if center.len() != dim {
        return Err(HmcError::Dimension {
            expected: dim,
            got: center.len(),
        });
    }
    let reference = target.log_density(center);
    if !reference.is_finite() {
        return Err(HmcError::Initialization {
            chain: 0,
            attempts: 1,
        });
    }
    let floor = reference - dim as f64 / 2.0;
    let mut rng = Pcg32::seed_from_u64(seed);
    (0..chains)
        .map(|chain| {
            let direction: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let mut scale = max_scale;
            for _ in 0..60 {
                let point: Vec<f64> = center
                    .iter()
                    .zip(&direction)
                    .map(|(c, u)| c + scale * u)
                    .collect();
                if target.log_density(&point) >= floor {
                    return Ok(point);
                }
                scale *= 0.5;
            }
            Err(HmcError::Initialization {
                chain,
                attempts: 60,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Negative Rosenbrock function, maximized at (1, 1).
    struct Rosenbrock;

    impl TargetDensity for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }

        fn log_density(&self, x: &[f64]) -> f64 {
            -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }

        fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let r = x[1] - x[0] * x[0];
            g[0] = 2.0 * (1.0 - x[0]) + 400.0 * x[0] * r;
            g[1] = -200.0 * r;
            self.log_density(x)
        }
    }

    struct Quadratic {
        center: Vec<f64>,
        precision: Vec<f64>,
    }

    impl TargetDensity for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }

        fn log_density(&self, x: &[f64]) -> f64 {
            x.iter()
                .zip(&self.center)
                .zip(&self.precision)
                .map(|((xi, c), p)| -0.5 * p * (xi - c).powi(2))
                .sum()
        }

        fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            for i in 0..x.len() {
                g[i] = -self.precision[i] * (x[i] - self.center[i]);
            }
            self.log_density(x)
        }
    }

    #[test]
    fn rosenbrock_valley() {
        let mode = find_mode(&Rosenbrock, &[-1.2, 1.0], &OptimizeConfig::default()).unwrap();
        assert!(mode.converged);
        assert!((mode.position[0] - 1.0).abs() < 1e-6);
        assert!((mode.position[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn badly_scaled_quadratic() {
        let target = Quadratic {
            center: vec![3.0, -2.0, 0.5, 10.0],
            precision: vec![1e4, 1.0, 1e-2, 50.0],
        };
        let mode = find_mode(&target, &[0.0; 4], &OptimizeConfig::default()).unwrap();
        assert!(mode.converged, "{mode:?}");
        assert!(mode.gradient_norm() < 1e-8);
        for (x, c) in mode.position.iter().zip(&target.center) {
            assert!((x - c).abs() < 1e-6);
        }
    }

    #[test]
    fn jittered_starts_stay_near_the_mode() {
        let target = Quadratic {
            center: vec![0.0; 6],
            precision: vec![1e6, 1.0, 1.0, 1.0, 1.0, 1.0],
        };
        let starts = jittered_starts(&target, &target.center, 4, 0.5, 7).unwrap();
        assert_eq!(starts.len(), 4);
        for s in &starts {
            assert!(target.log_density(s) >= -3.0);
            assert!(s.iter().any(|&x| x != 0.0));
        }
        assert_ne!(starts[0], starts[1]);
        assert_eq!(
            starts,
            jittered_starts(&target, &target.center, 4, 0.5, 7).unwrap()
        );
    }

    #[test]
    fn rejects_bad_start() {
        assert!(matches!(
            find_mode(&Rosenbrock, &[0.0], &OptimizeConfig::default()),
            Err(HmcError::Dimension { .. })
        ));
    }
}

//! Warmup adaptation: dual-averaging step size and a Welford variance
//! accumulator for the diagonal mass matrix.

/// Nesterov dual averaging of `log(step_size)` towards a target mean
/// acceptance probability.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    target: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    iteration: f64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            target,
            mu: (10.0 * initial_step).ln(),
            gamma: 0.2,
            t0: 10.0,
            kappa: 0.75,
            iteration: 0.0,
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
        }
    }

    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    /// Step size to keep once adaptation stops.
    pub fn final_step(&self) -> f64 {
        if self.iteration == 0.0 {
            self.current()
        } else {
            self.log_step_bar.exp()
        }
    }

    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.iteration += 1.0;
        let m = self.iteration;
        let eta = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        self.log_step = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let weight = m.powf(-self.kappa);
        self.log_step_bar = weight * self.log_step + (1.0 - weight) * self.log_step_bar;
        self.current()
    }
}

/// Running per-coordinate mean and variance.
#[derive(Debug, Clone)]
pub(crate) struct RunningVariance {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *mean;
            *mean += d / n;
            *m2 += d * (v - *mean);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Sample variances shrunk towards 1e-3, as in Stan's windowed adaptation.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|m2| {
                let var = if self.count > 1 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dual_averaging_moves_towards_target() {
        let mut da = DualAveraging::new(1.0, 0.8);
        // Accepting everything should grow the step size.
        for _ in 0..50 {
            da.update(1.0);
        }
        assert!(da.final_step() > 1.0);
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..50 {
            da.update(0.0);
        }
        assert!(da.final_step() < 1.0);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.5, -0.3, 2.2, 0.0, 4.1, -1.7];
        let mut rv = RunningVariance::new(1);
        for x in xs {
            rv.push(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        let expected = (6.0 / 11.0) * var + 1e-3 * (5.0 / 11.0);
        assert_relative_eq!(rv.regularized_variance()[0], expected, max_relative = 1e-12);
        assert_eq!(rv.count(), 6);
    }
}

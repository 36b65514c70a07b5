use crate::{HmcError, TargetDensity};

/// Position, momentum and the cached log density / gradient at `position`.
#[derive(Debug, Clone)]
pub(crate) struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub gradient: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    pub fn new<T: TargetDensity + ?Sized>(
        target: &T,
        position: Vec<f64>,
        momentum: Vec<f64>,
    ) -> Self {
        let mut gradient = vec![0.0; position.len()];
        let log_density = target.log_density_and_gradient(&position, &mut gradient);
        Self {
            position,
            momentum,
            gradient,
            log_density,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_density.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }

    pub fn kinetic_energy(&self, inverse_mass: &[f64]) -> f64 {
        0.5 * self
            .momentum
            .iter()
            .zip(inverse_mass)
            .map(|(p, m)| m * p * p)
            .sum::<f64>()
    }

    /// Negative log joint density of (position, momentum).
    pub fn hamiltonian(&self, inverse_mass: &[f64]) -> f64 {
        -self.log_density + self.kinetic_energy(inverse_mass)
    }
}

/// Advances `point` by `steps` kick-drift-kick steps in place.
pub(crate) fn integrate<T: TargetDensity + ?Sized>(
    target: &T,
    point: &mut PhasePoint,
    step_size: f64,
    steps: usize,
    inverse_mass: &[f64],
) -> Result<(), HmcError> {
    let half = 0.5 * step_size;
    for _ in 0..steps {
        for (p, g) in point.momentum.iter_mut().zip(&point.gradient) {
            *p += half * g;
        }
        for ((q, p), m) in point
            .position
            .iter_mut()
            .zip(&point.momentum)
            .zip(inverse_mass)
        {
            *q += step_size * m * p;
        }
        point.log_density = target.log_density_and_gradient(&point.position, &mut point.gradient);
        if !point.is_finite() {
            return Err(HmcError::Divergence);
        }
        for (p, g) in point.momentum.iter_mut().zip(&point.gradient) {
            *p += half * g;
        }
    }
    if point
        .momentum
        .iter()
        .chain(&point.position)
        .all(|v| v.is_finite())
    {
        Ok(())
    } else {
        Err(HmcError::Divergence)
    }
}

/// Runs `steps` leapfrog steps from `(position, momentum)` with a diagonal
/// inverse mass matrix and returns the end point.
///
/// A non-finite log density or gradient anywhere along the trajectory is
/// reported as [`HmcError::Divergence`].
pub fn leapfrog<T: TargetDensity + ?Sized>(
    target: &T,
    position: &[f64],
    momentum: &[f64],
    step_size: f64,
    steps: usize,
    inverse_mass: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), HmcError> {
    let dim = target.dim();
    for len in [position.len(), momentum.len(), inverse_mass.len()] {
        if len != dim {
            return Err(HmcError::Dimension {
                expected: dim,
                got: len,
            });
        }
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(HmcError::Config(format!(
            "step size must be positive and finite, got {step_size}"
        )));
    }
    if steps == 0 {
        return Ok((position.to_vec(), momentum.to_vec()));
    }
    let mut point = PhasePoint::new(target, position.to_vec(), momentum.to_vec());
    if !point.is_finite() {
        return Err(HmcError::Divergence);
    }
    integrate(target, &mut point, step_size, steps, inverse_mass)?;
    Ok((point.position, point.momentum))
}

/// A differentiable log density on an unconstrained real space.
///
/// Implementations are shared read-only between chain threads.
pub trait TargetDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density up to an additive constant. `-inf` marks points outside the support.
    fn log_density(&self, position: &[f64]) -> f64;

    /// Writes the gradient into `gradient` and returns the log density.
    fn log_density_and_gradient(&self, position: &[f64], gradient: &mut [f64]) -> f64;
}

impl<T: TargetDensity + ?Sized> TargetDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn log_density(&self, position: &[f64]) -> f64 {
        (**self).log_density(position)
    }

    fn log_density_and_gradient(&self, position: &[f64], gradient: &mut [f64]) -> f64 {
        (**self).log_density_and_gradient(position, gradient)
    }
}

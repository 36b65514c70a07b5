use hmc::{find_mode, OptimizeConfig, SamplerConfig, TargetDensity};
use threshold_core::fit::{fit, FitSettings, InitStrategy};
use threshold_core::model::{Hyperparams, Model, Variant};
use threshold_core::synth::{recovery_scenario, simulate_variant, RecoveryDesign};

fn small_model(counties: usize, variant: Variant) -> Model {
    let design = RecoveryDesign {
        counties,
        min_population: 200.0,
        max_population: 2000.0,
        ..RecoveryDesign::default()
    };
    let scenario = recovery_scenario(&design, 3).unwrap().scenario;
    let data = simulate_variant(&scenario, variant).unwrap();
    Model::new(
        data,
        Hyperparams {
            variant,
            ..Hyperparams::default()
        },
    )
    .unwrap()
}

#[test]
fn mode_has_vanishing_gradient_on_small_data() {
    for variant in [Variant::Poisson, Variant::Binomial] {
        let model = small_model(3, variant);
        let mode = find_mode(
            &model,
            &model.moment_matched_point(),
            &OptimizeConfig::default(),
        )
        .unwrap();
        assert!(
            mode.converged,
            "{variant:?}: gradient norm {:.3e} after {} iterations, lp {}",
            mode.gradient_norm(),
            mode.iterations,
            mode.log_density
        );
        assert!(mode.gradient_norm() < 1e-6);
        let mut grad = vec![0.0; model.dim()];
        let lp = model.log_density_and_gradient(&mode.position, &mut grad);
        assert_eq!(lp, mode.log_density);
        let start = model.log_density(&model.moment_matched_point());
        assert!(mode.log_density >= start);
    }
}

#[test]
fn fits_are_reproducible_and_finite() {
    let model = small_model(5, Variant::Poisson);
    for init in [InitStrategy::Mode, InitStrategy::Random] {
        let settings = FitSettings {
            sampler: SamplerConfig {
                warmup: 100,
                samples: 50,
                max_leapfrog_steps: 16,
                seed: 4,
                ..SamplerConfig::default()
            },
            init,
            ..FitSettings::default()
        };
        let a = fit(&model, &settings).unwrap();
        let b = fit(&model, &settings).unwrap();
        assert_eq!(a.draws.chains, b.draws.chains);
        assert_eq!(a.mode.is_some(), init == InitStrategy::Mode);
        assert_eq!(a.draws.total_draws(), 200);
        assert!(a
            .draws
            .chains
            .iter()
            .all(|c| c.log_density.iter().all(|lp| lp.is_finite())));
    }
}

#[test]
fn mode_starts_differ_between_chains() {
    let model = small_model(4, Variant::Binomial);
    let settings = FitSettings {
        sampler: SamplerConfig {
            warmup: 0,
            samples: 1,
            max_leapfrog_steps: 1,
            ..SamplerConfig::default()
        },
        ..FitSettings::default()
    };
    let result = fit(&model, &settings).unwrap();
    let mode = result.mode.unwrap();
    let firsts: Vec<&Vec<f64>> = result.draws.chains.iter().map(|c| &c.draws[0]).collect();
    assert_ne!(firsts[0], firsts[1]);
    for draw in firsts {
        assert!(model.log_density(draw) > mode.log_density - model.dim() as f64);
    }
}

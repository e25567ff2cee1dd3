//! Cross-module behavior of the full alternating fit.

use hmtl_core::driver::{fit_hmtl, fit_hmtl_with_init, fit_mssl_with_init, initial_weights, DriverConfig};
use hmtl_core::model::{HierarchicalDataset, Hyperparams, WeightSet};
use hmtl_core::omega::AdmmConfig;
use hmtl_core::synthetic::{generate_hierarchical_dataset, SyntheticSpec};
use hmtl_core::theta::ThetaSolveConfig;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        super_tasks: 3,
        sub_tasks: 5,
        dim: 8,
        samples: 30,
        dof: 6,
        groups: 2,
        noise_var: 0.2,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn fit_runs_in_single_precision() {
    let (data, _, _) = generate_hierarchical_dataset::<f32>(&small_spec(1)).unwrap();
    let h = Hyperparams::new(0.1f32, 0.01, 0.01).unwrap();
    let model = fit_hmtl(
        &data,
        &h,
        &DriverConfig {
            outer_tol: 1e-3,
            max_outer_iters: 30,
            rng_seed: 2,
        },
        &ThetaSolveConfig {
            grad_tol: 1e-3,
            ..ThetaSolveConfig::default()
        },
        &AdmmConfig {
            abs_tol: 1e-4,
            rel_tol: 1e-3,
            ..AdmmConfig::default()
        },
    )
    .unwrap();
    assert_eq!(model.weights.len(), 3);
    assert!(model.report.min_omega_eigenvalue > 0.0);
    for w in model.report.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-2, "f32 trace rose: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn zero_coupling_fit_equals_independent_fits() {
    let (data, _, _) = generate_hierarchical_dataset::<f64>(&small_spec(4)).unwrap();
    let h = Hyperparams::new(0.2, 0.02, 0.0).unwrap();
    // tolerance small enough that both runs use every outer iteration
    let cfg = DriverConfig {
        outer_tol: 1e-12,
        max_outer_iters: 12,
        rng_seed: 9,
    };
    let theta_cfg = ThetaSolveConfig::default();
    let admm_cfg = AdmmConfig::default();

    let init = initial_weights::<f64>(3, 8, 5, cfg.rng_seed);
    let joint = fit_hmtl_with_init(&data, &h, &cfg, &theta_cfg, &admm_cfg, init.clone()).unwrap();

    for t in 0..3 {
        let single = fit_mssl_with_init(
            data.super_task(t),
            &h,
            &cfg,
            &theta_cfg,
            &admm_cfg,
            init.theta(t).clone(),
        )
        .unwrap();
        let dw = (joint.weights.theta(t) - single.weights.theta(0)).amax();
        let dp = (joint.precisions.omega(t) - single.precisions.omega(0)).amax();
        assert!(dw <= 1e-8, "weights diverge at super-task {t}: {dw}");
        assert!(dp <= 1e-8, "precisions diverge at super-task {t}: {dp}");
    }
}

#[test]
fn fit_is_invariant_to_thread_count() {
    let (data, _, _) = generate_hierarchical_dataset::<f64>(&small_spec(6)).unwrap();
    let h = Hyperparams::new(0.3, 0.03, 0.05).unwrap();
    let cfg = DriverConfig {
        rng_seed: 5,
        ..DriverConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            fit_hmtl(
                &data,
                &h,
                &cfg,
                &ThetaSolveConfig::default(),
                &AdmmConfig::default(),
            )
            .unwrap()
        })
    };
    let serial = run(1);
    let parallel = run(4);
    assert_eq!(serial.weights.thetas(), parallel.weights.thetas());
    assert_eq!(serial.precisions.omegas(), parallel.precisions.omegas());
    assert_eq!(
        serial.report.objective_trace,
        parallel.report.objective_trace
    );
}

#[test]
fn duplicated_dataset_construction_rejects_mismatched_weights() {
    let (data, _, _) = generate_hierarchical_dataset::<f64>(&small_spec(8)).unwrap();
    let h = Hyperparams::new(0.1, 0.0, 0.0).unwrap();
    let bad_init = WeightSet::new(vec![nalgebra::DMatrix::zeros(8, 5); 2]).unwrap();
    let err = fit_hmtl_with_init(
        &data,
        &h,
        &DriverConfig::default(),
        &ThetaSolveConfig::default(),
        &AdmmConfig::default(),
        bad_init,
    )
    .unwrap_err();
    assert!(err.to_string().contains("initial weights"));
    drop(HierarchicalDataset::from_single(data.super_task(0).to_vec()).unwrap());
}

//! Scratch: covariance-reading generator, converged theta solver.

use hmtl_core::driver::{fit_hmtl, DriverConfig};
use hmtl_core::model::{predict, rmse, HierarchicalDataset, Hyperparams, SubTaskData};
use hmtl_core::omega::AdmmConfig;
use hmtl_core::synthetic::{make_group_scale_matrix, sample_wishart};
use hmtl_core::theta::ThetaSolveConfig;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(rng: &mut ChaCha8Rng) -> f64 { StandardNormal.sample(rng) }

fn generate_cov_reading(
    t_count: usize, m: usize, d: usize, n: usize, dof: usize, seed: u64,
) -> HierarchicalDataset<f64> {
    let scale = make_group_scale_matrix::<f64>(m, 3, 0.7, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_sd = 0.1f64.sqrt();
    let mut tasks_all = Vec::new();
    for _ in 0..t_count {
        let w = sample_wishart(&scale, dof, &mut rng).unwrap();
        let l = w.clone().cholesky().unwrap().l();
        let mut theta = DMatrix::zeros(d, m);
        for j in 0..d {
            let z = DVector::from_fn(m, |_, _| randn(&mut rng));
            let row = &l * z;
            for k in 0..m { theta[(j, k)] = row[k]; }
        }
        let mut tasks = Vec::new();
        for k in 0..m {
            let x = DMatrix::from_fn(n, d, |_, _| randn(&mut rng));
            let eps = DVector::from_fn(n, |_, _| randn(&mut rng) * noise_sd);
            let y = &x * theta.column(k) + eps;
            tasks.push(SubTaskData::new(x, y).unwrap());
        }
        tasks_all.push(tasks);
    }
    HierarchicalDataset::new(tasks_all).unwrap()
}

fn split_rows(data: &HierarchicalDataset<f64>, n_train: usize)
    -> (HierarchicalDataset<f64>, HierarchicalDataset<f64>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for tasks in data.super_tasks() {
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for task in tasks {
            let n = task.n();
            tr.push(SubTaskData::new(task.x().rows(0, n_train).into_owned(), task.y().rows(0, n_train).into_owned()).unwrap());
            te.push(SubTaskData::new(task.x().rows(n_train, n - n_train).into_owned(), task.y().rows(n_train, n - n_train).into_owned()).unwrap());
        }
        train.push(tr);
        test.push(te);
    }
    (HierarchicalDataset::new(train).unwrap(), HierarchicalDataset::new(test).unwrap())
}

fn mean_test_rmse(test: &HierarchicalDataset<f64>, thetas: &[DMatrix<f64>]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0;
    for (t, tasks) in test.super_tasks().iter().enumerate() {
        for (k, task) in tasks.iter().enumerate() {
            let pred = predict(task.x(), &thetas[t].column(k).into_owned()).unwrap();
            acc += rmse(&pred, task.y()).unwrap();
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
#[ignore]
fn sweep() {
    let theta_cfg = ThetaSolveConfig::default();
    let admm_cfg = AdmmConfig::default();
    let driver = DriverConfig::<f64>::default();
    let l0s = [0.1, 0.3, 1.0, 3.0];
    let mssl_l1s = [0.0, 0.03, 0.1, 0.3];
    let hmtl_l2s = [0.03, 0.1, 0.3];

    for t_count in [2usize, 7] {
        for seed in 0..3u64 {
            let data = generate_cov_reading(t_count, 15, 50, 100, 10, seed);
            let (train, test) = split_rows(&data, 30);
            let mut best_m = (f64::INFINITY, 0.0, 0.0);
            let mut best_h = (f64::INFINITY, 0.0, 0.0);
            for &l0 in &l0s {
                for &l1 in &mssl_l1s {
                    let h = Hyperparams::new(l0, l1, 0.0).unwrap();
                    if let Ok(model) = fit_hmtl(&train, &h, &driver, &theta_cfg, &admm_cfg) {
                        let r = mean_test_rmse(&test, model.weights.thetas());
                        if r < best_m.0 { best_m = (r, l0, l1); }
                    }
                }
                for &l2 in &hmtl_l2s {
                    let h = Hyperparams::new(l0, 0.001, l2).unwrap();
                    if let Ok(model) = fit_hmtl(&train, &h, &driver, &theta_cfg, &admm_cfg) {
                        let r = mean_test_rmse(&test, model.weights.thetas());
                        if r < best_h.0 { best_h = (r, l0, l2); }
                    }
                }
            }
            println!(
                "T={t_count} seed={seed}: mssl {:.4} @(l0={},l1={}) | hmtl {:.4} @(l0={},l2={}) | improvement {:.1}%",
                best_m.0, best_m.1, best_m.2, best_h.0, best_h.1, best_h.2,
                100.0 * (best_m.0 - best_h.0) / best_m.0
            );
        }
    }
}

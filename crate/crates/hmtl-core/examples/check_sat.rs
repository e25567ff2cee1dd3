//! Criterion-7 protocol dry run: validation-selected lambdas per (T, seed).

use hmtl_core::driver::{fit_hmtl, DriverConfig};
use hmtl_core::model::{predict, rmse, HierarchicalDataset, Hyperparams, SubTaskData};
use hmtl_core::omega::AdmmConfig;
use hmtl_core::synthetic::{generate_hierarchical_dataset, SyntheticSpec};
use hmtl_core::theta::ThetaSolveConfig;
use nalgebra::DMatrix;

fn slice_rows(data: &HierarchicalDataset<f64>, lo: usize, hi: usize) -> HierarchicalDataset<f64> {
    let tasks = data
        .super_tasks()
        .iter()
        .map(|ts| {
            ts.iter()
                .map(|t| {
                    SubTaskData::new(
                        t.x().rows(lo, hi - lo).into_owned(),
                        t.y().rows(lo, hi - lo).into_owned(),
                    )
                    .unwrap()
                })
                .collect()
        })
        .collect();
    HierarchicalDataset::new(tasks).unwrap()
}

fn mean_rmse(test: &HierarchicalDataset<f64>, thetas: &[DMatrix<f64>]) -> f64 {
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

fn fit_family(
    train: &HierarchicalDataset<f64>,
    combos: &[(f64, f64, f64)],
    driver: &DriverConfig<f64>,
    theta_cfg: &ThetaSolveConfig<f64>,
    admm_cfg: &AdmmConfig<f64>,
) -> Vec<(f64, f64, f64)> {
    // returns (val_rmse, combo index as float hack) -- simpler: evaluate inline
    let fit_part = slice_rows(train, 0, 24);
    let val_part = slice_rows(train, 24, 30);
    combos
        .iter()
        .map(|&(l0, l1, l2)| {
            let h = Hyperparams::new(l0, l1, l2).unwrap();
            match fit_hmtl(&fit_part, &h, driver, theta_cfg, admm_cfg) {
                Ok(m) => (mean_rmse(&val_part, m.weights.thetas()), l1, l2),
                Err(_) => (f64::INFINITY, l1, l2),
            }
        })
        .collect()
}

fn main() {
    let driver = DriverConfig::<f64>::default();
    let theta_cfg = ThetaSolveConfig::default();
    let admm_cfg = AdmmConfig { rho: 10.0, max_iters: 2000, ..AdmmConfig::default() };
    let mssl_combos: Vec<(f64, f64, f64)> =
        [0.01, 0.03, 0.1, 0.3].iter().map(|&l1| (1.0, l1, 0.0)).collect();
    let hmtl_combos: Vec<(f64, f64, f64)> =
        [0.03, 0.1, 0.3, 1.0].iter().map(|&l2| (1.0, 0.01, l2)).collect();

    for t_count in [2usize, 4, 7] {
        let mut imps = Vec::new();
        for seed in 0..10u64 {
            let spec = SyntheticSpec { super_tasks: t_count, seed: 1000 + seed, ..SyntheticSpec::default() };
            let (data, _, _) = generate_hierarchical_dataset::<f64>(&spec).unwrap();
            let train = slice_rows(&data, 0, 30);
            let test = slice_rows(&data, 30, 100);

            let mssl_val = fit_family(&train, &mssl_combos, &driver, &theta_cfg, &admm_cfg);
            let best_m = mssl_val
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
                .unwrap()
                .0;
            let hmtl_val = fit_family(&train, &hmtl_combos, &driver, &theta_cfg, &admm_cfg);
            let best_h = hmtl_val
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
                .unwrap()
                .0;

            let hm = Hyperparams::new(mssl_combos[best_m].0, mssl_combos[best_m].1, 0.0).unwrap();
            let mm = fit_hmtl(&train, &hm, &driver, &theta_cfg, &admm_cfg).unwrap();
            let rm = mean_rmse(&test, mm.weights.thetas());

            let hh = Hyperparams::new(hmtl_combos[best_h].0, hmtl_combos[best_h].1, hmtl_combos[best_h].2).unwrap();
            let mh = fit_hmtl(&train, &hh, &driver, &theta_cfg, &admm_cfg).unwrap();
            let rh = mean_rmse(&test, mh.weights.thetas());

            let imp = 100.0 * (rm - rh) / rm;
            imps.push(imp);
            println!(
                "T={t_count} seed={seed}: mssl l1={} -> {rm:.3} | hmtl l2={} -> {rh:.3} | imp {imp:.1}%",
                mssl_combos[best_m].1, hmtl_combos[best_h].2
            );
        }
        let mean: f64 = imps.iter().sum::<f64>() / imps.len() as f64;
        println!("==== T={t_count}: mean improvement {mean:.2}%");
    }
}

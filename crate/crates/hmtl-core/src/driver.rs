//! The alternating fit: weight step, precision step, repeat until the joint
//! objective stops moving. Also provides the single-super-task special case
//! and a plain-text model file format.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    hmtl_objective, sample_covariance, FitReport, HierarchicalDataset, HmtlModel, Hyperparams,
    PrecisionSet, SubTaskData, WeightSet,
};
use crate::omega::{solve_omega_step, AdmmConfig};
use crate::scalar::{real, Scalar};
use crate::theta::{solve_theta_step, ThetaSolveConfig};

/// Outer-loop settings.
#[derive(Debug, Clone, Copy)]
pub struct DriverConfig<T> {
    /// Relative objective-change threshold ending the outer loop.
    pub outer_tol: T,
    pub max_outer_iters: usize,
    /// Seed for the uniform weight initialization.
    pub rng_seed: u64,
}

impl<T: Scalar> Default for DriverConfig<T> {
    fn default() -> Self {
        Self {
            outer_tol: real(1e-4),
            max_outer_iters: 50,
            rng_seed: 0,
        }
    }
}

impl<T: Scalar> DriverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > T::zero()) {
            return Err(Error::InvalidInput("outer_tol must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidInput(
                "max_outer_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform `(-0.5, 0.5)` starting weights, drawn from one shared stream
/// consumed super-task by super-task in index order, each matrix filled row
/// by row. Draws happen in `f64` and are then embedded into `T`, so every
/// scalar type sees the same numbers.
pub fn initial_weights<T: Scalar>(
    super_tasks: usize,
    d: usize,
    m: usize,
    seed: u64,
) -> WeightSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thetas = (0..super_tasks)
        .map(|_| {
            let entries: Vec<T> = (0..d * m)
                .map(|_| real(rng.random_range(-0.5..0.5)))
                .collect();
            DMatrix::from_row_slice(d, m, &entries)
        })
        .collect();
    WeightSet::new(thetas).expect("uniform draws are finite")
}

/// Fits the hierarchical model: precisions start at the identity, weights at
/// seeded uniform noise, then the weight and precision steps alternate until
/// the relative objective change drops below `cfg.outer_tol`.
///
/// When all three penalties are zero the precision step is unbounded and is
/// skipped entirely, leaving the identity in place; the fit then reduces to
/// independent least squares.
pub fn fit_hmtl<T: Scalar>(
    data: &HierarchicalDataset<T>,
    hyper: &Hyperparams<T>,
    cfg: &DriverConfig<T>,
    theta_cfg: &ThetaSolveConfig<T>,
    admm_cfg: &AdmmConfig<T>,
) -> Result<HmtlModel<T>> {
    let init = initial_weights(
        data.num_super_tasks(),
        data.dim(),
        data.num_sub_tasks(),
        cfg.rng_seed,
    );
    fit_hmtl_with_init(data, hyper, cfg, theta_cfg, admm_cfg, init)
}

/// As [`fit_hmtl`], starting from an explicit weight set instead of the
/// seeded initialization.
pub fn fit_hmtl_with_init<T: Scalar>(
    data: &HierarchicalDataset<T>,
    hyper: &Hyperparams<T>,
    cfg: &DriverConfig<T>,
    theta_cfg: &ThetaSolveConfig<T>,
    admm_cfg: &AdmmConfig<T>,
    init: WeightSet<T>,
) -> Result<HmtlModel<T>> {
    cfg.validate()?;
    theta_cfg.validate()?;
    admm_cfg.validate()?;
    hyper.validate()?;
    let t_count = data.num_super_tasks();
    let m = data.num_sub_tasks();
    let d = data.dim();
    if init.len() != t_count || init.theta(0).shape() != (d, m) {
        return Err(Error::DimensionMismatch(
            "initial weights do not match the dataset".into(),
        ));
    }

    let started = Instant::now();
    let zero = T::zero();
    let skip_omega =
        hyper.lambda0 == zero && hyper.lambda1 == zero && hyper.lambda2 == zero;

    let mut thetas = init.into_inner();
    let mut precisions = PrecisionSet::identity(t_count, m);
    let mut report = FitReport::<T>::default();

    let weights0 = WeightSet::new(thetas.clone())?;
    let mut objective = hmtl_objective(data, &weights0, &precisions, hyper)?;
    check_finite(objective, 0, "initial objective")?;
    report.objective_trace.push(objective);

    for outer in 1..=cfg.max_outer_iters {
        // weight step, independent per super-task
        let solved: Vec<Result<(DMatrix<T>, usize)>> = (0..t_count)
            .into_par_iter()
            .map(|t| {
                solve_theta_step(
                    data.super_task(t),
                    precisions.omega(t),
                    hyper.lambda0,
                    thetas[t].clone(),
                    theta_cfg,
                )
            })
            .collect();
        let mut worst_theta_iters = 0;
        for (t, res) in solved.into_iter().enumerate() {
            let (theta, iters) = res?;
            worst_theta_iters = worst_theta_iters.max(iters);
            thetas[t] = theta;
        }
        report.theta_iterations.push(worst_theta_iters);

        // precision step over the updated second moments
        if !skip_omega {
            let moments: Vec<DMatrix<T>> = thetas
                .iter()
                .map(sample_covariance)
                .collect::<Result<_>>()?;
            let (solution, admm) = solve_omega_step(&moments, hyper, admm_cfg)?;
            precisions = solution;
            report.admm_iterations.push(admm.iterations);
            report.final_primal_residual = admm.primal_residual;
            report.final_dual_residual = admm.dual_residual;
            report.min_omega_eigenvalue =
                report.min_omega_eigenvalue.min(admm.min_omega_eigenvalue);
        }

        let weights = WeightSet::new(thetas.clone())?;
        let next = hmtl_objective(data, &weights, &precisions, hyper)?;
        check_finite(next, outer, "objective")?;
        report.objective_trace.push(next);
        report.outer_iterations = outer;

        let denom = T::one().max(objective.abs());
        let rel_change = (next - objective).abs() / denom;
        objective = next;
        if rel_change < cfg.outer_tol {
            report.converged = true;
            break;
        }
    }

    if skip_omega {
        report.min_omega_eigenvalue = T::one();
    }
    report.elapsed_seconds = started.elapsed().as_secs_f64();

    Ok(HmtlModel {
        weights: WeightSet::new(thetas)?,
        precisions,
        hyper: *hyper,
        report,
    })
}

/// Single-super-task fit: the group coupling has nothing to couple, so
/// `lambda2` is forced to zero and the data wrapped as a one-task hierarchy.
pub fn fit_mssl<T: Scalar>(
    super_task: &[SubTaskData<T>],
    hyper: &Hyperparams<T>,
    cfg: &DriverConfig<T>,
    theta_cfg: &ThetaSolveConfig<T>,
    admm_cfg: &AdmmConfig<T>,
) -> Result<HmtlModel<T>> {
    let data = HierarchicalDataset::from_single(super_task.to_vec())?;
    let decoupled = Hyperparams {
        lambda2: T::zero(),
        ..*hyper
    };
    fit_hmtl(&data, &decoupled, cfg, theta_cfg, admm_cfg)
}

/// As [`fit_mssl`] with an explicit starting weight matrix.
pub fn fit_mssl_with_init<T: Scalar>(
    super_task: &[SubTaskData<T>],
    hyper: &Hyperparams<T>,
    cfg: &DriverConfig<T>,
    theta_cfg: &ThetaSolveConfig<T>,
    admm_cfg: &AdmmConfig<T>,
    init: DMatrix<T>,
) -> Result<HmtlModel<T>> {
    let data = HierarchicalDataset::from_single(super_task.to_vec())?;
    let decoupled = Hyperparams {
        lambda2: T::zero(),
        ..*hyper
    };
    fit_hmtl_with_init(
        &data,
        &decoupled,
        cfg,
        theta_cfg,
        admm_cfg,
        WeightSet::new(vec![init])?,
    )
}

fn check_finite<T: Scalar>(value: T, outer: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteObjective(format!(
            "{what} non-finite at outer iteration {outer}"
        )))
    }
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------

/// On-disk model representation: JSON with all matrices flattened row-major.
/// Numbers are written in the shortest form that parses back to the exact
/// same double, so a save/load round trip is lossless.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    super_tasks: usize,
    sub_tasks: usize,
    dim: usize,
    lambda0: f64,
    lambda1: f64,
    lambda2: f64,
    /// One entry per super-task, `dim * sub_tasks` values row-major.
    thetas: Vec<Vec<f64>>,
    /// One entry per super-task, `sub_tasks * sub_tasks` values row-major.
    omegas: Vec<Vec<f64>>,
    report: ReportFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    objective_trace: Vec<f64>,
    outer_iterations: usize,
    theta_iterations: Vec<usize>,
    admm_iterations: Vec<usize>,
    final_primal_residual: f64,
    final_dual_residual: f64,
    min_omega_eigenvalue: f64,
    converged: bool,
    elapsed_seconds: f64,
}

const MODEL_FORMAT: &str = "hmtl-model/1";

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Writes a fitted model to `path` in the documented JSON layout.
pub fn save_model(model: &HmtlModel<f64>, path: &Path) -> Result<()> {
    let d = model.weights.theta(0).nrows();
    let m = model.weights.theta(0).ncols();
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        super_tasks: model.weights.len(),
        sub_tasks: m,
        dim: d,
        lambda0: model.hyper.lambda0,
        lambda1: model.hyper.lambda1,
        lambda2: model.hyper.lambda2,
        thetas: model.weights.thetas().iter().map(row_major).collect(),
        omegas: model.precisions.omegas().iter().map(row_major).collect(),
        report: ReportFile {
            objective_trace: model.report.objective_trace.clone(),
            outer_iterations: model.report.outer_iterations,
            theta_iterations: model.report.theta_iterations.clone(),
            admm_iterations: model.report.admm_iterations.clone(),
            final_primal_residual: model.report.final_primal_residual,
            final_dual_residual: model.report.final_dual_residual,
            min_omega_eigenvalue: model.report.min_omega_eigenvalue,
            converged: model.report.converged,
            elapsed_seconds: model.report.elapsed_seconds,
        },
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<HmtlModel<f64>> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::InvalidInput(format!(
            "unsupported model format `{}`",
            file.format
        )));
    }
    let (t_count, m, d) = (file.super_tasks, file.sub_tasks, file.dim);
    let grab = |flat: &Vec<f64>, rows: usize, cols: usize, what: &str| -> Result<DMatrix<f64>> {
        if flat.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{what} has {} values, expected {}",
                flat.len(),
                rows * cols
            )));
        }
        Ok(DMatrix::from_row_slice(rows, cols, flat))
    };
    if file.thetas.len() != t_count || file.omegas.len() != t_count {
        return Err(Error::InvalidInput(
            "matrix count does not match declared super-task count".into(),
        ));
    }
    let thetas = file
        .thetas
        .iter()
        .map(|flat| grab(flat, d, m, "weight matrix"))
        .collect::<Result<Vec<_>>>()?;
    let omegas = file
        .omegas
        .iter()
        .map(|flat| grab(flat, m, m, "precision matrix"))
        .collect::<Result<Vec<_>>>()?;
    Ok(HmtlModel {
        weights: WeightSet::new(thetas)?,
        precisions: PrecisionSet::new(omegas)?,
        hyper: Hyperparams {
            lambda0: file.lambda0,
            lambda1: file.lambda1,
            lambda2: file.lambda2,
        },
        report: FitReport {
            objective_trace: file.report.objective_trace,
            outer_iterations: file.report.outer_iterations,
            theta_iterations: file.report.theta_iterations,
            admm_iterations: file.report.admm_iterations,
            final_primal_residual: file.report.final_primal_residual,
            final_dual_residual: file.report.final_dual_residual,
            min_omega_eigenvalue: file.report.min_omega_eigenvalue,
            converged: file.report.converged,
            elapsed_seconds: file.report.elapsed_seconds,
        },
    })
}

//! Weight-matrix step of the alternating fit: for one super-task, minimize
//! the quadratic objective
//!
//! `sum_k ||X_k theta_k - y_k||^2 + lambda0 * tr(S omega)`,  `S = theta^T theta / d`
//!
//! over `theta` with the precision matrix held fixed. The problem is convex
//! for positive semidefinite `omega`; a limited-memory quasi-Newton iteration
//! with backtracking line search solves it.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{inf_norm, SubTaskData};
use crate::scalar::{real, Scalar};

/// Quasi-Newton solver settings.
#[derive(Debug, Clone, Copy)]
pub struct ThetaSolveConfig<T> {
    /// Convergence threshold on the infinity norm of the gradient.
    pub grad_tol: T,
    pub max_iters: usize,
    /// Number of curvature pairs kept for the inverse-Hessian estimate.
    pub history_size: usize,
}

impl<T: Scalar> Default for ThetaSolveConfig<T> {
    fn default() -> Self {
        Self {
            grad_tol: real(1e-6),
            max_iters: 200,
            history_size: 10,
        }
    }
}

impl<T: Scalar> ThetaSolveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > T::zero()) {
            return Err(Error::InvalidInput("grad_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_dims<T: Scalar>(
    tasks: &[SubTaskData<T>],
    theta: &DMatrix<T>,
    omega: &DMatrix<T>,
) -> Result<()> {
    let (d, m) = theta.shape();
    if tasks.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} sub-tasks but weight matrix has {} columns",
            tasks.len(),
            m
        )));
    }
    if omega.nrows() != m || omega.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "precision matrix is {}x{}, expected {}x{}",
            omega.nrows(),
            omega.ncols(),
            m,
            m
        )));
    }
    for (k, task) in tasks.iter().enumerate() {
        if task.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "sub-task {k} has dimension {}, weight matrix has {} rows",
                task.dim(),
                d
            )));
        }
    }
    Ok(())
}

/// Objective value and gradient of the weight step at `theta`.
///
/// Gradient column `k` is `2 X_k^T (X_k theta_k - y_k) + (2 lambda0 / d) (theta omega)_k`.
pub fn theta_value_grad<T: Scalar>(
    tasks: &[SubTaskData<T>],
    theta: &DMatrix<T>,
    omega: &DMatrix<T>,
    lambda0: T,
) -> Result<(T, DMatrix<T>)> {
    check_dims(tasks, theta, omega)?;
    let (d, m) = theta.shape();
    let two = real::<T>(2.0);
    let d_scalar = real::<T>(d as f64);

    let mut value = T::zero();
    let mut grad = DMatrix::zeros(d, m);
    for (k, task) in tasks.iter().enumerate() {
        let resid = task.x() * theta.column(k) - task.y();
        value += resid.norm_squared();
        let g_k = task.x().transpose() * resid * two;
        grad.column_mut(k).copy_from(&g_k);
    }

    // trace coupling: lambda0/d * sum_{k,j} omega_kj <theta_k, theta_j>
    let coupled = theta * omega;
    let mut trace = T::zero();
    for (a, b) in coupled.iter().zip(theta.iter()) {
        trace += *a * *b;
    }
    value += lambda0 * trace / d_scalar;
    grad += coupled * (two * lambda0 / d_scalar);

    Ok((value, grad))
}

/// Per-column Cholesky factors of the block-diagonal Hessian part
/// `2 X_k^T X_k + (2 lambda0 / d) omega_kk I`, used as the fixed initial
/// inverse-Hessian estimate of the two-loop recursion. The cross-column
/// coupling this ignores is exactly what the curvature pairs pick up, so the
/// iteration no longer depends on the raw conditioning of the designs.
struct BlockPreconditioner<T: Scalar> {
    factors: Vec<nalgebra::Cholesky<T, nalgebra::Dyn>>,
}

impl<T: Scalar> BlockPreconditioner<T> {
    fn build(
        tasks: &[SubTaskData<T>],
        omega: &DMatrix<T>,
        lambda0: T,
        d: usize,
    ) -> Result<Self> {
        let two = real::<T>(2.0);
        let d_scalar = real::<T>(d as f64);
        let mut factors = Vec::with_capacity(tasks.len());
        for (k, task) in tasks.iter().enumerate() {
            let mut block = task.x().transpose() * task.x() * two;
            let ridge = (two * lambda0 / d_scalar) * omega[(k, k)];
            // keep the factorization well-posed even for lambda0 == 0 with
            // a rank-deficient design
            let floor = real::<T>(1e-10);
            for i in 0..d {
                block[(i, i)] += ridge.max(floor);
            }
            let chol = block.cholesky().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "sub-task {k} produced a non-positive-definite quadratic block"
                ))
            })?;
            factors.push(chol);
        }
        Ok(Self { factors })
    }

    fn apply(&self, q: &DMatrix<T>) -> DMatrix<T> {
        let mut out = q.clone_owned();
        for (k, chol) in self.factors.iter().enumerate() {
            let col = out.column(k).into_owned();
            out.column_mut(k).copy_from(&chol.solve(&col));
        }
        out
    }
}

/// Two-loop recursion: applies the limited-memory inverse-Hessian estimate
/// to the gradient, returning the descent direction `-H g`.
fn lbfgs_direction<T: Scalar>(
    grad: &DMatrix<T>,
    history: &VecDeque<(DMatrix<T>, DMatrix<T>, T)>,
    precond: &BlockPreconditioner<T>,
) -> DMatrix<T> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let alpha = *rho * s.dot(&q);
        q -= y * alpha;
        alphas.push(alpha);
    }
    q = precond.apply(&q);
    for ((s, y, rho), alpha) in history.iter().zip(alphas.iter().rev()) {
        let beta = *rho * y.dot(&q);
        q += s * (*alpha - beta);
    }
    -q
}

/// Minimizes the weight-step objective starting at `init`.
///
/// Returns the solution together with the number of quasi-Newton iterations
/// spent. The returned objective value never exceeds the one at `init`; a
/// non-finite objective encountered during the line search aborts with the
/// last finite iterate attached.
pub fn solve_theta_step<T: Scalar>(
    tasks: &[SubTaskData<T>],
    omega: &DMatrix<T>,
    lambda0: T,
    init: DMatrix<T>,
    cfg: &ThetaSolveConfig<T>,
) -> Result<(DMatrix<T>, usize)> {
    cfg.validate()?;
    let armijo = real::<T>(1e-4);
    let half = real::<T>(0.5);
    let min_step = real::<T>(1e-20);

    let mut theta = init;
    let (mut value, mut grad) = theta_value_grad(tasks, &theta, omega, lambda0)?;
    if !value.is_finite() {
        return Err(solver_failure(
            "objective non-finite at the initial point",
            &theta,
        ));
    }
    if inf_norm(&grad) <= cfg.grad_tol {
        return Ok((theta, 0));
    }

    let precond = BlockPreconditioner::build(tasks, omega, lambda0, theta.nrows())?;
    let mut history: VecDeque<(DMatrix<T>, DMatrix<T>, T)> =
        VecDeque::with_capacity(cfg.history_size.max(1));

    for iter in 1..=cfg.max_iters {
        let mut dir = lbfgs_direction(&grad, &history, &precond);
        let mut slope = grad.dot(&dir);
        if !(slope < T::zero()) {
            // estimate lost descent; fall back to steepest descent
            dir = -grad.clone();
            slope = -grad.dot(&grad);
        }

        // The objective is quadratic, so one gradient probe gives the exact
        // minimizer along the direction: H dir = grad(theta + dir) - grad,
        // alpha = -slope / (dir^T H dir). Backtracking below only has to
        // clean up floating-point residue.
        let probe = &theta + &dir;
        let (probe_value, probe_grad) = theta_value_grad(tasks, &probe, omega, lambda0)?;
        let mut step = if probe_value.is_finite() && probe_grad.iter().all(|g| g.is_finite()) {
            let curvature = (&probe_grad - &grad).dot(&dir);
            if curvature > T::zero() {
                -slope / curvature
            } else {
                T::one()
            }
        } else {
            (T::one() / (T::one() + inf_norm(&grad))).min(T::one())
        };
        let accepted = loop {
            let candidate = &theta + &dir * step;
            let (cand_value, cand_grad) = theta_value_grad(tasks, &candidate, omega, lambda0)?;
            if !cand_value.is_finite() {
                return Err(solver_failure(
                    "objective non-finite during line search",
                    &theta,
                ));
            }
            if cand_value <= value + armijo * step * slope {
                break Some((candidate, cand_value, cand_grad));
            }
            step *= half;
            if step < min_step {
                break None;
            }
        };

        let Some((next, next_value, next_grad)) = accepted else {
            // no further decrease possible at machine precision
            return Ok((theta, iter));
        };

        let s = &next - &theta;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        if sy > real::<T>(1e-12) * s.norm() * y.norm() {
            if history.len() == cfg.history_size.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, T::one() / sy));
        }

        theta = next;
        value = next_value;
        grad = next_grad;
        if inf_norm(&grad) <= cfg.grad_tol {
            return Ok((theta, iter));
        }
    }
    Ok((theta, cfg.max_iters))
}

fn solver_failure<T: Scalar>(reason: &str, last: &DMatrix<T>) -> Error {
    let as_f64 = DMatrix::from_fn(last.nrows(), last.ncols(), |i, j| {
        last[(i, j)].to_f64().unwrap_or(f64::NAN)
    });
    Error::SolverFailure {
        reason: reason.into(),
        last_iterate: Box::new(as_f64),
    }
}

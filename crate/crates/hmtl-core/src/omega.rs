//! Precision-matrix step of the alternating fit: jointly estimate the `T`
//! precision matrices
//!
//! `min sum_t [ -log|omega_t| + lambda0 tr(S_t omega_t) ] + R(
//! {omega})`,  `omega_t > 0`
//!
//! where `R` is the l1 + cross-super-task group lasso penalty on off-diagonal
//! entries. Solved by ADMM with scaled duals: the omega-update is a
//! log-det proximal step computed per super-task from an eigendecomposition,
//! the z-update is the closed-form group soft threshold coupling all
//! super-tasks, and the consensus copy `z` is returned so reported sparsity
//! is exact.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{symmetrize, Hyperparams, PrecisionSet};
use crate::scalar::{real, Scalar};

/// ADMM settings. The penalty parameter is fixed; no adaptive scheme, so
/// iterate sequences are reproducible.
#[derive(Debug, Clone, Copy)]
pub struct AdmmConfig<T> {
    pub rho: T,
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_iters: usize,
}

impl<T: Scalar> Default for AdmmConfig<T> {
    fn default() -> Self {
        Self {
            rho: T::one(),
            abs_tol: real(1e-5),
            rel_tol: real(1e-4),
            max_iters: 500,
        }
    }
}

impl<T: Scalar> AdmmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > T::zero()) {
            return Err(Error::InvalidInput("rho must be positive".into()));
        }
        if !(self.abs_tol > T::zero() && self.rel_tol > T::zero()) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Primal iterates, consensus copies, and scaled duals, one triple per
/// super-task.
#[derive(Debug, Clone)]
pub struct AdmmState<T: Scalar> {
    pub omegas: Vec<DMatrix<T>>,
    pub zs: Vec<DMatrix<T>>,
    pub us: Vec<DMatrix<T>>,
}

impl<T: Scalar> AdmmState<T> {
    fn cold(count: usize, m: usize) -> Self {
        Self {
            omegas: vec![DMatrix::identity(m, m); count],
            zs: vec![DMatrix::identity(m, m); count],
            us: vec![DMatrix::zeros(m, m); count],
        }
    }
}

/// Convergence diagnostics of one ADMM solve.
#[derive(Debug, Clone, Copy)]
pub struct AdmmReport<T> {
    pub iterations: usize,
    pub primal_residual: T,
    pub dual_residual: T,
    pub converged: bool,
    /// Smallest eigenvalue produced by any omega-update of the run; positive
    /// by construction of the proximal step.
    pub min_omega_eigenvalue: T,
    /// True when the consensus iterate was singular and the solution fell
    /// back to the primal iterate masked by the consensus sparsity pattern.
    pub sparsified_fallback: bool,
}

/// Minimizer of `-log|omega| + lambda0 tr(s omega) + (rho/2) ||omega - a||_F^2`
/// over symmetric positive definite matrices.
///
/// Eigendecompose `lambda0 s - rho a = V diag(d) V^T`; the solution is
/// `V diag((-d_j + sqrt(d_j^2 + 4 rho)) / (2 rho)) V^T`, positive definite for
/// every input. Returns the matrix together with its smallest eigenvalue.
pub fn prox_logdet<T: Scalar>(
    a: &DMatrix<T>,
    s: &DMatrix<T>,
    lambda0: T,
    rho: T,
) -> Result<(DMatrix<T>, T)> {
    let m = a.nrows();
    if a.ncols() != m || s.nrows() != m || s.ncols() != m {
        return Err(Error::DimensionMismatch(
            "prox_logdet expects square matrices of equal size".into(),
        ));
    }
    if !(rho > T::zero()) {
        return Err(Error::InvalidInput("rho must be positive".into()));
    }
    if a.iter().chain(s.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "prox_logdet input contains non-finite entries".into(),
        ));
    }
    let b = symmetrize(&(s * lambda0 - a * rho));
    let eig = b.symmetric_eigen();
    let four = real::<T>(4.0);
    let two = real::<T>(2.0);
    let mut min_eig = T::max_value().unwrap_or_else(T::one);
    let mut spectrum = eig.eigenvalues.clone();
    for w in spectrum.iter_mut() {
        let dj = *w;
        let root = (dj * dj + four * rho).sqrt();
        // 2/(d + root) is the cancellation-free form of (-d + root)/(2 rho)
        let omega_j = if dj > T::zero() {
            two / (dj + root)
        } else {
            (root - dj) / (two * rho)
        };
        debug_assert!(omega_j > T::zero());
        min_eig = min_eig.min(omega_j);
        *w = omega_j;
    }
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&spectrum) * eig.eigenvectors.transpose();
    out = symmetrize(&out);
    Ok((out, min_eig))
}

/// Proximal operator of the off-diagonal l1 + group-l2 penalty, applied to a
/// stack of `T` matrices sharing one sparsity structure.
///
/// Diagonals pass through unchanged. Each off-diagonal position `(k, j)` is
/// soft-thresholded elementwise by `t1`, then the vector across the stack is
/// shrunk by `max(1 - t2 / ||.||_2, 0)`.
pub fn group_soft_threshold<T: Scalar>(
    stack: &[DMatrix<T>],
    t1: T,
    t2: T,
) -> Vec<DMatrix<T>> {
    debug_assert!(t1 >= T::zero() && t2 >= T::zero());
    let m = stack[0].nrows();
    let mut out = stack.to_vec();
    for k in 0..m {
        for j in 0..m {
            if k == j {
                continue;
            }
            let mut norm_sq = T::zero();
            let mut soft = Vec::with_capacity(stack.len());
            for mat in stack {
                let v = mat[(k, j)];
                let shrunk = if v > t1 {
                    v - t1
                } else if v < -t1 {
                    v + t1
                } else {
                    T::zero()
                };
                norm_sq += shrunk * shrunk;
                soft.push(shrunk);
            }
            let norm = norm_sq.sqrt();
            let scale = if norm > T::zero() {
                (T::one() - t2 / norm).max(T::zero())
            } else {
                T::zero()
            };
            for (mat, shrunk) in out.iter_mut().zip(soft) {
                mat[(k, j)] = scale * shrunk;
            }
        }
    }
    out
}

fn frob_sq<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| acc + *x * *x)
}

struct LoopOutcome<T: Scalar> {
    state: AdmmState<T>,
    report: AdmmReport<T>,
}

/// One ADMM loop over a stack of super-tasks (the stack may be a singleton).
fn admm_loop<T: Scalar>(
    s_set: &[DMatrix<T>],
    h: &Hyperparams<T>,
    cfg: &AdmmConfig<T>,
) -> Result<LoopOutcome<T>> {
    let count = s_set.len();
    let m = s_set[0].nrows();
    let rho = cfg.rho;
    let t1 = h.lambda1 / rho;
    let t2 = h.lambda2 / rho;
    let total_dim = real::<T>((count * m * m) as f64).sqrt();

    let mut state = AdmmState::cold(count, m);
    let mut min_eig = T::max_value().unwrap_or_else(T::one);
    let mut iterations = 0;
    let mut primal = T::zero();
    let mut dual = T::zero();
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;

        // omega-update: independent per super-task
        let updates: Vec<Result<(DMatrix<T>, T)>> = (0..count)
            .into_par_iter()
            .map(|t| {
                let a = &state.zs[t] - &state.us[t];
                prox_logdet(&a, &s_set[t], h.lambda0, rho)
            })
            .collect();
        for (t, upd) in updates.into_iter().enumerate() {
            let (omega, eig) = upd?;
            min_eig = min_eig.min(eig);
            state.omegas[t] = omega;
        }

        // z-update couples the stack
        let inputs: Vec<DMatrix<T>> = (0..count)
            .map(|t| &state.omegas[t] + &state.us[t])
            .collect();
        let z_prev = std::mem::replace(&mut state.zs, group_soft_threshold(&inputs, t1, t2));

        // scaled dual update
        for t in 0..count {
            state.us[t] += &state.omegas[t] - &state.zs[t];
        }

        // residuals, summed in fixed order
        let mut r_sq = T::zero();
        let mut s_sq = T::zero();
        let mut omega_sq = T::zero();
        let mut z_sq = T::zero();
        let mut u_sq = T::zero();
        for t in 0..count {
            r_sq += frob_sq(&(&state.omegas[t] - &state.zs[t]));
            s_sq += frob_sq(&(&state.zs[t] - &z_prev[t]));
            omega_sq += frob_sq(&state.omegas[t]);
            z_sq += frob_sq(&state.zs[t]);
            u_sq += frob_sq(&state.us[t]);
        }
        primal = r_sq.sqrt();
        dual = rho * s_sq.sqrt();
        let eps_pri =
            total_dim * cfg.abs_tol + cfg.rel_tol * omega_sq.sqrt().max(z_sq.sqrt());
        let eps_dual = total_dim * cfg.abs_tol + cfg.rel_tol * rho * u_sq.sqrt();
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }
    }

    Ok(LoopOutcome {
        state,
        report: AdmmReport {
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            converged,
            min_omega_eigenvalue: min_eig,
            sparsified_fallback: false,
        },
    })
}

fn merge_reports<T: Scalar>(reports: &[AdmmReport<T>]) -> AdmmReport<T> {
    let mut merged = reports[0];
    for r in &reports[1..] {
        merged.iterations = merged.iterations.max(r.iterations);
        merged.primal_residual = merged.primal_residual.max(r.primal_residual);
        merged.dual_residual = merged.dual_residual.max(r.dual_residual);
        merged.converged = merged.converged && r.converged;
        merged.min_omega_eigenvalue = merged.min_omega_eigenvalue.min(r.min_omega_eigenvalue);
        merged.sparsified_fallback = merged.sparsified_fallback || r.sparsified_fallback;
    }
    merged
}

/// Solves the joint precision step for the given per-super-task second-moment
/// matrices.
///
/// With `lambda2 == 0` the problem separates exactly, so each super-task runs
/// its own loop with its own stopping decision, matching a standalone
/// single-matrix solve bit for bit. Hitting `max_iters` is reported through
/// the `converged` flag, not an error; a non-positive-definite result is.
pub fn solve_omega_step<T: Scalar>(
    s_set: &[DMatrix<T>],
    h: &Hyperparams<T>,
    cfg: &AdmmConfig<T>,
) -> Result<(PrecisionSet<T>, AdmmReport<T>)> {
    cfg.validate()?;
    h.validate()?;
    if s_set.is_empty() {
        return Err(Error::InvalidInput("empty second-moment stack".into()));
    }
    let m = s_set[0].nrows();
    for (t, s) in s_set.iter().enumerate() {
        if s.nrows() != m || s.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "second-moment matrix {t} is {}x{}, expected {m}x{m}",
                s.nrows(),
                s.ncols()
            )));
        }
    }

    let outcomes: Vec<LoopOutcome<T>> = if h.lambda2 == T::zero() && s_set.len() > 1 {
        let per_task: Vec<Result<LoopOutcome<T>>> = s_set
            .par_iter()
            .map(|s| admm_loop(std::slice::from_ref(s), h, cfg))
            .collect();
        per_task.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        vec![admm_loop(s_set, h, cfg)?]
    };

    let mut report = merge_reports(&outcomes.iter().map(|o| o.report).collect::<Vec<_>>());
    let mut zs = Vec::with_capacity(s_set.len());
    let mut omegas = Vec::with_capacity(s_set.len());
    for outcome in outcomes {
        zs.extend(outcome.state.zs);
        omegas.extend(outcome.state.omegas);
    }

    // prefer the consensus iterate: its zeros are exact
    let all_pd = zs.iter().all(|z| z.clone().cholesky().is_some());
    if all_pd {
        return Ok((PrecisionSet::new(zs)?, report));
    }

    // consensus went singular (extreme l1); keep the positive definite primal
    // iterate but mask its support to match the consensus pattern
    report.sparsified_fallback = true;
    let masked: Vec<DMatrix<T>> = omegas
        .iter()
        .zip(zs.iter())
        .map(|(omega, z)| {
            DMatrix::from_fn(m, m, |i, j| {
                if i == j || z[(i, j)] != T::zero() {
                    omega[(i, j)]
                } else {
                    T::zero()
                }
            })
        })
        .collect();
    for mat in &masked {
        if mat.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(
                "precision step produced a singular solution even after masking".into(),
            ));
        }
    }
    Ok((PrecisionSet::new(masked)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-scale..scale));
        symmetrize(&raw)
    }

    fn random_psd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&(&g * g.transpose() / m as f64))
    }

    #[test]
    fn prox_scalar_golden_ratio() {
        let a = DMatrix::from_element(1, 1, 0.0);
        let s = DMatrix::from_element(1, 1, 1.0);
        let (omega, min_eig) = prox_logdet(&a, &s, 1.0, 1.0).unwrap();
        let expected = (5.0f64.sqrt() - 1.0) / 2.0;
        assert_relative_eq!(omega[(0, 0)], expected, epsilon = 1e-12);
        assert_relative_eq!(min_eig, expected, epsilon = 1e-12);
    }

    #[test]
    fn prox_identity_input_gives_golden_ratio_scaled_identity() {
        for m in [1usize, 3, 5] {
            let a = DMatrix::<f64>::identity(m, m);
            let s = DMatrix::<f64>::zeros(m, m);
            let (omega, _) = prox_logdet(&a, &s, 0.7, 1.0).unwrap();
            let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
            assert_relative_eq!(omega, DMatrix::identity(m, m) * phi, epsilon = 1e-10);
        }
    }

    #[test]
    fn prox_stationarity_residual_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 4;
        let a = random_sym(&mut rng, m, 1.0);
        let s = random_psd(&mut rng, m);
        let (lambda0, rho) = (0.8, 1.3);
        let (omega, min_eig) = prox_logdet(&a, &s, lambda0, rho).unwrap();
        assert!(min_eig > 0.0);
        let eig = omega.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e > 0.0));
        let grad =
            -omega.clone().try_inverse().unwrap() + &s * lambda0 + (&omega - &a) * rho;
        assert!(crate::model::inf_norm(&grad) < 1e-8, "residual {}", crate::model::inf_norm(&grad));
    }

    #[test]
    fn prox_rejects_non_finite() {
        let a = DMatrix::from_element(2, 2, f64::NAN);
        let s = DMatrix::identity(2, 2);
        assert!(prox_logdet(&a, &s, 1.0, 1.0).is_err());
    }

    #[test]
    fn soft_threshold_scalar_case() {
        let stack = vec![DMatrix::from_row_slice(2, 2, &[9.0, 1.2, 1.2, 9.0])];
        let out = group_soft_threshold(&stack, 0.5, 0.0);
        assert_relative_eq!(out[0][(0, 1)], 0.7, epsilon = 1e-15);
        assert_relative_eq!(out[0][(1, 0)], 0.7, epsilon = 1e-15);
        assert_eq!(out[0][(0, 0)], 9.0);
    }

    #[test]
    fn soft_threshold_group_scaling() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 4.0, 1.0]);
        let out = group_soft_threshold(&[a, b], 0.0, 1.0);
        // ||(3,4)|| = 5, scale 0.8
        assert_relative_eq!(out[0][(0, 1)], 2.4, epsilon = 1e-15);
        assert_relative_eq!(out[1][(0, 1)], 3.2, epsilon = 1e-15);
    }

    #[test]
    fn soft_threshold_diagonal_untouched() {
        let stack = vec![DMatrix::from_row_slice(2, 2, &[5.0, 0.1, 0.1, 5.0])];
        let out = group_soft_threshold(&stack, 10.0, 10.0);
        assert_eq!(out[0][(0, 0)], 5.0);
        assert_eq!(out[0][(1, 1)], 5.0);
        assert_eq!(out[0][(0, 1)], 0.0);
    }

    #[test]
    fn soft_threshold_is_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let m = rng.random_range(2..5);
            let count = rng.random_range(1..4);
            let t1 = rng.random_range(0.0..1.0);
            let t2 = rng.random_range(0.0..1.0);
            let a: Vec<DMatrix<f64>> =
                (0..count).map(|_| random_sym(&mut rng, m, 2.0)).collect();
            let b: Vec<DMatrix<f64>> =
                (0..count).map(|_| random_sym(&mut rng, m, 2.0)).collect();
            let pa = group_soft_threshold(&a, t1, t2);
            let pb = group_soft_threshold(&b, t1, t2);
            let mut dist_in = 0.0;
            let mut dist_out = 0.0;
            for t in 0..count {
                dist_in += frob_sq(&(&a[t] - &b[t]));
                dist_out += frob_sq(&(&pa[t] - &pb[t]));
            }
            assert!(dist_out.sqrt() <= dist_in.sqrt() + 1e-12);
        }
    }

    #[test]
    fn extreme_l1_kills_off_diagonals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 4;
        let mut s = random_psd(&mut rng, m) * 0.2;
        for k in 0..m {
            s[(k, k)] = 1.0;
        }
        let lambda0 = 2.0;
        let h = Hyperparams::new(lambda0, 1000.0, 0.0).unwrap();
        let (precisions, report) = solve_omega_step(&[s.clone()], &h, &AdmmConfig::default()).unwrap();
        assert!(report.converged);
        let omega = precisions.omega(0);
        for k in 0..m {
            for j in 0..m {
                if k != j {
                    assert_eq!(omega[(k, j)], 0.0);
                } else {
                    assert_relative_eq!(omega[(k, k)], 1.0 / (lambda0 * s[(k, k)]), epsilon = 1e-4);
                }
            }
        }
    }

    #[test]
    fn duplicated_super_tasks_give_identical_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_psd(&mut rng, 3) + DMatrix::identity(3, 3) * 0.5;
        let h = Hyperparams::new(1.0, 0.1, 0.0).unwrap();
        let (prec, _) =
            solve_omega_step(&[s.clone(), s.clone()], &h, &AdmmConfig::default()).unwrap();
        assert_eq!(prec.omega(0), prec.omega(1));
    }

    #[test]
    fn zero_group_penalty_decouples_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stack: Vec<DMatrix<f64>> = (0..3)
            .map(|_| random_psd(&mut rng, 3) + DMatrix::identity(3, 3) * 0.4)
            .collect();
        let h = Hyperparams::new(0.9, 0.05, 0.0).unwrap();
        let cfg = AdmmConfig::default();
        let (joint, _) = solve_omega_step(&stack, &h, &cfg).unwrap();
        for (t, s) in stack.iter().enumerate() {
            let (single, _) = solve_omega_step(&[s.clone()], &h, &cfg).unwrap();
            assert_eq!(joint.omega(t), single.omega(0), "super-task {t}");
        }
    }

    #[test]
    fn large_group_penalty_shares_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let count = 3;
        let m = 4;
        let stack: Vec<DMatrix<f64>> = (0..count)
            .map(|_| {
                let mut s = random_psd(&mut rng, m) * 0.5;
                for k in 0..m {
                    s[(k, k)] = 1.0;
                }
                s
            })
            .collect();
        let lambda1 = 1e-4;
        let h = Hyperparams::new(1.0, lambda1, 1000.0 * lambda1).unwrap();
        let (prec, _) = solve_omega_step(&stack, &h, &AdmmConfig::default()).unwrap();
        let pattern = |omega: &DMatrix<f64>| {
            let mut out = Vec::new();
            for k in 0..m {
                for j in 0..m {
                    if k != j {
                        out.push(omega[(k, j)] != 0.0);
                    }
                }
            }
            out
        };
        let first = pattern(prec.omega(0));
        for t in 1..count {
            assert_eq!(pattern(prec.omega(t)), first, "super-task {t}");
        }
    }

    #[test]
    fn max_iters_reports_unconverged_but_returns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_psd(&mut rng, 3) + DMatrix::identity(3, 3);
        let h = Hyperparams::new(1.0, 0.1, 0.0).unwrap();
        let cfg = AdmmConfig {
            max_iters: 2,
            ..AdmmConfig::default()
        };
        let (prec, report) = solve_omega_step(&[s], &h, &cfg).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 2);
        assert_eq!(prec.len(), 1);
    }
}

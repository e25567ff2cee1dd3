//! Domain types shared by every solver: hierarchical regression data, weight
//! and precision sets, hyperparameters, and the joint cost function they are
//! fitted under.
//!
//! The hierarchy has two levels. A *super-task* is one multitask regression
//! problem (in the climate setting: one variable such as temperature over all
//! grid locations); a *sub-task* is a single linear regression inside it (one
//! location's model-ensemble weights).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Tolerance used when asserting symmetry of precision matrices.
pub(crate) const SYMMETRY_TOL: f64 = 1e-10;

fn all_finite<T: Scalar>(it: impl IntoIterator<Item = T>) -> bool {
    it.into_iter().all(|x| x.is_finite())
}

/// One regression problem: `n` samples of `d` ensemble-member predictions
/// (rows of `x`) against the observed target `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTaskData<T: Scalar> {
    x: DMatrix<T>,
    y: DVector<T>,
}

impl<T: Scalar> SubTaskData<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput(
                "sub-task needs at least one sample and one predictor".into(),
            ));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design matrix has {} rows but target has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if !all_finite(x.iter().copied()) || !all_finite(y.iter().copied()) {
            return Err(Error::InvalidInput(
                "sub-task data contains non-finite entries".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    /// Sample count.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Predictor dimension (number of ensemble members).
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// `T` super-tasks of `m` sub-tasks each, all sharing the predictor
/// dimension `d`. Per-sub-task sample counts may differ.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalDataset<T: Scalar> {
    super_tasks: Vec<Vec<SubTaskData<T>>>,
}

impl<T: Scalar> HierarchicalDataset<T> {
    pub fn new(super_tasks: Vec<Vec<SubTaskData<T>>>) -> Result<Self> {
        if super_tasks.is_empty() {
            return Err(Error::InvalidInput("need at least one super-task".into()));
        }
        let m = super_tasks[0].len();
        if m == 0 {
            return Err(Error::InvalidInput("need at least one sub-task".into()));
        }
        let d = super_tasks[0][0].dim();
        for (t, tasks) in super_tasks.iter().enumerate() {
            if tasks.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "super-task {} has {} sub-tasks, expected {}",
                    t,
                    tasks.len(),
                    m
                )));
            }
            for (k, task) in tasks.iter().enumerate() {
                if task.dim() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "sub-task ({t},{k}) has dimension {}, expected {}",
                        task.dim(),
                        d
                    )));
                }
            }
        }
        Ok(Self { super_tasks })
    }

    /// Wraps a single super-task.
    pub fn from_single(tasks: Vec<SubTaskData<T>>) -> Result<Self> {
        Self::new(vec![tasks])
    }

    /// Number of super-tasks.
    pub fn num_super_tasks(&self) -> usize {
        self.super_tasks.len()
    }

    /// Number of sub-tasks per super-task.
    pub fn num_sub_tasks(&self) -> usize {
        self.super_tasks[0].len()
    }

    /// Shared predictor dimension.
    pub fn dim(&self) -> usize {
        self.super_tasks[0][0].dim()
    }

    pub fn super_task(&self, t: usize) -> &[SubTaskData<T>] {
        &self.super_tasks[t]
    }

    pub fn super_tasks(&self) -> &[Vec<SubTaskData<T>>] {
        &self.super_tasks
    }
}

/// Per-super-task weight matrices, each `d x m`; column `k` holds the
/// regression weights of sub-task `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T: Scalar> {
    thetas: Vec<DMatrix<T>>,
}

impl<T: Scalar> WeightSet<T> {
    pub fn new(thetas: Vec<DMatrix<T>>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidInput("weight set is empty".into()));
        }
        let (d, m) = thetas[0].shape();
        for (t, theta) in thetas.iter().enumerate() {
            if theta.shape() != (d, m) {
                return Err(Error::DimensionMismatch(format!(
                    "weight matrix {} is {}x{}, expected {}x{}",
                    t,
                    theta.nrows(),
                    theta.ncols(),
                    d,
                    m
                )));
            }
            if !all_finite(theta.iter().copied()) {
                return Err(Error::InvalidInput(format!(
                    "weight matrix {t} contains non-finite entries"
                )));
            }
        }
        Ok(Self { thetas })
    }

    pub fn thetas(&self) -> &[DMatrix<T>] {
        &self.thetas
    }

    pub fn theta(&self, t: usize) -> &DMatrix<T> {
        &self.thetas[t]
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn into_inner(self) -> Vec<DMatrix<T>> {
        self.thetas
    }
}

/// Per-super-task precision matrices, each `m x m`, symmetric positive
/// definite. Construction symmetrizes (guarding against floating-point
/// drift) and certifies positive definiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionSet<T: Scalar> {
    omegas: Vec<DMatrix<T>>,
}

impl<T: Scalar> PrecisionSet<T> {
    pub fn new(omegas: Vec<DMatrix<T>>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidInput("precision set is empty".into()));
        }
        let m = omegas[0].nrows();
        let mut symmetrized = Vec::with_capacity(omegas.len());
        for (t, omega) in omegas.into_iter().enumerate() {
            if omega.nrows() != m || omega.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "precision matrix {} is {}x{}, expected {}x{}",
                    t,
                    omega.nrows(),
                    omega.ncols(),
                    m,
                    m
                )));
            }
            if !all_finite(omega.iter().copied()) {
                return Err(Error::InvalidInput(format!(
                    "precision matrix {t} contains non-finite entries"
                )));
            }
            let sym = symmetrize(&omega);
            let skew = inf_norm(&(&omega - &sym));
            if skew > real::<T>(SYMMETRY_TOL) {
                return Err(Error::InvalidInput(format!(
                    "precision matrix {t} is asymmetric beyond tolerance"
                )));
            }
            if sym.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(format!(
                    "precision matrix {t} has a non-positive eigenvalue"
                )));
            }
            symmetrized.push(sym);
        }
        Ok(Self {
            omegas: symmetrized,
        })
    }

    /// `count` copies of the `m x m` identity.
    pub fn identity(count: usize, m: usize) -> Self {
        Self {
            omegas: (0..count).map(|_| DMatrix::identity(m, m)).collect(),
        }
    }

    pub fn omegas(&self) -> &[DMatrix<T>] {
        &self.omegas
    }

    pub fn omega(&self, t: usize) -> &DMatrix<T> {
        &self.omegas[t]
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn into_inner(self) -> Vec<DMatrix<T>> {
        self.omegas
    }
}

/// The three penalty weights of the joint cost: `lambda0` scales the
/// trace coupling between weights and precisions, `lambda1` the elementwise
/// off-diagonal sparsity, `lambda2` the cross-super-task group coupling.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyperparams<T> {
    pub lambda0: T,
    pub lambda1: T,
    pub lambda2: T,
}

impl<T: Scalar> Hyperparams<T> {
    pub fn new(lambda0: T, lambda1: T, lambda2: T) -> Result<Self> {
        let h = Self {
            lambda0,
            lambda1,
            lambda2,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Diagnostics collected across one alternating fit.
#[derive(Debug, Clone)]
pub struct FitReport<T> {
    /// Joint objective at initialization followed by one value per outer
    /// iteration (evaluated after both steps). Nonincreasing up to solver
    /// tolerance.
    pub objective_trace: Vec<T>,
    pub outer_iterations: usize,
    /// Worst-case quasi-Newton iteration count per outer step.
    pub theta_iterations: Vec<usize>,
    /// ADMM iteration count per outer step.
    pub admm_iterations: Vec<usize>,
    pub final_primal_residual: T,
    pub final_dual_residual: T,
    /// Smallest eigenvalue seen across every precision iterate of the fit.
    pub min_omega_eigenvalue: T,
    pub converged: bool,
    pub elapsed_seconds: f64,
}

impl<T: Scalar> Default for FitReport<T> {
    fn default() -> Self {
        Self {
            objective_trace: Vec::new(),
            outer_iterations: 0,
            theta_iterations: Vec::new(),
            admm_iterations: Vec::new(),
            final_primal_residual: T::zero(),
            final_dual_residual: T::zero(),
            min_omega_eigenvalue: T::max_value().unwrap_or_else(T::one),
            converged: false,
            elapsed_seconds: 0.0,
        }
    }
}

/// A fitted model: weights, precisions, the hyperparameters they were fit
/// under, and the fit diagnostics.
#[derive(Debug, Clone)]
pub struct HmtlModel<T: Scalar> {
    pub weights: WeightSet<T>,
    pub precisions: PrecisionSet<T>,
    pub hyper: Hyperparams<T>,
    pub report: FitReport<T>,
}

/// `(omega + omega^T) / 2`.
pub(crate) fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = real::<T>(0.5);
    (m + m.transpose()) * half
}

/// Max absolute entry.
pub(crate) fn inf_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// `log |omega|` through a Cholesky factorization; errors when the matrix is
/// not positive definite.
pub(crate) fn log_det_pd<T: Scalar>(omega: &DMatrix<T>) -> Result<T> {
    let chol = omega.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("log-determinant of a non-PD matrix".into())
    })?;
    let two = real::<T>(2.0);
    let mut acc = T::zero();
    for i in 0..omega.nrows() {
        acc += chol.l_dirty()[(i, i)].ln();
    }
    Ok(two * acc)
}

/// Uncentered second moment of the task parameters: `S = theta^T theta / d`.
///
/// Symmetric positive semidefinite by construction.
pub fn sample_covariance<T: Scalar>(theta: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !all_finite(theta.iter().copied()) {
        return Err(Error::InvalidInput(
            "weight matrix contains non-finite entries".into(),
        ));
    }
    let d = real::<T>(theta.nrows() as f64);
    let s = theta.transpose() * theta / d;
    Ok(symmetrize(&s))
}

/// Squared-loss prediction `X * theta`.
pub fn predict<T: Scalar>(x: &DMatrix<T>, theta: &DVector<T>) -> Result<DVector<T>> {
    if x.ncols() != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "design matrix has {} columns but weight vector has {} entries",
            x.ncols(),
            theta.len()
        )));
    }
    Ok(x * theta)
}

/// Root-mean-squared error between predictions and observations.
pub fn rmse<T: Scalar>(pred: &DVector<T>, obs: &DVector<T>) -> Result<T> {
    if pred.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} entries but observation has {}",
            pred.len(),
            obs.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("rmse of empty vectors".into()));
    }
    let n = real::<T>(pred.len() as f64);
    let sq = (pred - obs).norm_squared();
    Ok((sq / n).sqrt())
}

/// The group lasso penalty over a stack of precision matrices:
/// `lambda1 * sum_t sum_{k!=j} |omega_kj|`
/// `+ lambda2 * sum_{k!=j} sqrt(sum_t omega_kj^2)`.
///
/// Diagonals are unpenalized.
pub(crate) fn group_lasso_penalty<T: Scalar>(
    omegas: &[DMatrix<T>],
    lambda1: T,
    lambda2: T,
) -> T {
    let m = omegas[0].nrows();
    let mut l1 = T::zero();
    for omega in omegas {
        for k in 0..m {
            for j in 0..m {
                if k != j {
                    l1 += omega[(k, j)].abs();
                }
            }
        }
    }
    let mut group = T::zero();
    for k in 0..m {
        for j in 0..m {
            if k != j {
                let mut sq = T::zero();
                for omega in omegas {
                    let v = omega[(k, j)];
                    sq += v * v;
                }
                group += sq.sqrt();
            }
        }
    }
    lambda1 * l1 + lambda2 * group
}

/// The joint cost the alternating fit minimizes:
///
/// `sum_t [ sum_k ||X theta - y||^2 - log|omega_t| + lambda0 tr(S_t omega_t) ]`
/// `+ lambda1 sum_t sum_{k!=j} |omega_kj| + lambda2 sum_{k!=j} sqrt(sum_t omega_kj^2)`
///
/// with `S_t = theta_t^T theta_t / d`. Summation order is fixed (super-task
/// then sub-task) so the value is bit-reproducible.
pub fn hmtl_objective<T: Scalar>(
    data: &HierarchicalDataset<T>,
    weights: &WeightSet<T>,
    precisions: &PrecisionSet<T>,
    hyper: &Hyperparams<T>,
) -> Result<T> {
    let t_count = data.num_super_tasks();
    let m = data.num_sub_tasks();
    let d = data.dim();
    if weights.len() != t_count || precisions.len() != t_count {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} super-tasks but got {} weight and {} precision matrices",
            t_count,
            weights.len(),
            precisions.len()
        )));
    }
    hyper.validate()?;

    let mut total = T::zero();
    for t in 0..t_count {
        let theta = weights.theta(t);
        let omega = precisions.omega(t);
        if theta.shape() != (d, m) {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix {t} shape does not match dataset"
            )));
        }
        if omega.nrows() != m {
            return Err(Error::DimensionMismatch(format!(
                "precision matrix {t} shape does not match dataset"
            )));
        }
        for (k, task) in data.super_task(t).iter().enumerate() {
            let resid = task.x() * theta.column(k) - task.y();
            total += resid.norm_squared();
        }
        total -= log_det_pd(omega)?;
        let s = sample_covariance(theta)?;
        total += hyper.lambda0 * (&s * omega).trace();
    }
    total += group_lasso_penalty(precisions.omegas(), hyper.lambda1, hyper.lambda2);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dmat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn sample_covariance_identity() {
        let s = sample_covariance(&DMatrix::<f64>::identity(2, 2)).unwrap();
        assert_relative_eq!(s, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sample_covariance_zeros() {
        let s = sample_covariance(&DMatrix::<f64>::zeros(3, 2)).unwrap();
        assert_eq!(s, DMatrix::zeros(2, 2));
    }

    #[test]
    fn sample_covariance_orthogonal_columns() {
        let theta = dmat(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let s = sample_covariance(&theta).unwrap();
        assert_relative_eq!(s, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn sample_covariance_rejects_non_finite() {
        let theta = dmat(1, 2, &[f64::NAN, 0.0]);
        assert!(matches!(
            sample_covariance(&theta),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn trace_identity_matches_cyclic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let d = rng.random_range(1..6);
            let m = rng.random_range(1..6);
            let theta = DMatrix::from_fn(d, m, |_, _| rng.random_range(-2.0..2.0));
            let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let omega = symmetrize(&raw);
            let s = sample_covariance(&theta).unwrap();
            let lhs = (&s * &omega).trace();
            let rhs = (&theta * &omega * theta.transpose()).trace() / d as f64;
            assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn predict_examples() {
        let x = DMatrix::<f64>::identity(3, 3);
        let theta = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(predict(&x, &theta).unwrap(), theta);

        let zero = DVector::zeros(3);
        assert_eq!(predict(&x, &zero).unwrap(), zero);

        let x = dmat(2, 2, &[1.0, 1.0, 2.0, 0.0]);
        let theta = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(
            predict(&x, &theta).unwrap(),
            DVector::from_vec(vec![1.0, 1.0])
        );

        let bad = DVector::from_vec(vec![1.0]);
        assert!(predict(&x, &bad).is_err());
    }

    #[test]
    fn rmse_examples() {
        let a = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);

        let pred = DVector::from_vec(vec![0.0, 0.0]);
        let obs = DVector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(rmse(&pred, &obs).unwrap(), (12.5f64).sqrt(), epsilon = 1e-12);

        let one = DVector::from_vec(vec![1.0]);
        let zero = DVector::from_vec(vec![0.0]);
        assert_eq!(rmse(&one, &zero).unwrap(), 1.0);

        assert!(rmse(&one, &a).is_err());
    }

    #[test]
    fn rmse_nonnegative_zero_iff_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(1..10);
            let pred = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let obs = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let e = rmse(&pred, &obs).unwrap();
            assert!(e >= 0.0);
            if pred != obs {
                assert!(e > 0.0);
            }
        }
    }

    fn tiny_instance(
        theta_val: f64,
    ) -> (
        HierarchicalDataset<f64>,
        WeightSet<f64>,
        PrecisionSet<f64>,
    ) {
        let task = SubTaskData::new(dmat(1, 1, &[1.0]), DVector::from_vec(vec![0.0])).unwrap();
        let data = HierarchicalDataset::from_single(vec![task]).unwrap();
        let w = WeightSet::new(vec![dmat(1, 1, &[theta_val])]).unwrap();
        let p = PrecisionSet::new(vec![dmat(1, 1, &[1.0])]).unwrap();
        (data, w, p)
    }

    #[test]
    fn objective_all_terms_vanish() {
        let (data, w, p) = tiny_instance(0.0);
        let h = Hyperparams::new(0.3, 0.7, 0.9).unwrap();
        assert_relative_eq!(
            hmtl_objective(&data, &w, &p, &h).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn objective_trace_term_only() {
        let (data, w, p) = tiny_instance(1.0);
        let h = Hyperparams::new(0.1, 0.0, 0.0).unwrap();
        // loss 1, log det 0, trace term 0.1 * 1 * 1
        assert_relative_eq!(
            hmtl_objective(&data, &w, &p, &h).unwrap(),
            1.1,
            epsilon = 1e-14
        );
    }

    #[test]
    fn objective_rejects_non_pd_precision() {
        let (data, w, _) = tiny_instance(0.0);
        let p = PrecisionSet {
            omegas: vec![dmat(1, 1, &[-1.0])],
        };
        let h = Hyperparams::new(0.1, 0.0, 0.0).unwrap();
        assert!(matches!(
            hmtl_objective(&data, &w, &p, &h),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    /// Straight-line evaluation of each objective term with scalar loops,
    /// independent of the matrix expressions in `hmtl_objective`.
    fn objective_by_loops(
        data: &HierarchicalDataset<f64>,
        w: &WeightSet<f64>,
        p: &PrecisionSet<f64>,
        h: &Hyperparams<f64>,
    ) -> f64 {
        let d = data.dim();
        let m = data.num_sub_tasks();
        let mut total = 0.0;
        for t in 0..data.num_super_tasks() {
            let theta = w.theta(t);
            let omega = p.omega(t);
            for (k, task) in data.super_task(t).iter().enumerate() {
                for i in 0..task.n() {
                    let mut pred = 0.0;
                    for a in 0..d {
                        pred += task.x()[(i, a)] * theta[(a, k)];
                    }
                    let r = pred - task.y()[i];
                    total += r * r;
                }
            }
            // -log|omega| via eigenvalues
            let eig = omega.clone().symmetric_eigen();
            for ev in eig.eigenvalues.iter() {
                total -= ev.ln();
            }
            // lambda0 / d * sum_{k,j} omega_kj <theta_k, theta_j>
            for k in 0..m {
                for j in 0..m {
                    let mut dot = 0.0;
                    for a in 0..d {
                        dot += theta[(a, k)] * theta[(a, j)];
                    }
                    total += h.lambda0 * omega[(k, j)] * dot / d as f64;
                }
            }
            for k in 0..m {
                for j in 0..m {
                    if k != j {
                        total += h.lambda1 * omega[(k, j)].abs();
                    }
                }
            }
        }
        for k in 0..m {
            for j in 0..m {
                if k != j {
                    let mut sq = 0.0;
                    for t in 0..data.num_super_tasks() {
                        sq += p.omega(t)[(k, j)] * p.omega(t)[(k, j)];
                    }
                    total += h.lambda2 * sq.sqrt();
                }
            }
        }
        total
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        t_count: usize,
        m: usize,
        d: usize,
        n: usize,
    ) -> (
        HierarchicalDataset<f64>,
        WeightSet<f64>,
        PrecisionSet<f64>,
    ) {
        let mut super_tasks = Vec::new();
        let mut thetas = Vec::new();
        let mut omegas = Vec::new();
        for _ in 0..t_count {
            let mut tasks = Vec::new();
            for _ in 0..m {
                let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
                let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                tasks.push(SubTaskData::new(x, y).unwrap());
            }
            super_tasks.push(tasks);
            thetas.push(DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0)));
            // diagonally dominant symmetric matrix, guaranteed PD
            let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-0.3..0.3));
            let omega = symmetrize(&raw) + DMatrix::identity(m, m) * 2.0;
            omegas.push(omega);
        }
        (
            HierarchicalDataset::new(super_tasks).unwrap(),
            WeightSet::new(thetas).unwrap(),
            PrecisionSet::new(omegas).unwrap(),
        )
    }

    #[test]
    fn objective_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (data, w, p) = random_instance(&mut rng, 2, 3, 2, 4);
        let h = Hyperparams::new(0.35, 0.2, 0.15).unwrap();
        let fast = hmtl_objective(&data, &w, &p, &h).unwrap();
        let slow = objective_by_loops(&data, &w, &p, &h);
        assert_relative_eq!(fast, slow, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn objective_invariant_under_subtask_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (data, w, p) = random_instance(&mut rng, 2, 4, 3, 5);
        let h = Hyperparams::new(0.5, 0.3, 0.2).unwrap();
        let base = hmtl_objective(&data, &w, &p, &h).unwrap();

        let perm = [2usize, 0, 3, 1];
        let permuted_tasks: Vec<Vec<SubTaskData<f64>>> = data
            .super_tasks()
            .iter()
            .map(|tasks| perm.iter().map(|&k| tasks[k].clone()).collect())
            .collect();
        let permuted_thetas: Vec<DMatrix<f64>> = w
            .thetas()
            .iter()
            .map(|theta| {
                DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| theta[(i, perm[j])])
            })
            .collect();
        let permuted_omegas: Vec<DMatrix<f64>> = p
            .omegas()
            .iter()
            .map(|om| DMatrix::from_fn(om.nrows(), om.ncols(), |i, j| om[(perm[i], perm[j])]))
            .collect();

        let data2 = HierarchicalDataset::new(permuted_tasks).unwrap();
        let w2 = WeightSet::new(permuted_thetas).unwrap();
        let p2 = PrecisionSet::new(permuted_omegas).unwrap();
        let permuted = hmtl_objective(&data2, &w2, &p2, &h).unwrap();
        assert_relative_eq!(base, permuted, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn dataset_rejects_ragged_structure() {
        let task = |n: usize, d: usize| {
            SubTaskData::new(DMatrix::<f64>::zeros(n, d), DVector::zeros(n)).unwrap()
        };
        assert!(HierarchicalDataset::new(vec![vec![task(2, 2)], vec![]]).is_err());
        assert!(
            HierarchicalDataset::new(vec![vec![task(2, 2)], vec![task(2, 3)]]).is_err()
        );
        // per-sub-task n may differ
        assert!(
            HierarchicalDataset::new(vec![vec![task(2, 2), task(5, 2)]]).is_ok()
        );
    }

    #[test]
    fn precision_set_rejects_asymmetry_and_non_pd() {
        let asym = dmat(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(PrecisionSet::new(vec![asym]).is_err());
        let indef = dmat(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            PrecisionSet::new(vec![indef]),
            Err(Error::NotPositiveDefinite(_))
        ));
        let pd = dmat(2, 2, &[2.0, 0.5, 0.5, 2.0]);
        assert!(PrecisionSet::new(vec![pd]).is_ok());
    }

    #[test]
    fn hyperparams_reject_negative() {
        assert!(Hyperparams::new(-0.1, 0.0, 0.0).is_err());
        assert!(Hyperparams::new(0.0, f64::NAN, 0.0).is_err());
        assert!(Hyperparams::new(0.0, 0.0, 0.0).is_ok());
    }
}

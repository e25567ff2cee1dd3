//! Reference methods the joint fit is benchmarked against: equal-weight
//! averaging, single best ensemble member, independent least squares, and
//! least squares with lattice-Laplacian smoothing of the weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SubTaskData;
use crate::scalar::{real, Scalar};

/// Row-major lattice layout of sub-task locations: location `i` sits at
/// `(i / cols, i % cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("grid dimensions must be positive".into()));
        }
        Ok(Self { rows, cols })
    }

    pub fn num_locations(&self) -> usize {
        self.rows * self.cols
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

/// Independent per-sub-task least squares; rank-deficient designs get the
/// minimal-norm solution through the pseudo-inverse.
pub fn fit_ols<T: Scalar>(tasks: &[SubTaskData<T>]) -> Result<DMatrix<T>> {
    if tasks.is_empty() {
        return Err(Error::InvalidInput("no sub-tasks".into()));
    }
    let d = tasks[0].dim();
    let mut theta = DMatrix::zeros(d, tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        if task.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "sub-task {k} has dimension {}, expected {d}",
                task.dim()
            )));
        }
        let svd = task.x().clone().svd(true, true);
        let cutoff = pinv_cutoff(task.x(), &svd.singular_values);
        let sol = svd
            .solve(task.y(), cutoff)
            .map_err(|e| Error::InvalidInput(format!("least-squares solve failed: {e}")))?;
        theta.column_mut(k).copy_from(&sol);
    }
    Ok(theta)
}

fn pinv_cutoff<T: Scalar>(x: &DMatrix<T>, singular_values: &nalgebra::DVector<T>) -> T {
    let largest = singular_values
        .iter()
        .fold(T::zero(), |acc, s| acc.max(*s));
    let dim = real::<T>(x.nrows().max(x.ncols()) as f64);
    largest * dim * T::default_epsilon()
}

/// Equal-weight ensemble: the row mean of the member predictions.
pub fn predict_mma<T: Scalar>(x: &DMatrix<T>) -> DVector<T> {
    let d = real::<T>(x.ncols() as f64);
    DVector::from_fn(x.nrows(), |i, _| {
        let mut acc = T::zero();
        for j in 0..x.ncols() {
            acc += x[(i, j)];
        }
        acc / d
    })
}

/// Index of the single member with the smallest training mean squared error
/// against the observations; ties go to the lowest index.
pub fn select_best_esm<T: Scalar>(task: &SubTaskData<T>) -> usize {
    let mut best = 0;
    let mut best_mse = T::max_value().unwrap_or_else(T::one);
    for j in 0..task.dim() {
        let mut acc = T::zero();
        for i in 0..task.n() {
            let r = task.x()[(i, j)] - task.y()[i];
            acc += r * r;
        }
        if acc < best_mse {
            best_mse = acc;
            best = j;
        }
    }
    best
}

/// Combinatorial Laplacian `L = D - A` of the 4-neighborhood lattice; edge
/// nodes simply have fewer neighbors.
pub fn build_grid_laplacian<T: Scalar>(grid: &GridSpec) -> DMatrix<T> {
    let m = grid.num_locations();
    let mut l = DMatrix::zeros(m, m);
    for idx in 0..m {
        let (r, c) = grid.position(idx);
        let mut neighbors = Vec::with_capacity(4);
        if r > 0 {
            neighbors.push(grid.index(r - 1, c));
        }
        if r + 1 < grid.rows {
            neighbors.push(grid.index(r + 1, c));
        }
        if c > 0 {
            neighbors.push(grid.index(r, c - 1));
        }
        if c + 1 < grid.cols {
            neighbors.push(grid.index(r, c + 1));
        }
        l[(idx, idx)] = real::<T>(neighbors.len() as f64);
        for n in neighbors {
            l[(idx, n)] = -T::one();
        }
    }
    l
}

/// Spatially smoothed least squares: minimizes
/// `sum_k ||X_k theta_k - y_k||^2 + lambda tr(theta L theta^T)`.
///
/// The stacked normal equations over all `d * m` unknowns are solved densely
/// up to a size threshold and by Jacobi-preconditioned conjugate gradients
/// beyond it (relative residual `1e-8`).
pub fn fit_s2m2r<T: Scalar>(
    tasks: &[SubTaskData<T>],
    laplacian: &DMatrix<T>,
    lambda: T,
) -> Result<DMatrix<T>> {
    if !(lambda >= T::zero() && lambda.is_finite()) {
        return Err(Error::InvalidInput("lambda must be finite and nonnegative".into()));
    }
    if lambda == T::zero() {
        return fit_ols(tasks);
    }
    let m = tasks.len();
    if laplacian.nrows() != m || laplacian.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "laplacian is {}x{}, expected {m}x{m}",
            laplacian.nrows(),
            laplacian.ncols()
        )));
    }
    let d = tasks[0].dim();
    for (k, task) in tasks.iter().enumerate() {
        if task.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "sub-task {k} has dimension {}, expected {d}",
                task.dim()
            )));
        }
    }

    let gram: Vec<DMatrix<T>> = tasks
        .iter()
        .map(|task| task.x().transpose() * task.x())
        .collect();
    let mut rhs = DVector::zeros(d * m);
    for (k, task) in tasks.iter().enumerate() {
        let xty = task.x().transpose() * task.y();
        for i in 0..d {
            rhs[k * d + i] = xty[i];
        }
    }

    let unknowns = d * m;
    let sol = if unknowns <= 1024 {
        let mut a = DMatrix::zeros(unknowns, unknowns);
        for (k, g) in gram.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    a[(k * d + i, k * d + j)] = g[(i, j)];
                }
            }
        }
        for k in 0..m {
            for j in 0..m {
                let w = lambda * laplacian[(k, j)];
                if w != T::zero() {
                    for i in 0..d {
                        a[(k * d + i, j * d + i)] += w;
                    }
                }
            }
        }
        match a.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => {
                let svd = a.svd(true, true);
                let cutoff = svd
                    .singular_values
                    .iter()
                    .fold(T::zero(), |acc, s| acc.max(*s))
                    * real::<T>(unknowns as f64)
                    * T::default_epsilon();
                svd.solve(&rhs, cutoff)
                    .map_err(|e| Error::InvalidInput(format!("singular smoothing system: {e}")))?
            }
        }
    } else {
        conjugate_gradient(&gram, laplacian, lambda, &rhs, d, m)?
    };
    Ok(DMatrix::from_fn(d, m, |i, k| sol[k * d + i]))
}

/// Matrix-free CG on the stacked system; the operator applies the per-task
/// Gram blocks plus the Laplacian coupling without forming the dense matrix.
fn conjugate_gradient<T: Scalar>(
    gram: &[DMatrix<T>],
    laplacian: &DMatrix<T>,
    lambda: T,
    rhs: &DVector<T>,
    d: usize,
    m: usize,
) -> Result<DVector<T>> {
    let apply = |v: &DVector<T>| -> DVector<T> {
        let mut out = DVector::zeros(d * m);
        for (k, g) in gram.iter().enumerate() {
            let chunk = v.rows(k * d, d);
            let gv = g * chunk;
            for i in 0..d {
                out[k * d + i] = gv[i];
            }
        }
        for k in 0..m {
            for j in 0..m {
                let w = lambda * laplacian[(k, j)];
                if w != T::zero() {
                    for i in 0..d {
                        let add = w * v[j * d + i];
                        out[k * d + i] += add;
                    }
                }
            }
        }
        out
    };
    // Jacobi preconditioner from the operator diagonal
    let mut diag = DVector::zeros(d * m);
    for (k, g) in gram.iter().enumerate() {
        for i in 0..d {
            diag[k * d + i] = g[(i, i)] + lambda * laplacian[(k, k)];
        }
    }
    let precond = |v: &DVector<T>| -> DVector<T> {
        DVector::from_fn(d * m, |i, _| {
            if diag[i] > T::zero() {
                v[i] / diag[i]
            } else {
                v[i]
            }
        })
    };

    let tol = real::<T>(1e-8) * rhs.norm().max(T::one());
    let mut x = DVector::zeros(d * m);
    let mut r = rhs.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..10 * d * m {
        if r.norm() <= tol {
            break;
        }
        let ap = apply(&p);
        let denom = p.dot(&ap);
        if !(denom > T::zero()) {
            return Err(Error::InvalidInput(
                "smoothing system is not positive definite".into(),
            ));
        }
        let alpha = rz / denom;
        x += &p * alpha;
        r -= &ap * alpha;
        z = precond(&r);
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &z + &p * beta;
    }
    Ok(x)
}

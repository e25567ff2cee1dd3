//! Synthetic benchmark generator: per super-task precision matrices drawn
//! from a Wishart distribution around a group-structured scale matrix, task
//! weights drawn as a Gaussian Markov random field under each precision, and
//! regression data from the resulting linear models.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{symmetrize, HierarchicalDataset, PrecisionSet, SubTaskData, WeightSet};
use crate::scalar::{real, Scalar};

/// Ridge added to every Wishart draw. With fewer degrees of freedom than
/// sub-tasks the raw draw is rank deficient, which would make both the
/// log-determinant and the weight sampling undefined.
pub const WISHART_RIDGE: f64 = 0.01;

/// Generation settings. Defaults give 7 super-tasks of 15 sub-tasks, 50
/// ensemble members, 100 samples per sub-task, 10 Wishart degrees of
/// freedom, and 3 groups of related sub-tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub super_tasks: usize,
    pub sub_tasks: usize,
    pub dim: usize,
    pub samples: usize,
    pub dof: usize,
    pub groups: usize,
    pub within: f64,
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            super_tasks: 7,
            sub_tasks: 15,
            dim: 50,
            samples: 100,
            dof: 10,
            groups: 3,
            within: 0.7,
            noise_var: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("super_tasks", self.super_tasks),
            ("sub_tasks", self.sub_tasks),
            ("dim", self.dim),
            ("samples", self.samples),
            ("dof", self.dof),
            ("groups", self.groups),
        ] {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be at least 1")));
            }
        }
        if self.groups > self.sub_tasks {
            return Err(Error::InvalidInput(
                "more groups than sub-tasks".into(),
            ));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidInput(
                "noise_var must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Block scale matrix: unit diagonal (plus `jitter`), `within` inside each
/// group block, zero elsewhere. Group sizes split `m` as evenly as possible,
/// earlier groups taking the remainder. Positive definite for
/// `0 <= within < 1`.
pub fn make_group_scale_matrix<T: Scalar>(
    m: usize,
    groups: usize,
    within: T,
    jitter: T,
) -> Result<DMatrix<T>> {
    if m == 0 || groups == 0 || groups > m {
        return Err(Error::InvalidInput(
            "need 1 <= groups <= m sub-tasks".into(),
        ));
    }
    if !(within >= T::zero() && within < T::one()) {
        return Err(Error::InvalidInput(
            "within-group value must lie in [0, 1) to keep the scale matrix positive definite"
                .into(),
        ));
    }
    if !(jitter >= T::zero() && jitter.is_finite()) {
        return Err(Error::InvalidInput("jitter must be finite and nonnegative".into()));
    }
    let base = m / groups;
    let extra = m % groups;
    let mut group_of = Vec::with_capacity(m);
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        group_of.extend(std::iter::repeat(g).take(size));
    }
    let mut scale = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            scale[(i, j)] = if i == j {
                T::one() + jitter
            } else if group_of[i] == group_of[j] {
                within
            } else {
                T::zero()
            };
        }
    }
    Ok(scale)
}

fn standard_normal<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    real(z)
}

/// One Wishart draw `W = sum_{i<dof} g_i g_i^T` with `g_i ~ N(0, scale)`,
/// ridge-stabilized by [`WISHART_RIDGE`] on the diagonal. Symmetric positive
/// definite for any degrees of freedom.
pub fn sample_wishart<T: Scalar>(
    scale: &DMatrix<T>,
    dof: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<T>> {
    if dof == 0 {
        return Err(Error::InvalidInput("dof must be at least 1".into()));
    }
    let m = scale.nrows();
    if scale.ncols() != m {
        return Err(Error::DimensionMismatch("scale matrix must be square".into()));
    }
    let chol = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Wishart scale matrix".into()))?;
    let l = chol.l();
    let mut w = DMatrix::zeros(m, m);
    for _ in 0..dof {
        let z = DVector::from_fn(m, |_, _| standard_normal::<T>(rng));
        let g = &l * z;
        w += &g * g.transpose();
    }
    w += DMatrix::identity(m, m) * real::<T>(WISHART_RIDGE);
    Ok(symmetrize(&w))
}

/// Draws one zero-mean Gaussian vector whose *precision* is `chol`'s matrix:
/// solve `L^T x = z` for standard normal `z`.
fn gmrf_row<T: Scalar>(l_transpose: &DMatrix<T>, rng: &mut ChaCha8Rng) -> DVector<T> {
    let m = l_transpose.nrows();
    let z = DVector::from_fn(m, |_, _| standard_normal::<T>(rng));
    l_transpose
        .solve_upper_triangular(&z)
        .expect("Cholesky factor is invertible")
}

/// Generates the full benchmark: per super-task true precision, true
/// weights, designs, and noisy targets. Returns the dataset together with
/// the generating weights and precisions.
///
/// One seeded stream drives everything, consumed per super-task in index
/// order: precision draw, then weight rows, then per sub-task the design
/// (row-major) followed by the noise vector. Draws happen in `f64` before
/// embedding into `T`.
pub fn generate_hierarchical_dataset<T: Scalar>(
    spec: &SyntheticSpec,
) -> Result<(HierarchicalDataset<T>, WeightSet<T>, PrecisionSet<T>)> {
    spec.validate()?;
    let m = spec.sub_tasks;
    let d = spec.dim;
    let n = spec.samples;
    let scale = make_group_scale_matrix::<T>(m, spec.groups, real(spec.within), T::zero())?;
    let noise_sd = real::<T>(spec.noise_var.sqrt());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut super_tasks = Vec::with_capacity(spec.super_tasks);
    let mut thetas = Vec::with_capacity(spec.super_tasks);
    let mut omegas = Vec::with_capacity(spec.super_tasks);

    for _ in 0..spec.super_tasks {
        let omega = sample_wishart(&scale, spec.dof, &mut rng)?;
        let chol = omega
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("sampled precision".into()))?;
        let l_transpose = chol.l().transpose();

        let mut theta = DMatrix::zeros(d, m);
        for j in 0..d {
            let row = gmrf_row(&l_transpose, &mut rng);
            for k in 0..m {
                theta[(j, k)] = row[k];
            }
        }

        let mut tasks = Vec::with_capacity(m);
        for k in 0..m {
            let entries: Vec<T> = (0..n * d).map(|_| standard_normal(&mut rng)).collect();
            let x = DMatrix::from_row_slice(n, d, &entries);
            let noise = DVector::from_fn(n, |_, _| standard_normal::<T>(&mut rng) * noise_sd);
            let y = &x * theta.column(k) + noise;
            tasks.push(SubTaskData::new(x, y)?);
        }

        super_tasks.push(tasks);
        thetas.push(theta);
        omegas.push(omega);
    }

    Ok((
        HierarchicalDataset::new(super_tasks)?,
        WeightSet::new(thetas)?,
        PrecisionSet::new(omegas)?,
    ))
}

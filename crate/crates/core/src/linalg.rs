//! Dense real linear algebra shared by every other module.
//!
//! Vectors and matrices are plain `ndarray` arrays in double precision.
//! Diagonal activation matrices never appear here; they are kept as
//! multiplier sequences in [`crate::network::ActivationPattern`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vector = Array1<f64>;
pub type Matrix = Array2<f64>;

/// Seed used for power-iteration start vectors unless a caller supplies one.
pub const DEFAULT_EIG_SEED: u64 = 0x5eed_0f_e16;

/// Tolerance on `max |A - A^T|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Inf,
}

pub fn matvec(a: &Matrix, x: &Vector) -> Result<Vector> {
    if a.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "matvec",
            expected: a.ncols(),
            found: x.len(),
        });
    }
    Ok(a.dot(x))
}

pub fn norm(x: ArrayView1<'_, f64>, p: Norm) -> f64 {
    match p {
        Norm::L1 => x.iter().map(|v| v.abs()).sum(),
        Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        Norm::Inf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

pub fn norm2(x: &Vector) -> f64 {
    norm(x.view(), Norm::L2)
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest absolute asymmetry `max |A_ij - A_ji|`.
pub fn asymmetry(a: &Matrix) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "symmetric matrix",
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    Ok(worst)
}

/// A symmetric linear operator that can be applied without materializing it.
pub trait SymOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Vector) -> Vector;
}

impl SymOperator for Matrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.dot(x)
    }
}

/// Dominant eigenpair of a symmetric operator.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: Vector,
    pub iterations: usize,
    pub residual: f64,
}

/// Deterministic pseudo-random unit vector.
pub fn seeded_unit_vector(n: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vector = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = norm2(&v);
        if len > 1e-3 {
            return v / len;
        }
    }
}

/// Power iteration for the largest-magnitude eigenpair.
///
/// Stops once `||Av - λv|| <= tol * max(1, |λ|)`; running out of iterations
/// is reported as [`Error::NoConvergence`].
pub fn power_iteration<O: SymOperator + ?Sized>(op: &O, tol: f64, max_iter: usize, seed: u64) -> Result<EigPair> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("power iteration on an empty operator".into()));
    }
    let mut v = seeded_unit_vector(n, seed);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let av = op.apply(&v);
        if av.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("power iteration"));
        }
        let lambda = v.dot(&av);
        residual = norm2(&(&av - &(lambda * &v)));
        if residual <= tol * lambda.abs().max(1.0) {
            return Ok(EigPair {
                value: lambda,
                vector: v,
                iterations: it,
                residual,
            });
        }
        let len = norm2(&av);
        if len == 0.0 {
            // v spans the null space; λ = 0 with zero residual was handled above
            break;
        }
        v = av / len;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Top eigenpair of a dense symmetric matrix (symmetry checked to 1e-10).
pub fn top_eigpair_sym(a: &Matrix, tol: f64, max_iter: usize) -> Result<EigPair> {
    let residual = asymmetry(a)?;
    if residual > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { residual });
    }
    power_iteration(a, tol, max_iter, DEFAULT_EIG_SEED)
}

/// Elementwise sign with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn all_finite(xs: impl IntoIterator<Item = f64>) -> bool {
    xs.into_iter().all(f64::is_finite)
}

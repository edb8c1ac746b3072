//! Softmax cross-entropy and the closed-form input derivatives of a
//! piecewise-linear classifier restricted to its local linear map.
//!
//! Binary convention: class index 0 is the positive class (`y = +1`,
//! column `v₊`), class index 1 the negative class (`y = -1`, column `v₋`).

use ndarray::{Array1, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius, norm, norm2, EigPair, Matrix, Norm, SymOperator, Vector};
use crate::network::LocalLinearMap;

/// Above this input dimension the Hessian is only used in factored form.
pub const MAX_MATERIALIZED_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub logits: Vector,
    pub probs: Vector,
    pub label: usize,
    /// Cross-entropy `-log p_y`.
    pub loss: f64,
    /// `log K - loss`; non-negative iff `p_y >= 1/K`.
    pub slack: f64,
}

impl PredictionRecord {
    pub fn p_y(&self) -> f64 {
        self.probs[self.label]
    }

    pub fn num_classes(&self) -> usize {
        self.logits.len()
    }

    pub fn predicted(&self) -> usize {
        crate::network::argmax(self.logits.view())
    }
}

/// Max-subtracted log-softmax of one row of logits.
pub fn log_softmax_row(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z.mapv(|v| v - lse)
}

pub fn softmax_ce(z: &Vector, y: usize) -> Result<PredictionRecord> {
    if !linalg::all_finite(z.iter().copied()) {
        return Err(Error::NonFinite("logits"));
    }
    let k = z.len();
    if y >= k {
        return Err(Error::InvalidArgument(format!("label {y} >= K = {k}")));
    }
    let logp = log_softmax_row(z.view());
    let loss = -logp[y];
    Ok(PredictionRecord {
        logits: z.clone(),
        probs: logp.mapv(f64::exp),
        label: y,
        loss,
        slack: (k as f64).ln() - loss,
    })
}

/// `+1` for class 0, `-1` for class 1.
pub fn binary_sign(label: usize) -> f64 {
    if label == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Hessian of the loss w.r.t. the input, kept in factored form.
#[derive(Debug, Clone)]
pub enum FactoredHessian {
    /// `scale * w wᵀ`.
    Binary { scale: f64, direction: Vector },
    /// `V M Vᵀ` with `M = diag(p) - p pᵀ`.
    MultiClass { v: Matrix, m: Matrix },
}

impl FactoredHessian {
    pub fn dim(&self) -> usize {
        match self {
            FactoredHessian::Binary { direction, .. } => direction.len(),
            FactoredHessian::MultiClass { v, .. } => v.nrows(),
        }
    }

    pub fn materialize(&self) -> Result<Matrix> {
        let n = self.dim();
        if n > MAX_MATERIALIZED_DIM {
            return Err(Error::InvalidArgument(format!("refusing to materialize a {n}x{n} Hessian")));
        }
        Ok(match self {
            FactoredHessian::Binary { scale, direction } => {
                let col = direction.view().insert_axis(Axis(1));
                col.dot(&col.t()) * *scale
            }
            FactoredHessian::MultiClass { v, m } => v.dot(m).dot(&v.t()),
        })
    }

    /// Spectral norm and its eigenvector: closed form for the binary rank-one
    /// case, factored power iteration otherwise.
    pub fn top_eigpair(&self, tol: f64, max_iter: usize) -> Result<EigPair> {
        match self {
            FactoredHessian::Binary { scale, direction } => {
                let len = norm2(direction);
                let vector = if len > 0.0 {
                    direction / len
                } else {
                    linalg::seeded_unit_vector(direction.len(), linalg::DEFAULT_EIG_SEED)
                };
                Ok(EigPair {
                    value: scale * len * len,
                    vector,
                    iterations: 0,
                    residual: 0.0,
                })
            }
            FactoredHessian::MultiClass { .. } => linalg::power_iteration(self, tol, max_iter, linalg::DEFAULT_EIG_SEED),
        }
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(self.top_eigpair(1e-12, 200_000)?.value)
    }
}

impl SymOperator for FactoredHessian {
    fn dim(&self) -> usize {
        FactoredHessian::dim(self)
    }

    fn apply(&self, x: &Vector) -> Vector {
        match self {
            FactoredHessian::Binary { scale, direction } => direction * (scale * direction.dot(x)),
            FactoredHessian::MultiClass { v, m } => v.dot(&m.dot(&v.t().dot(x))),
        }
    }
}

/// Jacobian, input gradient and Hessian of the loss at one sample.
#[derive(Debug, Clone)]
pub struct InputDerivatives {
    pub jacobian: Matrix,
    pub gradient: Vector,
    pub hessian: FactoredHessian,
}

fn check_record(map: &LocalLinearMap, rec: &PredictionRecord) -> Result<()> {
    if map.num_classes() != rec.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "local map classes vs prediction",
            expected: map.num_classes(),
            found: rec.num_classes(),
        });
    }
    Ok(())
}

/// `v₊ - v₋`.
pub fn column_difference(map: &LocalLinearMap) -> Result<Vector> {
    if map.num_classes() != 2 {
        return Err(Error::NotBinary(map.num_classes()));
    }
    Ok(&map.column(0) - &map.column(1))
}

/// Binary closed forms: `J = V`, `∇ = y (p_y - 1)(v₊ - v₋)`,
/// `H = p_y (1 - p_y)(v₊ - v₋)(v₊ - v₋)ᵀ`.
pub fn binary_forms(map: &LocalLinearMap, rec: &PredictionRecord) -> Result<InputDerivatives> {
    check_record(map, rec)?;
    let w = column_difference(map)?;
    let p = rec.p_y();
    let gradient = &w * (binary_sign(rec.label) * (p - 1.0));
    Ok(InputDerivatives {
        jacobian: map.v.clone(),
        gradient,
        hessian: FactoredHessian::Binary {
            scale: p * (1.0 - p),
            direction: w,
        },
    })
}

/// `diag(p) - p pᵀ`.
pub fn softmax_covariance(p: &Vector) -> Matrix {
    let col = p.view().insert_axis(Axis(1));
    Matrix::from_diag(p) - col.dot(&col.t())
}

/// Multi-class closed forms: `∇ = V(p - y)`, `H = V(diag(p) - p pᵀ)Vᵀ`.
pub fn multiclass_forms(map: &LocalLinearMap, rec: &PredictionRecord) -> Result<InputDerivatives> {
    check_record(map, rec)?;
    let mut residual = rec.probs.clone();
    residual[rec.label] -= 1.0;
    Ok(InputDerivatives {
        jacobian: map.v.clone(),
        gradient: map.v.dot(&residual),
        hessian: FactoredHessian::MultiClass {
            v: map.v.clone(),
            m: softmax_covariance(&rec.probs),
        },
    })
}

/// Dispatches to the binary or multi-class closed forms.
pub fn input_derivatives(map: &LocalLinearMap, rec: &PredictionRecord) -> Result<InputDerivatives> {
    if map.num_classes() == 2 {
        binary_forms(map, rec)
    } else {
        multiclass_forms(map, rec)
    }
}

/// `Σ_{i≠j} ‖v_i - v_j‖² / K²` over ordered pairs.
pub fn cross_lipschitz_sq_multiclass(map: &LocalLinearMap) -> f64 {
    let k = map.num_classes();
    // Σ_{i≠j} ‖v_i - v_j‖² = 2K Σ‖v_i‖² - 2‖Σ v_i‖²; evaluated pairwise for accuracy
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = &map.column(i) - &map.column(j);
            total += 2.0 * d.dot(&d);
        }
    }
    total / (k * k) as f64
}

/// Local cross-Lipschitz constant ν: `‖v₊ - v₋‖` for K = 2, the square
/// root of the ordered-pair average otherwise.
pub fn cross_lipschitz(map: &LocalLinearMap) -> f64 {
    if map.num_classes() == 2 {
        norm2(&(&map.column(0) - &map.column(1)))
    } else {
        cross_lipschitz_sq_multiclass(map).sqrt()
    }
}

/// Local Lipschitz constant μ = ‖V‖_F.
pub fn lipschitz(map: &LocalLinearMap) -> f64 {
    frobenius(map.v.view())
}

/// `(‖v₊ - v₋‖₁, ‖v₊ - v₋‖₂)`.
pub fn w_norms(map: &LocalLinearMap) -> Result<(f64, f64)> {
    let w = column_difference(map)?;
    Ok((norm(w.view(), Norm::L1), norm(w.view(), Norm::L2)))
}

/// The multi-class chain `‖∇‖/2 ≤ ‖H‖₂ ≤ ‖V‖_F/2`, reported but not enforced
/// (it mixes first and second powers of V).
#[derive(Debug, Clone, Copy)]
pub struct ChainDiagnostic {
    pub half_gradient_norm: f64,
    pub hessian_norm: f64,
    pub half_frobenius: f64,
}

impl ChainDiagnostic {
    pub fn holds(&self) -> bool {
        self.half_gradient_norm <= self.hessian_norm && self.hessian_norm <= self.half_frobenius
    }
}

pub fn multiclass_chain_diagnostic(map: &LocalLinearMap, rec: &PredictionRecord) -> Result<ChainDiagnostic> {
    let forms = multiclass_forms(map, rec)?;
    Ok(ChainDiagnostic {
        half_gradient_norm: norm2(&forms.gradient) / 2.0,
        hessian_norm: forms.hessian.spectral_norm()?,
        half_frobenius: lipschitz(map) / 2.0,
    })
}

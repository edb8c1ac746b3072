//! Robustness regularizers on the local linear map and their weight gradients.
//!
//! Every supported regularizer has the form `λ φ(p_y) ‖V U‖_F²`:
//!
//! | kind              | `U`                              | `φ(p)`       |
//! |-------------------|----------------------------------|--------------|
//! | `jacobian`        | `I_K`                            | `1`          |
//! | `cross-lipschitz` | `e₀ - e₁` (K = 2)                | `1/2`        |
//! | `cross-lipschitz` | `√(2/K)(I - 𝟙𝟙ᵀ/K)` (K > 2)       | `1/2`        |
//! | `input-gradient`  | `e₀ - e₁`                        | `(1 - p)²`   |
//! | `curvature`       | `e₀ - e₁`                        | `p(1 - p)`   |
//!
//! so training only needs `V U` (a frozen-pattern backward pass) and the
//! derivative of `φ`. Batch values are per-sample means.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytic::{self, FactoredHessian, PredictionRecord};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::network::{Gradients, LocalLinearMap, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegKind {
    None,
    Jacobian,
    InputGradient,
    Curvature,
    CrossLipschitz,
}

impl RegKind {
    pub const ALL: [RegKind; 5] = [
        RegKind::None,
        RegKind::Jacobian,
        RegKind::InputGradient,
        RegKind::Curvature,
        RegKind::CrossLipschitz,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegKind::None => "none",
            RegKind::Jacobian => "jacobian",
            RegKind::InputGradient => "input-gradient",
            RegKind::Curvature => "curvature",
            RegKind::CrossLipschitz => "cross-lipschitz",
        }
    }

    /// Whether the kind can be used as a training objective with `k` classes.
    pub fn supports(&self, k: usize) -> bool {
        match self {
            RegKind::InputGradient | RegKind::Curvature => k == 2,
            _ => true,
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown regularizer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    pub lambda: f64,
}

impl RegularizerSpec {
    pub fn new(kind: RegKind, lambda: f64) -> Result<Self> {
        let spec = Self { kind, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn none() -> Self {
        Self {
            kind: RegKind::None,
            lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `λ φ(p_y) ‖V U‖_F²` in matrix form.
#[derive(Debug, Clone)]
pub struct PenaltyForm {
    pub kind: RegKind,
    /// `K x r`.
    pub u: Matrix,
    pub lambda: f64,
}

impl PenaltyForm {
    /// `(φ(p_y), φ'(p_y))`.
    pub fn confidence_weight(&self, p: f64) -> (f64, f64) {
        match self.kind {
            RegKind::InputGradient => ((1.0 - p) * (1.0 - p), -2.0 * (1.0 - p)),
            RegKind::Curvature => (p * (1.0 - p), 1.0 - 2.0 * p),
            RegKind::CrossLipschitz => (0.5, 0.0),
            RegKind::Jacobian | RegKind::None => (1.0, 0.0),
        }
    }

    /// `Σ_k ‖V u_k‖²` for a local linear map.
    pub fn quadratic(&self, map: &LocalLinearMap) -> f64 {
        map.v.dot(&self.u).iter().map(|v| v * v).sum()
    }
}

fn binary_difference() -> Matrix {
    Matrix::from_shape_vec((2, 1), vec![1.0, -1.0]).expect("2x1")
}

/// Matrix form of a regularizer for `k` classes; `None` for the empty kind.
pub fn penalty_form(spec: &RegularizerSpec, k: usize) -> Result<Option<PenaltyForm>> {
    spec.validate()?;
    if !spec.kind.supports(k) {
        return Err(Error::UnsupportedRegularizer {
            kind: spec.kind.as_str(),
            classes: k,
        });
    }
    let u = match spec.kind {
        RegKind::None => return Ok(None),
        RegKind::Jacobian => Matrix::eye(k),
        RegKind::InputGradient | RegKind::Curvature => binary_difference(),
        RegKind::CrossLipschitz if k == 2 => binary_difference(),
        RegKind::CrossLipschitz => {
            let kf = k as f64;
            let centering = Matrix::eye(k) - Matrix::from_elem((k, k), 1.0 / kf);
            centering * (2.0 / kf).sqrt()
        }
    };
    Ok(Some(PenaltyForm {
        kind: spec.kind,
        u,
        lambda: spec.lambda,
    }))
}

/// Regularizer value at one sample from its local map and prediction.
pub fn reg_value(spec: &RegularizerSpec, map: &LocalLinearMap, rec: &PredictionRecord) -> Result<f64> {
    let k = map.num_classes();
    match penalty_form(spec, k)? {
        None => Ok(0.0),
        Some(form) => Ok(form.lambda * form.confidence_weight(rec.p_y()).0 * form.quadratic(map)),
    }
}

/// Gradient of the regularizer alone w.r.t. every weight, activation
/// patterns held fixed.
pub fn reg_weight_gradient(spec: &RegularizerSpec, net: &Network, x: &Vector, y: usize) -> Result<Gradients> {
    let xb = x.view().insert_axis(ndarray::Axis(0));
    let (g, _) = net.batch_gradients(xb, &[y], 0.0, Some(spec))?;
    Ok(g)
}

/// `‖H‖₂` of the multi-class loss Hessian by factored power iteration.
/// Diagnostic only; never part of a training objective.
pub fn curvature_estimate_mc(map: &LocalLinearMap, rec: &PredictionRecord) -> Result<f64> {
    let h = FactoredHessian::MultiClass {
        v: map.v.clone(),
        m: analytic::softmax_covariance(&rec.probs),
    };
    h.spectral_norm()
}

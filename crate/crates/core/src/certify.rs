//! Robustness certificates on the second-order Taylor model of the loss.
//!
//! A certificate answers: how large must `r` be before
//! `L + ∇ᵀr + ½ rᵀHr` can reach `log K`? The radii are about that quadratic
//! model, not about the exact decision boundary, and are reported next to
//! (never in place of) empirical attack norms.

use std::io::Write;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{self, FactoredHessian, PredictionRecord};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Vector};
use crate::network::Network;

/// Above this value of `t` the radius uses its large-`t` asymptote.
pub const SERIES_SWITCH: f64 = 1e8;

/// `√(1 + t) - 1` without cancellation for small `t`.
pub fn sqrt1pm1(t: f64) -> f64 {
    t / ((1.0 + t).sqrt() + 1.0)
}

/// Smallest `ρ ≥ 0` with `g ρ + h ρ² / 2 = ξ`, i.e. `(g/h)(√(1 + 2hξ/g²) - 1)`.
///
/// Handles the limits `g → 0` (`√(2ξ/h)`) and `h → 0` (`ξ/g`); both zero with
/// positive slack gives `+∞` (the model never reaches the threshold).
pub fn quadratic_radius(g: f64, h: f64, xi: f64) -> Result<f64> {
    if !(g.is_finite() && h.is_finite() && xi.is_finite()) {
        return Err(Error::NonFinite("certificate ingredients"));
    }
    if xi < 0.0 {
        return Err(Error::Misclassified { slack: xi });
    }
    if g < 0.0 || h < 0.0 {
        return Err(Error::InvalidArgument(format!("negative slope {g} or curvature {h}")));
    }
    if xi == 0.0 {
        return Ok(0.0);
    }
    if h == 0.0 {
        // a locally constant model never reaches the threshold
        return Ok(if g == 0.0 { f64::INFINITY } else { xi / g });
    }
    if g == 0.0 {
        return Ok((2.0 * xi / h).sqrt());
    }
    let t = 2.0 * h * xi / (g * g);
    if t > SERIES_SWITCH {
        // √(2ξ/h) - g/h + g²/(2h√(2hξ)) + O(t^{-3/2})
        let s = (2.0 * xi / h).sqrt();
        return Ok(s - g / h + g * g / (2.0 * h * (2.0 * h * xi).sqrt()));
    }
    Ok((g / h) * sqrt1pm1(t))
}

/// Lower and upper bounds on the minimal l2 perturbation of the quadratic model.
///
/// `lower` uses `‖∇‖₂`, `upper` uses `|∇ᵀu|` with `u` the top eigenvector of `H`.
pub fn lemma1_bounds(grad: &Vector, hessian: &FactoredHessian, xi: f64) -> Result<(f64, f64)> {
    if xi < 0.0 {
        return Err(Error::Misclassified { slack: xi });
    }
    if grad.len() != hessian.dim() {
        return Err(Error::DimensionMismatch {
            context: "gradient vs Hessian",
            expected: hessian.dim(),
            found: grad.len(),
        });
    }
    let top = hessian.top_eigpair(1e-12, 200_000)?;
    let h = top.value.max(0.0);
    let g = norm2(grad);
    let aligned = grad.dot(&top.vector).abs().min(g);
    let lower = quadratic_radius(g, h, xi)?;
    let upper = quadratic_radius(aligned, h, xi)?;
    Ok((lower, upper))
}

fn check_binary_probability(p: f64, q: f64) -> Result<()> {
    if !(p.is_finite() && q.is_finite()) || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    if p < 0.5 {
        return Err(Error::Misclassified { slack: 2f64.ln() + p.ln() });
    }
    if q <= 0.0 {
        return Err(Error::Degenerate("p_y == 1"));
    }
    Ok(())
}

/// Binary radius with `1 - p` supplied separately so confident predictions
/// keep their precision.
pub fn binary_radius(p: f64, q: f64, scale: f64, xi: f64) -> Result<f64> {
    check_binary_probability(p, q)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    if scale < 0.0 || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite and >= 0, got {scale}")));
    }
    // (1/(p s)) (√(1 + 2pξ/q) - 1)
    quadratic_radius(q * scale, p * q * scale * scale, xi.max(0.0))
}

/// Minimal l2 perturbation of the binary quadratic model.
pub fn r2_analytic(p_y: f64, nu: f64, xi: f64) -> Result<f64> {
    binary_radius(p_y, 1.0 - p_y, nu, xi)
}

/// Minimal l∞ perturbation of the binary quadratic model.
pub fn rinf_analytic(p_y: f64, w_l1: f64, xi: f64) -> Result<f64> {
    binary_radius(p_y, 1.0 - p_y, w_l1, xi)
}

/// Worst-case quadratic-model loss over `‖r‖∞ ≤ ε`.
pub fn worst_case_loss(loss: f64, eps: f64, p_y: f64, w_l1: f64) -> Result<f64> {
    worst_case_loss_q(loss, eps, p_y, 1.0 - p_y, w_l1)
}

fn worst_case_loss_q(loss: f64, eps: f64, p: f64, q: f64, w_l1: f64) -> Result<f64> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {eps}")));
    }
    Ok(loss + eps * q * w_l1 + 0.5 * eps * eps * p * q * w_l1 * w_l1)
}

/// Multi-class lower bounds on the minimal l2 perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McBounds {
    /// From the quadratic model with the ν-based Hessian bound.
    pub nu_bound: f64,
    /// From the quadratic model with the μ-based Hessian bound.
    pub mu_bound: f64,
}

impl McBounds {
    pub fn best(&self) -> f64 {
        self.nu_bound.max(self.mu_bound)
    }
}

pub fn mc_lower_bounds(p_y: f64, nu: f64, mu: f64, xi: f64, k: usize) -> Result<McBounds> {
    mc_lower_bounds_q(p_y, 1.0 - p_y, nu, mu, xi, k)
}

/// Both bounds are the quadratic radius with slope `2(1 - p)μ` and curvature
/// `p(1 - p)K(K - 1)ν²/2` or `2p(1 - p)μ²`.
pub fn mc_lower_bounds_q(p: f64, q: f64, nu: f64, mu: f64, xi: f64, k: usize) -> Result<McBounds> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {k}")));
    }
    if xi < 0.0 {
        return Err(Error::Misclassified { slack: xi });
    }
    if !(0.0..=1.0).contains(&p) || q <= 0.0 {
        return Err(Error::Degenerate("p_y outside (0, 1)"));
    }
    let kf = k as f64;
    let g = 2.0 * q * mu;
    let nu_bound = quadratic_radius(g, p * q * kf * (kf - 1.0) * nu * nu / 2.0, xi)?;
    let mu_bound = quadratic_radius(g, 2.0 * p * q * mu * mu, xi)?;
    Ok(McBounds { nu_bound, mu_bound })
}

/// All certificate quantities for one correctly classified sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessCertificate {
    pub k: usize,
    pub p_y: f64,
    pub loss: f64,
    pub xi: f64,
    pub nu: f64,
    pub mu: f64,
    pub w_l1: Option<f64>,
    pub r2_analytic: Option<f64>,
    pub rinf_analytic: Option<f64>,
    pub epsilon: f64,
    pub eta_star: Option<f64>,
    pub lemma1_lower: f64,
    pub lemma1_upper: f64,
    pub mc: McBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certification {
    Certified(RobustnessCertificate),
    /// The sample is misclassified; no certificate exists.
    Uncertifiable {
        k: usize,
        p_y: f64,
        loss: f64,
        xi: f64,
        predicted: usize,
    },
}

impl Certification {
    pub fn certificate(&self) -> Option<&RobustnessCertificate> {
        match self {
            Certification::Certified(c) => Some(c),
            Certification::Uncertifiable { .. } => None,
        }
    }
}

fn complement(rec: &PredictionRecord) -> f64 {
    rec.probs.iter().enumerate().filter(|&(k, _)| k != rec.label).map(|(_, p)| p).sum()
}

pub fn certify(net: &Network, x: &Vector, y: usize, eps: f64) -> Result<Certification> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {eps}")));
    }
    let map = net.local_linear_map(x)?;
    let rec = analytic::softmax_ce(&map.evaluate(x), y)?;
    let k = rec.num_classes();
    let predicted = rec.predicted();
    if predicted != y {
        return Ok(Certification::Uncertifiable {
            k,
            p_y: rec.p_y(),
            loss: rec.loss,
            xi: rec.slack,
            predicted,
        });
    }
    // argmax implies p_y >= 1/K; clamp rounding noise
    let xi = rec.slack.max(0.0);
    let p = rec.p_y();
    let q = complement(&rec);
    let nu = analytic::cross_lipschitz(&map);
    let mu = analytic::lipschitz(&map);
    let forms = analytic::input_derivatives(&map, &rec)?;
    let (lemma1_lower, lemma1_upper) = lemma1_bounds(&forms.gradient, &forms.hessian, xi)?;
    let mc = mc_lower_bounds_q(p, q, nu, mu, xi, k)?;
    let (w_l1, r2, rinf, eta) = if k == 2 {
        let (l1, l2) = analytic::w_norms(&map)?;
        (
            Some(l1),
            Some(binary_radius(p, q, l2, xi)?),
            Some(binary_radius(p, q, l1, xi)?),
            Some(worst_case_loss_q(rec.loss, eps, p, q, l1)?),
        )
    } else {
        (None, None, None, None)
    };
    Ok(Certification::Certified(RobustnessCertificate {
        k,
        p_y: p,
        loss: rec.loss,
        xi,
        nu,
        mu,
        w_l1,
        r2_analytic: r2,
        rinf_analytic: rinf,
        epsilon: eps,
        eta_star: eta,
        lemma1_lower,
        lemma1_upper,
        mc,
    }))
}

/// Certifies every row of `x`; output order follows the input.
pub fn certify_batch(net: &Network, x: ArrayView2<'_, f64>, y: &[usize], eps: f64) -> Result<Vec<Certification>> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "certify inputs vs labels",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    (0..y.len())
        .into_par_iter()
        .map(|i| certify(net, &x.row(i).to_owned(), y[i], eps))
        .collect()
}

/// One line of the certificates CSV.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateRow {
    pub sample_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub p_y: Option<f64>,
    pub xi: Option<f64>,
    pub nu: Option<f64>,
    pub mu: Option<f64>,
    pub w_l1: Option<f64>,
    pub r2_analytic: Option<f64>,
    pub rinf_analytic: Option<f64>,
    pub eta_star: Option<f64>,
    pub lemma1_lo: Option<f64>,
    pub lemma1_hi: Option<f64>,
    pub eq16: Option<f64>,
    pub eq17: Option<f64>,
    pub loss: Option<f64>,
    pub epsilon: Option<f64>,
    pub status: String,
}

pub const CERTIFICATE_SCHEMA: &str = "rrl-certificates";

pub const CERTIFICATE_HEADER: [&str; 17] = [
    "sample_id",
    "K",
    "p_y",
    "xi",
    "nu",
    "mu",
    "w_l1",
    "r2_analytic",
    "rinf_analytic",
    "eta_star",
    "lemma1_lo",
    "lemma1_hi",
    "eq16",
    "eq17",
    "loss",
    "epsilon",
    "status",
];

impl CertificateRow {
    pub fn from_certification(sample_id: usize, c: &Certification, eps: f64) -> Self {
        match c {
            Certification::Certified(c) => Self {
                sample_id: sample_id.to_string(),
                k: c.k,
                p_y: Some(c.p_y),
                xi: Some(c.xi),
                nu: Some(c.nu),
                mu: Some(c.mu),
                w_l1: c.w_l1,
                r2_analytic: c.r2_analytic,
                rinf_analytic: c.rinf_analytic,
                eta_star: c.eta_star,
                lemma1_lo: Some(c.lemma1_lower),
                lemma1_hi: Some(c.lemma1_upper),
                eq16: Some(c.mc.nu_bound),
                eq17: Some(c.mc.mu_bound),
                loss: Some(c.loss),
                epsilon: Some(c.epsilon),
                status: "certified".into(),
            },
            Certification::Uncertifiable { k, p_y, loss, xi, .. } => Self {
                sample_id: sample_id.to_string(),
                k: *k,
                p_y: Some(*p_y),
                xi: Some(*xi),
                nu: None,
                mu: None,
                w_l1: None,
                r2_analytic: None,
                rinf_analytic: None,
                eta_star: None,
                lemma1_lo: None,
                lemma1_hi: None,
                eq16: None,
                eq17: None,
                loss: Some(*loss),
                epsilon: Some(eps),
                status: "uncertifiable".into(),
            },
        }
    }

    fn numeric(&self) -> [Option<f64>; 15] {
        [
            self.p_y,
            self.xi,
            self.nu,
            self.mu,
            self.w_l1,
            self.r2_analytic,
            self.rinf_analytic,
            self.eta_star,
            self.lemma1_lo,
            self.lemma1_hi,
            self.eq16,
            self.eq17,
            self.loss,
            self.epsilon,
            None,
        ]
    }
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

pub const SUMMARY_PERCENTILES: [(&str, f64); 5] = [("p05", 0.05), ("p25", 0.25), ("p50", 0.5), ("p75", 0.75), ("p95", 0.95)];

/// Column-wise percentiles over the certified rows.
pub fn summary_rows(rows: &[CertificateRow]) -> Vec<CertificateRow> {
    let certified: Vec<&CertificateRow> = rows.iter().filter(|r| r.status == "certified").collect();
    if certified.is_empty() {
        return Vec::new();
    }
    let columns: Vec<Vec<f64>> = (0..15)
        .map(|c| {
            let mut v: Vec<f64> = certified.iter().filter_map(|r| r.numeric()[c]).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    SUMMARY_PERCENTILES
        .iter()
        .map(|&(name, q)| {
            let at = |c: usize| {
                let col = &columns[c];
                (!col.is_empty()).then(|| percentile(col, q))
            };
            CertificateRow {
                sample_id: name.into(),
                k: certified[0].k,
                p_y: at(0),
                xi: at(1),
                nu: at(2),
                mu: at(3),
                w_l1: at(4),
                r2_analytic: at(5),
                rinf_analytic: at(6),
                eta_star: at(7),
                lemma1_lo: at(8),
                lemma1_hi: at(9),
                eq16: at(10),
                eq17: at(11),
                loss: at(12),
                epsilon: at(13),
                status: "summary".into(),
            }
        })
        .collect()
}

/// Writes per-sample rows followed by percentile summary rows. An empty
/// input produces a header-only file.
pub fn write_certificates<W: Write>(rows: &[CertificateRow], out: W) -> Result<()> {
    let summary = summary_rows(rows);
    let all: Vec<&CertificateRow> = rows.iter().chain(summary.iter()).collect();
    crate::table::write_table(out, CERTIFICATE_SCHEMA, &CERTIFICATE_HEADER, &all)
}

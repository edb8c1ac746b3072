//! White-box evaluation attacks and batch robustness metrics.
//!
//! FGSM and PGD maximize the loss inside an l∞ ball; DeepFool and C&W
//! search for a small l2 perturbation that changes the decision. An attack
//! succeeds when the original label no longer wins strictly (ties count as
//! a flip). Samples that are already misclassified get `r = 0` and count as
//! successes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm, sign, Norm, Vector};
use crate::network::{argmax, strictly_classified, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    DeepFool,
    Cw,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::DeepFool, AttackKind::Cw];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::DeepFool => "deepfool",
            AttackKind::Cw => "cw",
        }
    }

    /// Loss maximizers within an l∞ budget (as opposed to norm minimizers).
    pub fn is_budgeted(&self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::Pgd)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown attack {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// l∞ budget for FGSM and PGD.
    pub epsilon: f64,
    /// PGD step; `None` means `ε / 10`.
    pub pgd_step: Option<f64>,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
    pub overshoot: f64,
    pub max_iter: usize,
    pub cw_c: f64,
    pub cw_steps: usize,
    pub cw_step_size: f64,
    /// Number of `c` values tried (doubling) before giving up.
    pub cw_c_doublings: usize,
    /// Clip `x + r` to `[0, 1]`.
    pub clip: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::DeepFool,
            epsilon: 0.1,
            pgd_step: None,
            pgd_steps: 40,
            pgd_restarts: 1,
            overshoot: 0.02,
            max_iter: 50,
            cw_c: 1.0,
            cw_steps: 200,
            cw_step_size: 0.01,
            cw_c_doublings: 5,
            clip: true,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn unclipped(mut self) -> Self {
        self.clip = false;
        self
    }

    pub fn pgd_alpha(&self) -> f64 {
        self.pgd_step.unwrap_or(self.epsilon / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.pgd_steps == 0 || self.pgd_restarts == 0 || self.cw_steps == 0 || self.max_iter == 0 {
            return Err(Error::Config("attack step counts must be >= 1".into()));
        }
        if self.cw_c_doublings == 0 {
            return Err(Error::Config("cw_c_doublings must be >= 1".into()));
        }
        if self.overshoot < 0.0 || self.cw_c < 0.0 || self.cw_step_size <= 0.0 || self.pgd_alpha() < 0.0 {
            return Err(Error::Config("negative attack hyperparameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub perturbation: Vector,
    pub l2: f64,
    pub linf: f64,
    pub success: bool,
    pub iterations: usize,
    /// The clean input was already misclassified.
    pub clean_misclassified: bool,
}

impl AttackResult {
    fn new(perturbation: Vector, success: bool, iterations: usize) -> Self {
        Self {
            l2: norm(perturbation.view(), Norm::L2),
            linf: norm(perturbation.view(), Norm::Inf),
            perturbation,
            success,
            iterations,
            clean_misclassified: false,
        }
    }

    fn already_wrong(n: usize) -> Self {
        Self {
            clean_misclassified: true,
            ..Self::new(Vector::zeros(n), true, 0)
        }
    }
}

fn clip_domain(x: &Vector, r: Vector, clip: bool) -> Vector {
    if !clip {
        return r;
    }
    let mut r = r;
    for (ri, &xi) in r.iter_mut().zip(x.iter()) {
        *ri = (xi + *ri).clamp(0.0, 1.0) - xi;
    }
    r
}

fn flipped(net: &Network, x: &Vector, r: &Vector, y: usize) -> Result<bool> {
    let z = net.logits(&(x + r))?;
    Ok(!strictly_classified(z.view(), y))
}

pub fn fgsm(net: &Network, x: &Vector, y: usize, eps: f64, clip: bool) -> Result<AttackResult> {
    let (_, grad, z) = net.loss_input_gradient(x, y)?;
    if argmax(z.view()) != y {
        return Ok(AttackResult::already_wrong(x.len()));
    }
    let r = clip_domain(x, grad.mapv(sign) * eps, clip);
    let success = flipped(net, x, &r, y)?;
    Ok(AttackResult::new(r, success, 1))
}

/// Projected sign-gradient ascent; returns the highest-loss iterate, with the
/// FGSM point always among the candidates.
pub fn pgd(net: &Network, x: &Vector, y: usize, cfg: &AttackConfig, sample_seed: u64) -> Result<AttackResult> {
    let eps = cfg.epsilon;
    let alpha = cfg.pgd_alpha();
    let (_, grad0, z0) = net.loss_input_gradient(x, y)?;
    if argmax(z0.view()) != y {
        return Ok(AttackResult::already_wrong(x.len()));
    }
    let project = |r: Vector| clip_domain(x, r.mapv(|v| v.clamp(-eps, eps)), cfg.clip);
    let loss_at = |r: &Vector| -> Result<f64> { Ok(net.loss_input_gradient(&(x + r), y)?.0) };

    let mut best_r = project(grad0.mapv(sign) * eps);
    let mut best_loss = loss_at(&best_r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ sample_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut iterations = 0;
    for restart in 0..cfg.pgd_restarts {
        let mut r = if restart == 0 {
            Vector::zeros(x.len())
        } else {
            project(Vector::from_iter((0..x.len()).map(|_| rng.random_range(-eps..=eps))))
        };
        for _ in 0..cfg.pgd_steps {
            let (_, g, _) = net.loss_input_gradient(&(x + &r), y)?;
            r = project(r + g.mapv(sign) * alpha);
            iterations += 1;
            let l = loss_at(&r)?;
            if l > best_loss {
                best_loss = l;
                best_r = r.clone();
            }
        }
    }
    let success = flipped(net, x, &best_r, y)?;
    Ok(AttackResult::new(best_r, success, iterations))
}

/// Iterative projection onto the nearest linearized decision boundary. Each
/// iterate and the returned perturbation are `(1 + overshoot) · r_tot`; with
/// clipping, steps only use pixels free to move in their direction.
pub fn deepfool(net: &Network, x: &Vector, max_iter: usize, overshoot: f64, clip: bool) -> Result<AttackResult> {
    let z0 = net.logits(x)?;
    let k0 = argmax(z0.view());
    let mut r_tot = Vector::zeros(x.len());
    let mut xt = x.clone();
    let mut iterations = 0;
    let mut reached = !strictly_classified(z0.view(), k0);
    while !reached && iterations < max_iter {
        let map = net.local_linear_map(&xt)?;
        let z = map.evaluate(&xt);
        let mut best: Option<(f64, Vector, f64)> = None;
        for k in 0..z.len() {
            if k == k0 {
                continue;
            }
            let mut w = &map.column(k) - &map.column(k0);
            if clip {
                // drop pixels pinned at a bound in the direction of travel
                for (wi, &xi) in w.iter_mut().zip(xt.iter()) {
                    if (xi >= 1.0 && *wi > 0.0) || (xi <= 0.0 && *wi < 0.0) {
                        *wi = 0.0;
                    }
                }
            }
            let wn = norm(w.view(), Norm::L2);
            if wn == 0.0 {
                continue;
            }
            let f = (z[k] - z[k0]).abs();
            let dist = f / wn;
            if best.as_ref().is_none_or(|b| dist < b.0) {
                best = Some((dist, w, f / (wn * wn)));
            }
        }
        let Some((_, w, scale)) = best else {
            break;
        };
        // keep the accumulated step feasible so the overshoot acts on free pixels
        r_tot = clip_domain(x, r_tot + w * scale, clip);
        iterations += 1;
        xt = x + &clip_domain(x, &r_tot * (1.0 + overshoot), clip);
        reached = !strictly_classified(net.logits(&xt)?.view(), k0);
    }
    let r = clip_domain(x, r_tot * (1.0 + overshoot), clip);
    let success = flipped(net, x, &r, k0)?;
    Ok(AttackResult::new(r, success, iterations))
}

/// Gradient descent on `‖r‖² + c · max(z_y - max_{k≠y} z_k, 0)`; the best
/// successful iterate by l2 is returned. On failure `c` is doubled, up to
/// `c_doublings` values in total.
pub fn cw_l2(net: &Network, x: &Vector, y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    let z0 = net.logits(x)?;
    if argmax(z0.view()) != y {
        return Ok(AttackResult::already_wrong(x.len()));
    }
    if cfg.cw_c == 0.0 {
        return Ok(AttackResult::new(Vector::zeros(x.len()), false, 0));
    }
    let mut iterations = 0;
    let mut c = cfg.cw_c;
    for _ in 0..cfg.cw_c_doublings {
        let mut r = Vector::zeros(x.len());
        let mut best: Option<Vector> = None;
        for _ in 0..cfg.cw_steps {
            iterations += 1;
            let mut runner = 0;
            let (fwd, gmargin) = net.input_vjp(&(x + &r), |z| {
                runner = (0..z.len())
                    .filter(|&k| k != y)
                    .max_by(|&a, &b| z[a].total_cmp(&z[b]))
                    .expect("K >= 2");
                let mut d = Vector::zeros(z.len());
                d[y] = 1.0;
                d[runner] = -1.0;
                d
            })?;
            let margin = fwd.logits[y] - fwd.logits[runner];
            if margin <= 0.0 {
                let better = best.as_ref().is_none_or(|b| norm(r.view(), Norm::L2) < norm(b.view(), Norm::L2));
                if better {
                    best = Some(r.clone());
                }
            }
            let mut step = &r * 2.0;
            if margin > 0.0 {
                step = step + gmargin * c;
            }
            r = clip_domain(x, r - step * cfg.cw_step_size, cfg.clip);
        }
        let z = net.logits(&(x + &r))?;
        if !strictly_classified(z.view(), y) {
            let better = best.as_ref().is_none_or(|b| norm(r.view(), Norm::L2) < norm(b.view(), Norm::L2));
            if better {
                best = Some(r);
            }
        }
        if let Some(b) = best {
            return Ok(AttackResult::new(b, true, iterations));
        }
        c *= 2.0;
    }
    Ok(AttackResult::new(Vector::zeros(x.len()), false, iterations))
}

/// Runs the configured attack on one sample.
pub fn run_attack(net: &Network, x: &Vector, y: usize, cfg: &AttackConfig, sample_seed: u64) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(net, x, y, cfg.epsilon, cfg.clip),
        AttackKind::Pgd => pgd(net, x, y, cfg, sample_seed),
        AttackKind::DeepFool => {
            let z = net.logits(x)?;
            if argmax(z.view()) != y {
                return Ok(AttackResult::already_wrong(x.len()));
            }
            deepfool(net, x, cfg.max_iter, cfg.overshoot, cfg.clip)
        }
        AttackKind::Cw => cw_l2(net, x, y, cfg),
    }
}

/// One sample's attack outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRow {
    pub sample_id: usize,
    pub label: usize,
    pub clean_correct: bool,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub l2: f64,
    pub linf: f64,
    pub success: bool,
    pub iterations: usize,
}

/// Aggregate robustness metrics over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub clean_acc: f64,
    /// Fraction of samples classified correctly and not flipped by the attack.
    pub robust_acc: f64,
    /// Over clean-correct samples whose attack succeeded; `None` if there are none.
    pub mean_min_l2: Option<f64>,
    pub median_min_l2: Option<f64>,
    pub n_samples: usize,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Aggregates per-sample rows.
pub fn aggregate(rows: &[SampleRow]) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let n = rows.len() as f64;
    let clean = rows.iter().filter(|r| r.clean_correct).count() as f64;
    let robust = rows.iter().filter(|r| r.clean_correct && !r.success).count() as f64;
    let norms: Vec<f64> = rows.iter().filter(|r| r.clean_correct && r.success).map(|r| r.l2).collect();
    let mean = (!norms.is_empty()).then(|| norms.iter().sum::<f64>() / norms.len() as f64);
    Ok(Metrics {
        clean_acc: clean / n,
        robust_acc: robust / n,
        mean_min_l2: mean,
        median_min_l2: median(&norms),
        n_samples: rows.len(),
    })
}

/// Attacks every sample (in parallel) and aggregates; rows follow sample order.
pub fn evaluate(net: &Network, data: &Dataset, cfg: &AttackConfig) -> Result<(Metrics, Vec<SampleRow>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let rows: Vec<SampleRow> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = data.sample(i);
            let res = run_attack(net, &x, y, cfg, i as u64)?;
            Ok(SampleRow {
                sample_id: i,
                label: y,
                clean_correct: !res.clean_misclassified,
                attack: cfg.kind,
                epsilon: cfg.epsilon,
                l2: res.l2,
                linf: res.linf,
                success: res.success,
                iterations: res.iterations,
            })
        })
        .collect::<Result<_>>()?;
    Ok((aggregate(&rows)?, rows))
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub model_id: String,
    pub seed: u64,
    pub reg_kind: String,
    pub lambda: f64,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub clean_acc: f64,
    pub robust_acc: f64,
    pub mean_min_l2: Option<f64>,
    pub median_min_l2: Option<f64>,
    pub n_samples: usize,
}

pub const METRICS_HEADER: [&str; 11] = [
    "model_id",
    "seed",
    "reg_kind",
    "lambda",
    "attack",
    "epsilon",
    "clean_acc",
    "robust_acc",
    "mean_min_l2",
    "median_min_l2",
    "n_samples",
];

pub const METRICS_SCHEMA: &str = "rrl-metrics";

pub const SAMPLES_SCHEMA: &str = "rrl-attack-samples";

pub const SAMPLES_HEADER: [&str; 9] = [
    "sample_id",
    "label",
    "clean_correct",
    "attack",
    "epsilon",
    "l2",
    "linf",
    "success",
    "iterations",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use ndarray::array;

    fn reference() -> Network {
        Network::new(vec![array![[1.0, -1.0], [0.0, 0.0]]], None, Activation::Relu).unwrap()
    }

    #[test]
    fn fgsm_reference() {
        let net = reference();
        let x = array![0.5, 0.0];
        let r = fgsm(&net, &x, 0, 0.0, false).unwrap();
        assert_eq!(r.perturbation, array![0.0, 0.0]);
        assert!(!r.success);
        let r = fgsm(&net, &x, 0, 0.1, false).unwrap();
        assert_eq!(r.perturbation, array![-0.1, 0.0]);
    }

    #[test]
    fn pgd_single_step_is_fgsm() {
        let net = reference();
        let x = array![0.5, 0.0];
        let cfg = AttackConfig {
            pgd_step: Some(0.2),
            pgd_steps: 1,
            ..AttackConfig::new(AttackKind::Pgd).with_epsilon(0.2).unclipped()
        };
        let p = pgd(&net, &x, 0, &cfg, 0).unwrap();
        let f = fgsm(&net, &x, 0, 0.2, false).unwrap();
        assert_eq!(p.perturbation, f.perturbation);
        let z = pgd(&net, &x, 0, &cfg.with_epsilon(0.0), 0).unwrap();
        assert_eq!(z.linf, 0.0);
    }

    #[test]
    fn deepfool_linear_exact() {
        let net = reference();
        let r = deepfool(&net, &array![0.5, 0.0], 50, 0.0, false).unwrap();
        assert!((r.l2 - 0.5).abs() < 1e-12);
        assert_eq!(r.iterations, 1);
        assert!(r.success);
    }

    #[test]
    fn misclassified_gets_zero() {
        let net = reference();
        let x = array![0.5, 0.0];
        for kind in AttackKind::ALL {
            let r = run_attack(&net, &x, 1, &AttackConfig::new(kind).unclipped(), 0).unwrap();
            assert!(r.success && r.clean_misclassified);
            assert_eq!(r.l2, 0.0);
        }
    }

    #[test]
    fn cw_zero_c_and_linear_case() {
        let net = reference();
        let x = array![0.5, 0.0];
        let cfg = AttackConfig {
            cw_c: 0.0,
            ..AttackConfig::new(AttackKind::Cw).unclipped()
        };
        let r = cw_l2(&net, &x, 0, &cfg).unwrap();
        assert_eq!(r.l2, 0.0);
        let cfg = AttackConfig {
            cw_c: 10.0,
            cw_step_size: 0.001,
            cw_steps: 2000,
            ..cfg
        };
        let r = cw_l2(&net, &x, 0, &cfg).unwrap();
        assert!(r.success);
        assert!((r.l2 - 0.5).abs() <= 0.05 * 0.5, "{}", r.l2);
    }

    #[test]
    fn aggregate_hand_average() {
        let row = |l2: f64, ok: bool, success: bool| SampleRow {
            sample_id: 0,
            label: 0,
            clean_correct: ok,
            attack: AttackKind::DeepFool,
            epsilon: 0.0,
            l2,
            linf: l2,
            success,
            iterations: 1,
        };
        let m = aggregate(&[row(0.2, true, true), row(0.6, true, true)]).unwrap();
        assert!((m.mean_min_l2.unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(m.median_min_l2, Some(0.4));
        let m = aggregate(&[row(0.0, false, true), row(0.3, true, false)]).unwrap();
        assert_eq!(m.clean_acc, 0.5);
        assert_eq!(m.robust_acc, 0.5);
        assert_eq!(m.mean_min_l2, None);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn kind_strings() {
        for k in AttackKind::ALL {
            assert_eq!(k.as_str().parse::<AttackKind>().unwrap(), k);
        }
        assert!(AttackConfig::new(AttackKind::Pgd).with_epsilon(-1.0).validate().is_err());
    }
}

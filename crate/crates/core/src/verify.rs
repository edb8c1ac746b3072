//! Self-contained oracle suite for the closed forms and certificates.
//!
//! Every fixture is generated from a seed, so the suite needs no external
//! data. A [`Mutation`] deliberately breaks one formula; the suite must then
//! report failures.

use std::io::Write;
use std::str::FromStr;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::analytic::{self, softmax_ce};
use crate::certify::{self, Certification};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix, Norm, Vector};
use crate::network::{Activation, LocalLinearMap, Network};
use crate::oracle::{
    self, dense_eig_sym, fd_gradient, fd_hessian, max_loss_box, min_pert_quadratic, rel_error_vec, OracleReport, FD_GRADIENT_STEP,
    FD_HESSIAN_STEP,
};

/// Deliberate formula errors used to check that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// `√(1 - 2pξ/q)` in place of `√(1 + 2pξ/q)` in the binary l2 radius.
    Eq8Sign,
    /// Negated binary input gradient.
    GradientSign,
}

impl FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq8-sign" => Ok(Mutation::Eq8Sign),
            "gradient-sign" => Ok(Mutation::GradientSign),
            other => Err(Error::Config(format!("unknown mutation '{other}'"))),
        }
    }
}

/// Environment variable read by the CLI to inject a [`Mutation`].
pub const MUTATION_ENV: &str = "RRL_VERIFY_MUTATION";

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Random networks per closed-form suite (binary and multi-class each).
    pub closed_form_nets: usize,
    pub certificate_fixtures: usize,
    pub prop5_fixtures: usize,
    pub prop5_binary_fixtures: usize,
    pub fuzz_fixtures: usize,
    pub restarts: usize,
    pub seed: u64,
    pub mutation: Option<Mutation>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            closed_form_nets: 60,
            certificate_fixtures: 50,
            prop5_fixtures: 1000,
            prop5_binary_fixtures: 200,
            fuzz_fixtures: 100_000,
            restarts: oracle::DEFAULT_RESTARTS,
            seed: 0,
            mutation: None,
        }
    }
}

pub const SUITES: [&str; 5] = ["lemma2", "lemma3", "binary-certificate", "prop5", "inequalities"];

/// Number of report rows a suite emits under `cfg`.
pub fn expected_rows(suite: &str, cfg: &VerifyConfig) -> Result<usize> {
    Ok(match suite {
        "lemma2" => 4 * cfg.closed_form_nets,
        "lemma3" => 2 * cfg.closed_form_nets,
        "binary-certificate" => 7 * cfg.certificate_fixtures,
        "prop5" => 2 * cfg.prop5_fixtures + cfg.prop5_binary_fixtures,
        "inequalities" => 5,
        other => return Err(Error::InvalidArgument(format!("unknown suite '{other}'"))),
    })
}

pub fn run_suite(suite: &str, cfg: &VerifyConfig) -> Result<Vec<OracleReport>> {
    match suite {
        "lemma2" => closed_form_suite(cfg, true),
        "lemma3" => closed_form_suite(cfg, false),
        "binary-certificate" => binary_certificate_suite(cfg),
        "prop5" => prop5_suite(cfg),
        "inequalities" => inequality_suite(cfg),
        other => Err(Error::InvalidArgument(format!("unknown suite '{other}'"))),
    }
}

pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<OracleReport>> {
    let mut rows = Vec::new();
    for suite in SUITES {
        rows.extend(run_suite(suite, cfg)?);
    }
    Ok(rows)
}

pub const ORACLE_REPORT_SCHEMA: &str = "rrl-oracle-report";

pub const ORACLE_REPORT_HEADER: [&str; 10] = [
    "suite",
    "quantity",
    "fixture",
    "analytic",
    "oracle",
    "rel_error",
    "tolerance",
    "pass",
    "boundary_margin",
    "step",
];

pub fn write_report<W: Write>(rows: &[OracleReport], out: W) -> Result<()> {
    crate::table::write_table(out, ORACLE_REPORT_SCHEMA, &ORACLE_REPORT_HEADER, rows)
}

fn fixture_rng(cfg: &VerifyConfig, suite: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ (suite << 48) ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random network with `widths`, He-scaled weights and small random biases.
pub fn random_network(rng: &mut ChaCha8Rng, widths: &[usize]) -> Result<Network> {
    let activation = if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Leaky {
            alpha: rng.random_range(0.01..0.3),
        }
    };
    let weights = widths
        .windows(2)
        .map(|w| {
            let std = (2.0 / w[0] as f64).sqrt();
            Matrix::from_shape_fn((w[0], w[1]), |_| std * normal(rng))
        })
        .collect();
    let biases = widths[1..]
        .iter()
        .map(|&m| Vector::from_iter((0..m).map(|_| 0.1 * normal(rng))))
        .collect();
    Network::new(weights, Some(biases), activation)
}

/// Lower bound on the l∞ distance from `x` to the nearest activation flip:
/// `min_u |pre_u| / ‖∇ₓ pre_u‖₁` over all hidden units.
pub fn pattern_radius_linf(net: &Network, x: &Vector) -> Result<f64> {
    let fwd = net.forward(x)?;
    let d = net.depth();
    let mut best = f64::INFINITY;
    // rows of `jac` are ∇ₓ of the current layer's preactivations
    let mut jac = net.weights()[0].t().to_owned();
    for j in 0..d - 1 {
        let pre = &fwd.preactivations[j];
        for (u, row) in jac.rows().into_iter().enumerate() {
            let l1: f64 = row.iter().map(|v| v.abs()).sum();
            if l1 > 0.0 {
                best = best.min(pre[u].abs() / l1);
            }
        }
        let mult = Array1::from_iter(pre.iter().map(|&p| net.activation().multiplier(p)));
        let scaled = &jac * &mult.insert_axis(ndarray::Axis(1));
        jac = net.weights()[j + 1].t().dot(&scaled);
    }
    Ok(best)
}

/// Draws inputs until the FD stencil `±2h` cannot change the pattern.
fn guarded_input(rng: &mut ChaCha8Rng, net: &Network, h: f64) -> Result<(Vector, f64)> {
    for _ in 0..1000 {
        let x = Vector::from_iter((0..net.input_dim()).map(|_| normal(rng)));
        let margin = net.boundary_margin(&x)?;
        if margin > 1e-3 && pattern_radius_linf(net, &x)? > 4.0 * h {
            return Ok((x, margin));
        }
    }
    Err(Error::Oracle("no input with a safe finite-difference stencil".into()))
}

fn ce_at(net: &Network, y: usize) -> impl Fn(&Vector) -> f64 + '_ {
    move |v: &Vector| {
        let z = net.logits(v).expect("finite input");
        -analytic::log_softmax_row(z.view())[y]
    }
}

fn closed_form_suite(cfg: &VerifyConfig, binary: bool) -> Result<Vec<OracleReport>> {
    let suite = if binary { "lemma2" } else { "lemma3" };
    let rows: Vec<Vec<OracleReport>> = (0..cfg.closed_form_nets)
        .into_par_iter()
        .map(|i| {
            let mut rng = fixture_rng(cfg, if binary { 1 } else { 2 }, i);
            let k = if binary {
                2
            } else if i % 2 == 0 {
                3
            } else {
                10
            };
            let layers = rng.random_range(2..=4);
            let mut widths = vec![rng.random_range(2..=12)];
            for _ in 0..layers - 1 {
                widths.push(rng.random_range(2..=64));
            }
            widths.push(k);
            let net = random_network(&mut rng, &widths)?;
            let (x, margin) = guarded_input(&mut rng, &net, FD_HESSIAN_STEP)?;
            let y = rng.random_range(0..k);
            let map = net.local_linear_map(&x)?;
            let rec = softmax_ce(&net.logits(&x)?, y)?;
            let forms = analytic::input_derivatives(&map, &rec)?;
            let mut grad = forms.gradient.clone();
            if binary && cfg.mutation == Some(Mutation::GradientSign) {
                grad = -grad;
            }
            let h = forms.hessian.materialize()?;
            let f = ce_at(&net, y);
            let g_fd = fd_gradient(&f, &x, FD_GRADIENT_STEP);
            let h_fd = fd_hessian(&f, &x, FD_HESSIAN_STEP);
            let g_err = rel_error_vec(&grad, &g_fd);
            let h_err = oracle::rel_error_mat(&h, &h_fd);
            let mut out = vec![
                OracleReport::with_error(suite, "gradient_vs_fd", i, norm2(&grad), norm2(&g_fd), g_err, 1e-4)
                    .guarded(margin, FD_GRADIENT_STEP),
                OracleReport::with_error(
                    suite,
                    "hessian_vs_fd",
                    i,
                    crate::linalg::frobenius(h.view()),
                    crate::linalg::frobenius(h_fd.view()),
                    h_err,
                    1e-3,
                )
                .guarded(margin, FD_HESSIAN_STEP),
            ];
            if binary {
                // independent paths: V(p - e_y) and a dense eigensolve of H
                let nu = analytic::cross_lipschitz(&map);
                let p = rec.p_y();
                let mc = analytic::multiclass_forms(&map, &rec)?;
                let top = dense_eig_sym(&mc.hessian.materialize()?)?.values[0];
                let g_norm = if cfg.mutation == Some(Mutation::GradientSign) {
                    norm2(&(&mc.gradient + &(&grad * 2.0)))
                } else {
                    norm2(&mc.gradient)
                };
                out.push(OracleReport::relative(
                    suite,
                    "gradient_norm_identity",
                    i,
                    g_norm,
                    (1.0 - p) * nu,
                    1e-10,
                ));
                out.push(OracleReport::relative(
                    suite,
                    "hessian_norm_identity",
                    i,
                    top,
                    p * (1.0 - p) * nu * nu,
                    1e-10,
                ));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Binary l2 radius with the optional sign mutation.
fn eq8(p: f64, q: f64, nu: f64, xi: f64, mutation: Option<Mutation>) -> Result<f64> {
    if mutation == Some(Mutation::Eq8Sign) {
        return Ok(((1.0 - 2.0 * p * xi / q).sqrt() - 1.0) / (p * nu));
    }
    certify::binary_radius(p, q, nu, xi)
}

fn binary_certificate_suite(cfg: &VerifyConfig) -> Result<Vec<OracleReport>> {
    let suite = "binary-certificate";
    let rows: Vec<Vec<OracleReport>> = (0..cfg.certificate_fixtures)
        .into_par_iter()
        .map(|i| {
            let mut rng = fixture_rng(cfg, 3, i);
            let n = rng.random_range(2..=oracle::MAX_VERTEX_DIM.min(10));
            let mut widths = vec![n];
            for _ in 0..rng.random_range(1..=3) {
                widths.push(rng.random_range(2..=32));
            }
            widths.push(2);
            let net = random_network(&mut rng, &widths)?;
            let (x, rec) = loop {
                let x = Vector::from_iter((0..n).map(|_| normal(&mut rng)));
                let z = net.logits(&x)?;
                let y = crate::network::argmax(z.view());
                let rec = softmax_ce(&z, y)?;
                if rec.p_y() > 0.5 + 1e-6 && rec.p_y() < 1.0 - 1e-9 {
                    break (x, rec);
                }
            };
            let y = rec.label;
            let eps = 0.05 * (1 + i % 4) as f64;
            let cert = match certify::certify(&net, &x, y, eps)? {
                Certification::Certified(c) => c,
                Certification::Uncertifiable { .. } => return Err(Error::Oracle("fixture not certifiable".into())),
            };
            let map = net.local_linear_map(&x)?;
            let forms = analytic::binary_forms(&map, &rec)?;
            let h = forms.hessian.materialize()?;
            let q: f64 = rec.probs.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, &v)| v).sum();
            let r2 = eq8(rec.p_y(), q, cert.nu, cert.xi, cfg.mutation)?;
            let beta = 2f64.ln();
            let l2 = min_pert_quadratic(rec.loss, &forms.gradient, &h, beta, Norm::L2, cfg.restarts, cfg.seed ^ i as u64)?;
            let linf = min_pert_quadratic(rec.loss, &forms.gradient, &h, beta, Norm::Inf, 0, 0)?;
            let boxmax = max_loss_box(rec.loss, &forms.gradient, &h, eps)?;
            let sign_vertex = forms.gradient.mapv(|g| eps * crate::linalg::sign(g));
            let lo = cert.lemma1_lower;
            let hi = cert.lemma1_upper;
            let rinf = cert.rinf_analytic.unwrap_or(f64::NAN);
            let eta = cert.eta_star.unwrap_or(f64::NAN);
            Ok(vec![
                OracleReport::relative(suite, "lemma1_lower_vs_eq8", i, lo, r2, 1e-8),
                OracleReport::relative(suite, "lemma1_upper_vs_eq8", i, hi, r2, 1e-8),
                OracleReport::relative(suite, "eq8_vs_oracle_l2", i, r2, l2.value, 1e-6),
                OracleReport::with_error(
                    suite,
                    "oracle_l2_confirmed",
                    i,
                    l2.value,
                    l2.value,
                    if l2.confirmed { 0.0 } else { 1.0 },
                    0.0,
                ),
                OracleReport::relative(suite, "prop11_vs_oracle_linf", i, rinf, linf.value, 1e-6),
                OracleReport::relative(suite, "prop12_vs_enumeration", i, eta, boxmax.value, 1e-9),
                OracleReport::with_error(
                    suite,
                    "prop12_maximizer",
                    i,
                    norm2(&boxmax.vertex),
                    norm2(&sign_vertex),
                    rel_error_vec(&boxmax.vertex, &sign_vertex),
                    0.0,
                ),
            ])
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Random local linear map at `x = 0` with a correctly classified label.
fn random_map(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Result<(LocalLinearMap, analytic::PredictionRecord)> {
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let v = Matrix::from_shape_fn((n, k), |_| scale * normal(rng));
    let c = Vector::from_iter((0..k).map(|_| 2.0 * normal(rng)));
    let y = crate::network::argmax(c.view());
    let rec = softmax_ce(&c, y)?;
    Ok((LocalLinearMap::from_parts(v, c), rec))
}

fn complement(rec: &analytic::PredictionRecord) -> f64 {
    rec.probs.iter().enumerate().filter(|&(j, _)| j != rec.label).map(|(_, &v)| v).sum()
}

fn prop5_suite(cfg: &VerifyConfig) -> Result<Vec<OracleReport>> {
    let suite = "prop5";
    let classes = [3, 4, 5, 10];
    let mc: Vec<Vec<OracleReport>> = (0..cfg.prop5_fixtures)
        .into_par_iter()
        .map(|i| {
            let mut rng = fixture_rng(cfg, 4, i);
            let k = classes[i % classes.len()];
            let n = rng.random_range(2..=8);
            let (map, rec) = random_map(&mut rng, n, k)?;
            let q = complement(&rec);
            let nu = analytic::cross_lipschitz(&map);
            let mu = analytic::lipschitz(&map);
            let bounds = certify::mc_lower_bounds_q(rec.p_y(), q, nu, mu, rec.slack.max(0.0), k)?;
            let forms = analytic::multiclass_forms(&map, &rec)?;
            let h = forms.hessian.materialize()?;
            let beta = (k as f64).ln();
            let opt = min_pert_quadratic(
                rec.loss.min(beta),
                &forms.gradient,
                &h,
                beta,
                Norm::L2,
                cfg.restarts,
                cfg.seed ^ i as u64,
            )?;
            Ok(vec![
                OracleReport::inequality(suite, "bound_le_oracle", i, bounds.best(), opt.value, 1e-9),
                OracleReport::with_error(
                    suite,
                    "oracle_confirmed",
                    i,
                    opt.value,
                    opt.value,
                    if opt.confirmed { 0.0 } else { 1.0 },
                    0.0,
                ),
            ])
        })
        .collect::<Result<_>>()?;
    let binary: Vec<OracleReport> = (0..cfg.prop5_binary_fixtures)
        .into_par_iter()
        .map(|i| {
            let mut rng = fixture_rng(cfg, 5, i);
            let n = rng.random_range(1..=8);
            let (map, rec) = loop {
                let (map, rec) = random_map(&mut rng, n, 2)?;
                if rec.p_y() > 0.5 && complement(&rec) > 0.0 {
                    break (map, rec);
                }
            };
            let q = complement(&rec);
            let nu = analytic::cross_lipschitz(&map);
            let mu = analytic::lipschitz(&map);
            let bounds = certify::mc_lower_bounds_q(rec.p_y(), q, nu, mu, rec.slack.max(0.0), 2)?;
            let r2 = eq8(rec.p_y(), q, nu, rec.slack.max(0.0), cfg.mutation)?;
            Ok(OracleReport::inequality(suite, "bound_le_eq8_binary", i, bounds.best(), r2, 1e-9))
        })
        .collect::<Result<_>>()?;
    Ok(mc.into_iter().flatten().chain(binary).collect())
}

/// Rounding allowance for the fuzzed inequalities (relative excess).
pub const FUZZ_ALLOWANCE: f64 = 1e-12;

fn count_row(quantity: &str, fixtures: usize, violations: usize, worst: f64, tolerance: f64) -> OracleReport {
    let mut row = OracleReport::with_error("inequalities", quantity, fixtures, violations as f64, 0.0, worst, tolerance);
    row.pass = violations == 0;
    row
}

fn inequality_suite(cfg: &VerifyConfig) -> Result<Vec<OracleReport>> {
    // (violations, worst relative excess) per check
    type Tally = [(usize, f64); 4];
    let tally: Tally = (0..cfg.fuzz_fixtures)
        .into_par_iter()
        .map(|i| -> Result<Tally> {
            let mut rng = fixture_rng(cfg, 6, i);
            let n = rng.random_range(1..=20);
            let (map, rec) = loop {
                let (map, rec) = random_map(&mut rng, n, 2)?;
                if rec.p_y() >= 0.5 {
                    break (map, rec);
                }
            };
            let vp = map.column(0).to_owned();
            let vm = map.column(1).to_owned();
            let nu2 = analytic::cross_lipschitz(&map).powi(2);
            let mu2 = analytic::lipschitz(&map).powi(2);
            let mid = 0.5 * vp.dot(&vp) + vp.dot(&vm).abs() + 0.5 * vm.dot(&vm);
            let forms = analytic::binary_forms(&map, &rec)?;
            let g2 = norm2(&forms.gradient).powi(2);
            let hn = forms.hessian.spectral_norm()?;
            let check = |lhs: f64, rhs: f64| {
                let excess = (lhs - rhs) / rhs.abs().max(1e-300);
                ((excess > FUZZ_ALLOWANCE) as usize, excess.max(0.0))
            };
            Ok([check(nu2 / 2.0, mid), check(mid, mu2), check(g2, hn), check(hn, mu2 / 2.0)])
        })
        .try_reduce(
            || [(0, 0.0); 4],
            |a, b| {
                let mut out = a;
                for (o, x) in out.iter_mut().zip(b) {
                    o.0 += x.0;
                    o.1 = o.1.max(x.1);
                }
                Ok(out)
            },
        )?;
    let names = ["eq10_left", "eq10_right", "chain_gradient_le_hessian", "chain_hessian_le_half_mu2"];
    let mut rows: Vec<OracleReport> = names
        .iter()
        .zip(tally)
        .map(|(name, (v, worst))| count_row(name, cfg.fuzz_fixtures, v, worst, FUZZ_ALLOWANCE))
        .collect();
    // the binary l2 radius is strictly increasing in p_y at fixed ν
    let nu = 1.3;
    let mut prev = f64::NEG_INFINITY;
    let mut violations = 0;
    let grid: Vec<f64> = (51..=99).map(|c| c as f64 / 100.0).collect();
    for &p in &grid {
        let xi = 2f64.ln() + p.ln();
        let r = eq8(p, 1.0 - p, nu, xi, cfg.mutation)?;
        if !(r > prev) {
            violations += 1;
        }
        prev = r;
    }
    rows.push(count_row("eq8_monotone_in_p", grid.len(), violations, 0.0, 0.0));
    Ok(rows)
}

/// Exit-code view of a report: `(rows, failures)`.
pub fn summarize(rows: &[OracleReport]) -> (usize, usize) {
    (rows.len(), rows.iter().filter(|r| !r.pass).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            closed_form_nets: 6,
            certificate_fixtures: 4,
            prop5_fixtures: 8,
            prop5_binary_fixtures: 4,
            fuzz_fixtures: 500,
            restarts: 50,
            ..Default::default()
        }
    }

    #[test]
    fn small_suite_passes_with_registered_row_counts() {
        let cfg = small();
        for suite in SUITES {
            let rows = run_suite(suite, &cfg).unwrap();
            assert_eq!(rows.len(), expected_rows(suite, &cfg).unwrap(), "{suite}");
            let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
            assert!(failed.is_empty(), "{suite}: {failed:?}");
        }
    }

    #[test]
    fn mutations_are_caught() {
        let cfg = VerifyConfig {
            mutation: Some(Mutation::Eq8Sign),
            ..small()
        };
        let rows = run_suite("binary-certificate", &cfg).unwrap();
        assert!(summarize(&rows).1 > 0);
        let cfg = VerifyConfig {
            mutation: Some(Mutation::GradientSign),
            ..small()
        };
        let rows = run_suite("lemma2", &cfg).unwrap();
        assert!(summarize(&rows).1 > 0);
    }

    #[test]
    fn pattern_radius_is_conservative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = random_network(&mut rng, &[3, 8, 8, 2]).unwrap();
        let x = Vector::from(vec![0.3, -0.2, 0.7]);
        let r = pattern_radius_linf(&net, &x).unwrap();
        let base = net.activation_pattern(&x).unwrap();
        for s in 0..8 {
            let d = Vector::from_iter((0..3).map(|i| if s >> i & 1 == 1 { 0.99 * r } else { -0.99 * r }));
            assert_eq!(net.activation_pattern(&(&x + &d)).unwrap(), base);
        }
    }
}

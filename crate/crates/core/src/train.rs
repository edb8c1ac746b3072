//! Training, regularized fine-tuning, the two final-layer experiments and
//! λ sweeps.

use std::collections::BTreeMap;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig, MetricsRow};
use crate::certify::{self, CertificateRow};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{frobenius, Matrix, Vector};
use crate::network::{Activation, Gradients, Network};
use crate::regularize::{RegKind, RegularizerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// `lr · factor^⌊epoch / every⌋`.
    StepDecay {
        every: usize,
        factor: f64,
    },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::StepDecay { every, factor } => base * factor.powi((epoch / every.max(1)) as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Freeze {
    None,
    FinalLayerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `0` or anything `>= N` means full batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub regularizer: RegularizerSpec,
    pub freeze: Freeze,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl TrainConfig {
    /// From-scratch training: 20 epochs, lr 0.1 with step decay.
    pub fn baseline() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
            schedule: LrSchedule::StepDecay { every: 10, factor: 0.1 },
            regularizer: RegularizerSpec::none(),
            freeze: Freeze::None,
        }
    }

    /// Regularized fine-tuning: 10 epochs, constant lr 0.01.
    pub fn finetune() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.01,
            schedule: LrSchedule::Constant,
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if let LrSchedule::StepDecay { every, factor } = self.schedule {
            if every == 0 || !(factor > 0.0 && factor <= 1.0) {
                return Err(Error::Config("step decay needs every >= 1 and factor in (0, 1]".into()));
            }
        }
        self.regularizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean cross-entropy over the epoch's batches (before each update).
    pub loss: f64,
    pub reg: f64,
    pub objective: f64,
    pub accuracy: f64,
}

pub const TRACE_SCHEMA: &str = "rrl-trace";

pub const TRACE_HEADER: [&str; 6] = ["epoch", "learning_rate", "loss", "reg", "objective", "accuracy"];

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub trace: Vec<EpochRecord>,
}

fn check_data(net: &Network, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "training data vs network input",
            expected: net.input_dim(),
            found: data.dim(),
        });
    }
    if data.num_classes > net.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "dataset classes vs network outputs",
            expected: net.num_classes(),
            found: data.num_classes,
        });
    }
    Ok(())
}

/// SGD with momentum on mean CE + regularizer. Deterministic given the seed;
/// a non-finite loss or parameter aborts with [`Error::Divergence`].
pub fn train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(net, data)?;
    let mut net = net.clone();
    let n = data.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let reg = (cfg.regularizer.kind != RegKind::None && cfg.regularizer.lambda > 0.0).then_some(&cfg.regularizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = Gradients::zeros_like(&net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.rate(cfg.learning_rate, epoch);
        if batch < n {
            order.shuffle(&mut rng);
        }
        let (mut loss, mut regv, mut correct) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            let (xb, yb) = if batch == n {
                (data.inputs.view().to_owned(), data.labels.clone())
            } else {
                (
                    data.inputs.select(Axis(0), chunk),
                    chunk.iter().map(|&i| data.labels[i]).collect::<Vec<_>>(),
                )
            };
            let (mut grads, stats) = net.batch_gradients(xb.view(), &yb, 1.0, reg)?;
            let batch_loss = (stats.loss_sum + stats.reg_sum) / stats.count as f64;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, loss: batch_loss });
            }
            if cfg.freeze == Freeze::FinalLayerOnly {
                grads.keep_final_layer_only();
            }
            velocity.scale(cfg.momentum);
            velocity.add_assign(&grads);
            let mut step = velocity.clone();
            step.scale(lr);
            net.apply_update(&step);
            if !net.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::INFINITY,
                });
            }
            loss += stats.loss_sum;
            regv += stats.reg_sum;
            correct += stats.correct;
        }
        let nf = n as f64;
        trace.push(EpochRecord {
            epoch,
            learning_rate: lr,
            loss: loss / nf,
            reg: regv / nf,
            objective: (loss + regv) / nf,
            accuracy: correct as f64 / nf,
        });
    }
    Ok(TrainOutcome { net, trace })
}

/// Continues training a pretrained network under `CE + reg`.
pub fn finetune(net: &Network, data: &Dataset, reg: RegularizerSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        regularizer: reg,
        ..cfg.clone()
    };
    train(net, data, &cfg)
}

/// Accuracy and mean CE over a dataset.
pub fn evaluate_loss(net: &Network, data: &Dataset) -> Result<(f64, f64)> {
    let stats = net.batch_objective(data.inputs.view(), &data.labels, None)?;
    Ok((stats.correct as f64 / stats.count as f64, stats.loss_sum / stats.count as f64))
}

// ---------------------------------------------------------------------------
// full-batch deterministic minimization

#[derive(Debug, Clone)]
pub struct Minimized {
    pub x: Vector,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent with Barzilai-Borwein steps and an Armijo backtracking
/// safeguard (non-monotone over the last 10 values), stopped at `‖∇f‖ <= tol`.
pub fn minimize_bb<F>(f: F, x0: Vector, tol: f64, max_iter: usize) -> Result<Minimized>
where
    F: Fn(&Vector) -> Result<(f64, Vector)>,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut alpha = 1.0 / crate::linalg::norm2(&g).max(1.0);
    // non-monotone reference: last few accepted values
    let mut history: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(10);
    for it in 0..max_iter {
        let gn = crate::linalg::norm2(&g);
        if !fx.is_finite() || !gn.is_finite() {
            return Err(Error::Divergence { epoch: it, loss: fx });
        }
        if gn <= tol {
            return Ok(Minimized {
                x,
                value: fx,
                grad_norm: gn,
                iterations: it,
                converged: true,
            });
        }
        let mut step = alpha;
        let (xn, fxn, gnew) = loop {
            let cand = &x - &(&g * step);
            let (fc, gc) = f(&cand)?;
            let fref = history.iter().copied().fold(fx, f64::max);
            let flat = (fc - fx).abs() <= 8.0 * f64::EPSILON * fx.abs().max(1.0);
            if fc.is_finite() && (fc <= fref - 1e-4 * step * gn * gn || flat) {
                break (cand, fc, gc);
            }
            step *= 0.5;
            if step < 1e-30 {
                // no decrease possible at this precision
                return Ok(Minimized {
                    x,
                    value: fx,
                    grad_norm: gn,
                    iterations: it,
                    converged: gn <= tol,
                });
            }
        };
        let sv = &xn - &x;
        let yv = &gnew - &g;
        let sy = sv.dot(&yv);
        alpha = if sy > 0.0 { sv.dot(&sv) / sy } else { step * 2.0 };
        if history.len() == 10 {
            history.pop_front();
        }
        history.push_back(fx);
        x = xn;
        fx = fxn;
        g = gnew;
    }
    let gn = crate::linalg::norm2(&g);
    Ok(Minimized {
        x,
        value: fx,
        grad_norm: gn,
        iterations: max_iter,
        converged: gn <= tol,
    })
}

// ---------------------------------------------------------------------------
// final-layer equivalence of ν²/2 and μ²

#[derive(Debug, Clone, Serialize)]
pub struct FinalLayerOptimum {
    pub weights: Vec<f64>,
    pub nu: f64,
    pub mu: f64,
    pub ce: f64,
    pub objective: f64,
    /// `‖v₊ + v₋‖₂`.
    pub sum_norm: f64,
    /// `‖v₊ - v₋‖₂`.
    pub diff_norm: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop2Record {
    pub lambda: f64,
    pub cross_lipschitz: FinalLayerOptimum,
    pub jacobian: FinalLayerOptimum,
    pub objective_gap: f64,
    pub nu_rel_diff: f64,
    pub ce_rel_diff: f64,
}

pub const PROP2_GRAD_TOL: f64 = 1e-7;

fn final_layer_net(w: &Vector, m: usize) -> Result<Network> {
    let mat = Matrix::from_shape_vec((m, 2), w.to_vec()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Network::new(vec![mat], None, Activation::Relu)
}

fn fit_final_layer(features: &Matrix, labels: &[usize], spec: RegularizerSpec, w0: &Vector) -> Result<FinalLayerOptimum> {
    let m = features.ncols();
    let reg = (spec.lambda > 0.0).then_some(&spec);
    let objective = |w: &Vector| -> Result<(f64, Vector)> {
        let net = final_layer_net(w, m)?;
        let (g, stats) = net.batch_gradients(features.view(), labels, 1.0, reg)?;
        let value = (stats.loss_sum + stats.reg_sum) / stats.count as f64;
        Ok((value, Vector::from_iter(g.weights[0].iter().copied())))
    };
    let res = minimize_bb(objective, w0.clone(), PROP2_GRAD_TOL, 200_000)?;
    let net = final_layer_net(&res.x, m)?;
    let v = &net.weights()[0];
    let (vp, vm) = (v.column(0), v.column(1));
    let stats = net.batch_objective(features.view(), labels, None)?;
    Ok(FinalLayerOptimum {
        weights: res.x.to_vec(),
        nu: crate::linalg::norm2(&(&vp - &vm)),
        mu: frobenius(v.view()),
        ce: stats.loss_sum / stats.count as f64,
        objective: res.value,
        sum_norm: crate::linalg::norm2(&(&vp + &vm)),
        diff_norm: crate::linalg::norm2(&(&vp - &vm)),
        grad_norm: res.grad_norm,
        iterations: res.iterations,
        converged: res.converged,
    })
}

/// Trains a bias-free final layer on fixed features twice, under
/// `CE + λν²/2` and `CE + λμ²`, from the same initialization.
pub fn prop2_experiment(features: &Matrix, labels: &[usize], lambda: f64, seed: u64) -> Result<Prop2Record> {
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::NotBinary(labels.iter().max().map_or(0, |m| m + 1)));
    }
    let m = features.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = Vector::from_iter((0..2 * m).map(|_| rng.random_range(-0.5..0.5)));
    let cl = fit_final_layer(features, labels, RegularizerSpec::new(RegKind::CrossLipschitz, lambda)?, &w0)?;
    let jac = fit_final_layer(features, labels, RegularizerSpec::new(RegKind::Jacobian, lambda)?, &w0)?;
    if !cl.converged || !jac.converged {
        return Err(Error::NoConvergence {
            iterations: cl.iterations.max(jac.iterations),
            residual: cl.grad_norm.max(jac.grad_norm),
        });
    }
    Ok(Prop2Record {
        lambda,
        objective_gap: (cl.objective - jac.objective).abs(),
        nu_rel_diff: (cl.nu - jac.nu).abs() / jac.nu.abs().max(1e-300),
        ce_rel_diff: (cl.ce - jac.ce).abs() / jac.ce.abs().max(1e-300),
        cross_lipschitz: cl,
        jacobian: jac,
    })
}

/// Random fixed-feature binary problem: ReLU features of a random projection
/// of Gaussian inputs, labels from a noisy linear rule on the features.
pub fn random_feature_problem(n: usize, input_dim: usize, features: usize, seed: u64) -> (Matrix, Vec<usize>) {
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_shape_fn((n, input_dim), |_| rng.sample::<f64, _>(StandardNormal));
    let p = Matrix::from_shape_fn((input_dim, features), |_| {
        rng.sample::<f64, _>(StandardNormal) / (input_dim as f64).sqrt()
    });
    let f = x.dot(&p).mapv(|v| v.max(0.0));
    let dir = Vector::from_iter((0..features).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let score = f.dot(&dir);
    let mean = score.mean().unwrap_or(0.0);
    let labels = score
        .iter()
        .map(|&s| {
            let noisy = s - mean + 0.5 * rng.sample::<f64, _>(StandardNormal);
            usize::from(noisy < 0.0)
        })
        .collect();
    (f, labels)
}

// ---------------------------------------------------------------------------
// population gradient flow on the Gaussian task

/// Nodes of the Simpson rule used for the 1-D Gaussian expectations.
pub const FLOW_QUADRATURE_NODES: usize = 4001;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `(E[φ(s)], E[φ'(s)], E[log(1 + e^{-ys})])` for `s ~ N(m, σ²)`,
/// `φ(s) = -y σ(-y s)`.
fn gaussian_moments(m: f64, sd: f64, y: f64) -> (f64, f64, f64) {
    let phi = |s: f64| -y * sigmoid(-y * s);
    let dphi = |s: f64| sigmoid(s) * sigmoid(-s);
    let ce = |s: f64| {
        let t = -y * s;
        if t > 0.0 {
            t + (-t).exp().ln_1p()
        } else {
            t.exp().ln_1p()
        }
    };
    if sd == 0.0 {
        return (phi(m), dphi(m), ce(m));
    }
    let half = 12.0;
    let k = FLOW_QUADRATURE_NODES - 1;
    let h = 2.0 * half / k as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for i in 0..=k {
        let u = -half + i as f64 * h;
        let w = if i == 0 || i == k {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let dens = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let s = m + sd * u;
        a += w * dens * phi(s);
        b += w * dens * dphi(s);
        c += w * dens * ce(s);
    }
    (a * h / 3.0, b * h / 3.0, c * h / 3.0)
}

/// Population CE and its gradient w.r.t. `w = v₊ - v₋` for `x₁ ~ N(0, 1)`,
/// `x_j ~ N(η y, 1)` (j ≥ 2), `y = ±1` equally likely.
pub fn population_ce_gradient(w: &Vector, eta: f64) -> (f64, Vector) {
    let n = w.len();
    let mut mean_dir = Vector::from_elem(n, 1.0);
    mean_dir[0] = 0.0;
    let sd = crate::linalg::norm2(w);
    let proj = mean_dir.dot(w);
    let mut grad = Vector::zeros(n);
    let mut loss = 0.0;
    for y in [1.0, -1.0] {
        let mu_s = eta * y * proj;
        let (e_phi, e_dphi, e_ce) = gaussian_moments(mu_s, sd, y);
        // E[φ(s) x] = m_y E[φ] + w E[φ'] (Stein)
        grad = grad + &mean_dir * (0.5 * eta * y * e_phi) + w * (0.5 * e_dphi);
        loss += 0.5 * e_ce;
    }
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowInit {
    /// `v₊ = [0, a, …, a]`, `v₋ = -v₊`.
    Bayes,
    /// Bayes form plus a seeded common offset `v₊ + v₋ ≠ 0`.
    Generic { seed: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowRecord {
    pub dim: usize,
    pub a: f64,
    pub eta: f64,
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    /// `max_t ‖V_ν(t) - V_μ(t)‖_F`.
    pub max_divergence: f64,
    pub final_divergence: f64,
    /// Per-step divergence trajectory.
    pub divergence: Vec<f64>,
    pub final_loss_nu: f64,
    pub final_loss_mu: f64,
}

/// Gradient descent on the population objective `CE + λν²/2` versus
/// `CE + λμ²` for a bias-free linear binary classifier.
pub fn gradient_flow_experiment(
    dim: usize,
    a: f64,
    eta: f64,
    lambda: f64,
    steps: usize,
    step_size: f64,
    init: FlowInit,
) -> Result<FlowRecord> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("gradient flow needs dim >= 2, got {dim}")));
    }
    let mut vp = Vector::from_elem(dim, a);
    vp[0] = 0.0;
    let mut vm = -&vp;
    if let FlowInit::Generic { seed } = init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = Vector::from_iter((0..dim).map(|_| rng.random_range(-0.5..0.5)));
        vp = vp + &offset;
        vm = vm + &offset;
    }
    let (mut np, mut nm) = (vp.clone(), vm.clone());
    let (mut mp, mut mm) = (vp, vm);
    let mut divergence = Vec::with_capacity(steps);
    let mut loss_nu = 0.0;
    let mut loss_mu = 0.0;
    for _ in 0..steps {
        // ν²/2 = ‖v₊ - v₋‖²/2
        let w = &np - &nm;
        let (l, g) = population_ce_gradient(&w, eta);
        loss_nu = l;
        let gp = &g + &(&w * lambda);
        np = &np - &(&gp * step_size);
        nm = &nm + &(&gp * step_size);
        // μ² = ‖v₊‖² + ‖v₋‖²
        let w = &mp - &mm;
        let (l, g) = population_ce_gradient(&w, eta);
        loss_mu = l;
        let gp = &g + &(&mp * (2.0 * lambda));
        let gm = -&g + &(&mm * (2.0 * lambda));
        mp = &mp - &(&gp * step_size);
        mm = &mm - &(&gm * step_size);
        let d = (&np - &mp).iter().chain((&nm - &mm).iter()).map(|v| v * v).sum::<f64>().sqrt();
        if !d.is_finite() {
            return Err(Error::NonFinite("gradient flow"));
        }
        divergence.push(d);
    }
    Ok(FlowRecord {
        dim,
        a,
        eta,
        lambda,
        steps,
        step_size,
        max_divergence: divergence.iter().copied().fold(0.0, f64::max),
        final_divergence: divergence.last().copied().unwrap_or(0.0),
        divergence,
        final_loss_nu: loss_nu,
        final_loss_mu: loss_mu,
    })
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
    pub reg_kinds: Vec<RegKind>,
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub attacks: Vec<AttackConfig>,
    pub baseline: TrainConfig,
    pub finetune: TrainConfig,
    /// Test samples used for attacks and certificates (0 = all).
    pub eval_samples: usize,
    pub certify_epsilon: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 100],
            activation: Activation::Relu,
            bias: true,
            reg_kinds: vec![
                RegKind::Jacobian,
                RegKind::CrossLipschitz,
                RegKind::InputGradient,
                RegKind::Curvature,
            ],
            lambda_grid: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            seeds: (0..5).collect(),
            attacks: vec![
                AttackConfig::new(crate::attack::AttackKind::DeepFool),
                AttackConfig::new(crate::attack::AttackKind::Pgd).with_epsilon(0.1),
            ],
            baseline: TrainConfig::baseline(),
            finetune: TrainConfig::finetune(),
            eval_samples: 0,
            certify_epsilon: 0.1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reg_kinds.is_empty() || self.lambda_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one kind, lambda and seed".into()));
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("lambda grid entries must be finite and >= 0".into()));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        self.baseline.validate()?;
        self.finetune.validate()
    }
}

#[derive(Debug, Clone)]
pub enum RunStatus {
    Completed {
        net: Network,
        metrics: Vec<MetricsRow>,
        certificates: Vec<CertificateRow>,
    },
    Diverged {
        epoch: usize,
        loss: f64,
    },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model_id: String,
    pub seed: u64,
    pub kind: RegKind,
    pub lambda: f64,
    pub trace: Vec<EpochRecord>,
    pub status: RunStatus,
}

/// Mean over non-divergent seeds of one (kind, λ, attack, ε) cell.
#[derive(Debug, Clone, Serialize)]
pub struct AveragedRow {
    pub reg_kind: String,
    pub lambda: f64,
    pub attack: String,
    pub epsilon: f64,
    pub clean_acc: Option<f64>,
    pub robust_acc: Option<f64>,
    pub mean_min_l2: Option<f64>,
    pub median_min_l2: Option<f64>,
    pub n_samples: usize,
    pub n_runs: usize,
    pub n_divergent: usize,
}

pub const AVERAGED_SCHEMA: &str = "rrl-sweep-averages";

pub const AVERAGED_HEADER: [&str; 11] = [
    "reg_kind",
    "lambda",
    "attack",
    "epsilon",
    "clean_acc",
    "robust_acc",
    "mean_min_l2",
    "median_min_l2",
    "n_samples",
    "n_runs",
    "n_divergent",
];

pub const DIVERGENCE_SCHEMA: &str = "rrl-divergences";

pub const DIVERGENCE_HEADER: [&str; 6] = ["model_id", "seed", "reg_kind", "lambda", "epoch", "loss"];

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceRow {
    pub model_id: String,
    pub seed: u64,
    pub reg_kind: String,
    pub lambda: f64,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub baselines: Vec<(u64, Network, Vec<EpochRecord>)>,
    pub runs: Vec<RunOutcome>,
}

pub fn model_id(kind: RegKind, lambda: f64, seed: u64) -> String {
    format!("{}-l{}-s{}", kind.as_str(), lambda, seed)
}

fn derive_seed(seed: u64, kind: RegKind, lambda_index: usize) -> u64 {
    let k = RegKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (k << 32) ^ (lambda_index as u64 + 1)
}

fn assess(
    net: &Network,
    eval: &Dataset,
    cfg: &SweepConfig,
    id: &str,
    seed: u64,
    kind: RegKind,
    lambda: f64,
) -> Result<(Vec<MetricsRow>, Vec<CertificateRow>)> {
    let mut metrics = Vec::with_capacity(cfg.attacks.len());
    for a in &cfg.attacks {
        let (m, _) = attack::evaluate(net, eval, a)?;
        metrics.push(MetricsRow {
            model_id: id.to_string(),
            seed,
            reg_kind: kind.as_str().into(),
            lambda,
            attack: a.kind,
            epsilon: if a.kind.is_budgeted() { a.epsilon } else { 0.0 },
            clean_acc: m.clean_acc,
            robust_acc: m.robust_acc,
            mean_min_l2: m.mean_min_l2,
            median_min_l2: m.median_min_l2,
            n_samples: m.n_samples,
        });
    }
    let certs = certify::certify_batch(net, eval.inputs.view(), &eval.labels, cfg.certify_epsilon)?;
    let certificates = certs
        .iter()
        .enumerate()
        .map(|(i, c)| CertificateRow::from_certification(i, c, cfg.certify_epsilon))
        .collect();
    Ok((metrics, certificates))
}

/// Baseline per seed, then fine-tuning for every (kind, λ > 0); the λ = 0
/// cell is the baseline model itself. Runs execute on the current rayon pool.
pub fn sweep(cfg: &SweepConfig, train_data: &Dataset, test_data: &Dataset) -> Result<SweepResult> {
    cfg.validate()?;
    let eval = if cfg.eval_samples == 0 {
        test_data.clone()
    } else {
        test_data.head(cfg.eval_samples)
    };
    let k = train_data.num_classes.max(test_data.num_classes);
    let mut widths = vec![train_data.dim()];
    widths.extend(&cfg.hidden);
    widths.push(k);
    let baselines: Vec<(u64, Network, Vec<EpochRecord>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = Network::random(&widths, cfg.activation, cfg.bias, &mut rng)?;
            let tc = TrainConfig {
                seed,
                ..cfg.baseline.clone()
            };
            let out = train(&init, train_data, &tc)?;
            Ok((seed, out.net, out.trace))
        })
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for (bi, &seed) in cfg.seeds.iter().enumerate() {
        for &kind in &cfg.reg_kinds {
            for (li, &lambda) in cfg.lambda_grid.iter().enumerate() {
                jobs.push((bi, seed, kind, li, lambda));
            }
        }
    }
    let runs: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(bi, seed, kind, li, lambda)| {
            let id = model_id(kind, lambda, seed);
            let base = &baselines[bi].1;
            let (net, trace) = if lambda == 0.0 {
                (base.clone(), Vec::new())
            } else {
                let tc = TrainConfig {
                    seed: derive_seed(seed, kind, li),
                    ..cfg.finetune.clone()
                };
                match finetune(base, train_data, RegularizerSpec::new(kind, lambda)?, &tc) {
                    Ok(out) => (out.net, out.trace),
                    Err(Error::Divergence { epoch, loss }) => {
                        return Ok(RunOutcome {
                            model_id: id,
                            seed,
                            kind,
                            lambda,
                            trace: Vec::new(),
                            status: RunStatus::Diverged { epoch, loss },
                        })
                    }
                    Err(e) => return Err(e),
                }
            };
            let (metrics, certificates) = assess(&net, &eval, cfg, &id, seed, kind, lambda)?;
            Ok(RunOutcome {
                model_id: id,
                seed,
                kind,
                lambda,
                trace,
                status: RunStatus::Completed {
                    net,
                    metrics,
                    certificates,
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult { baselines, runs })
}

impl SweepResult {
    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        self.runs
            .iter()
            .filter_map(|r| match &r.status {
                RunStatus::Completed { metrics, .. } => Some(metrics.clone()),
                RunStatus::Diverged { .. } => None,
            })
            .flatten()
            .collect()
    }

    pub fn divergences(&self) -> Vec<DivergenceRow> {
        self.runs
            .iter()
            .filter_map(|r| match r.status {
                RunStatus::Diverged { epoch, loss } => Some(DivergenceRow {
                    model_id: r.model_id.clone(),
                    seed: r.seed,
                    reg_kind: r.kind.as_str().into(),
                    lambda: r.lambda,
                    epoch,
                    loss,
                }),
                RunStatus::Completed { .. } => None,
            })
            .collect()
    }

    /// Seed averages per (kind, λ, attack, ε), in first-appearance order.
    pub fn averaged_rows(&self) -> Vec<AveragedRow> {
        let mut order: Vec<(String, String)> = Vec::new();
        let mut cells: BTreeMap<(String, String), Vec<&MetricsRow>> = BTreeMap::new();
        let mut cell_meta: BTreeMap<(String, String), (String, f64, String, f64)> = BTreeMap::new();
        let mut diverged: BTreeMap<(String, u64), usize> = BTreeMap::new();
        let mut attack_keys: Vec<(String, f64)> = Vec::new();
        for r in &self.runs {
            if let RunStatus::Completed { metrics, .. } = &r.status {
                for m in metrics {
                    let ak = (m.attack.as_str().to_string(), m.epsilon);
                    if !attack_keys.contains(&ak) {
                        attack_keys.push(ak);
                    }
                }
            }
        }
        for r in &self.runs {
            let cell = format!("{}|{}", r.kind.as_str(), r.lambda);
            match &r.status {
                RunStatus::Completed { metrics, .. } => {
                    for m in metrics {
                        let key = (cell.clone(), format!("{}|{}", m.attack.as_str(), m.epsilon));
                        if !cells.contains_key(&key) {
                            order.push(key.clone());
                            cell_meta.insert(key.clone(), (r.kind.as_str().into(), r.lambda, m.attack.as_str().into(), m.epsilon));
                        }
                        cells.entry(key).or_default().push(m);
                    }
                }
                RunStatus::Diverged { .. } => {
                    *diverged.entry((cell.clone(), r.lambda.to_bits())).or_default() += 1;
                    for (a, e) in &attack_keys {
                        let key = (cell.clone(), format!("{a}|{e}"));
                        if !cells.contains_key(&key) {
                            order.push(key.clone());
                            cell_meta.insert(key.clone(), (r.kind.as_str().into(), r.lambda, a.clone(), *e));
                            cells.insert(key, Vec::new());
                        }
                    }
                }
            }
        }
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        order
            .into_iter()
            .map(|key| {
                let rows = &cells[&key];
                let (kind, lambda, attack, epsilon) = cell_meta[&key].clone();
                let n_div = diverged.get(&(key.0.clone(), lambda.to_bits())).copied().unwrap_or(0);
                AveragedRow {
                    reg_kind: kind,
                    lambda,
                    attack,
                    epsilon,
                    clean_acc: mean(rows.iter().map(|r| r.clean_acc).collect()),
                    robust_acc: mean(rows.iter().map(|r| r.robust_acc).collect()),
                    mean_min_l2: mean(rows.iter().filter_map(|r| r.mean_min_l2).collect()),
                    median_min_l2: mean(rows.iter().filter_map(|r| r.median_min_l2).collect()),
                    n_samples: rows.iter().map(|r| r.n_samples).sum(),
                    n_runs: rows.len(),
                    n_divergent: n_div,
                }
            })
            .collect()
    }

    /// Certificate percentile summaries per completed run.
    pub fn certificate_summaries(&self) -> Vec<(String, Vec<CertificateRow>)> {
        self.runs
            .iter()
            .filter_map(|r| match &r.status {
                RunStatus::Completed { certificates, .. } => Some((r.model_id.clone(), certify::summary_rows(certificates))),
                RunStatus::Diverged { .. } => None,
            })
            .collect()
    }
}

//! Sweep bookkeeping on a small synthetic task.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrl::attack::{self, AttackConfig, AttackKind};
use rrl::data::{self, Dataset};
use rrl::linalg::frobenius;
use rrl::network::{Activation, Network};
use rrl::regularize::{RegKind, RegularizerSpec};
use rrl::train::{self, RunStatus, SweepConfig, SweepResult, TrainConfig};

fn task() -> (Dataset, Dataset) {
    let d = data::synth_tsipras(300, 6, data::TSIPRAS_ETA, 11).unwrap();
    data::split(&d, 0.8, 11).unwrap()
}

fn small_config() -> SweepConfig {
    SweepConfig {
        hidden: vec![12],
        reg_kinds: vec![RegKind::Jacobian, RegKind::CrossLipschitz],
        lambda_grid: vec![0.0, 0.1, 1e9],
        seeds: vec![0, 1],
        attacks: vec![
            AttackConfig::new(AttackKind::DeepFool).unclipped(),
            AttackConfig::new(AttackKind::Pgd).with_epsilon(0.2).unclipped(),
        ],
        baseline: TrainConfig {
            epochs: 6,
            batch_size: 32,
            learning_rate: 0.05,
            ..TrainConfig::baseline()
        },
        finetune: TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.01,
            ..TrainConfig::finetune()
        },
        eval_samples: 30,
        ..SweepConfig::default()
    }
}

fn shared() -> &'static (SweepConfig, SweepResult) {
    static CELL: OnceLock<(SweepConfig, SweepResult)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = small_config();
        let (tr, te) = task();
        let result = train::sweep(&cfg, &tr, &te).unwrap();
        (cfg, result)
    })
}

#[test]
fn row_count_is_grid_size_minus_divergences() {
    let (cfg, r) = shared();
    let divergent = r.divergences().len();
    assert!(divergent > 0, "λ = 1e9 must diverge");
    let expected = (cfg.reg_kinds.len() * cfg.lambda_grid.len() * cfg.seeds.len() - divergent) * cfg.attacks.len();
    assert_eq!(r.metrics_rows().len(), expected);
    for d in r.divergences() {
        assert_eq!(d.lambda, 1e9);
        assert!(!d.loss.is_finite() || d.loss > 0.0);
    }
}

#[test]
fn averages_are_seed_means() {
    let (_, r) = shared();
    let rows = r.metrics_rows();
    for a in r.averaged_rows() {
        let cell: Vec<_> = rows
            .iter()
            .filter(|m| m.reg_kind == a.reg_kind && m.lambda == a.lambda && m.attack.as_str() == a.attack && m.epsilon == a.epsilon)
            .collect();
        assert_eq!(cell.len(), a.n_runs);
        if cell.is_empty() {
            assert!(a.clean_acc.is_none() && a.n_divergent > 0);
            continue;
        }
        let mean = cell.iter().map(|m| m.robust_acc).sum::<f64>() / cell.len() as f64;
        assert!((a.robust_acc.unwrap() - mean).abs() < 1e-15);
        let mean = cell.iter().map(|m| m.clean_acc).sum::<f64>() / cell.len() as f64;
        assert!((a.clean_acc.unwrap() - mean).abs() < 1e-15);
    }
}

#[test]
fn zero_lambda_cell_is_the_baseline() {
    let (cfg, r) = shared();
    let (_, te) = task();
    let eval = te.head(cfg.eval_samples);
    for run in r.runs.iter().filter(|run| run.lambda == 0.0) {
        let base = &r.baselines.iter().find(|b| b.0 == run.seed).unwrap().1;
        let RunStatus::Completed { net, metrics, .. } = &run.status else {
            panic!("baseline cell cannot diverge");
        };
        assert_eq!(net, base);
        for (m, a) in metrics.iter().zip(&cfg.attacks) {
            let (direct, _) = attack::evaluate(base, &eval, a).unwrap();
            assert_eq!(m.robust_acc, direct.robust_acc);
            assert_eq!(m.mean_min_l2, direct.mean_min_l2);
        }
    }
}

#[test]
fn sweep_is_deterministic() {
    let (cfg, r) = shared();
    let (tr, te) = task();
    let again = train::sweep(cfg, &tr, &te).unwrap();
    let a: Vec<_> = r
        .metrics_rows()
        .iter()
        .map(|m| (m.model_id.clone(), m.robust_acc, m.mean_min_l2))
        .collect();
    let b: Vec<_> = again
        .metrics_rows()
        .iter()
        .map(|m| (m.model_id.clone(), m.robust_acc, m.mean_min_l2))
        .collect();
    assert_eq!(a, b);
}

fn baseline_net() -> (Network, Dataset) {
    let (tr, _) = task();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let init = Network::random(&[6, 12, 2], Activation::Relu, true, &mut rng).unwrap();
    let out = train::train(
        &init,
        &tr,
        &TrainConfig {
            epochs: 6,
            learning_rate: 0.05,
            batch_size: 32,
            ..TrainConfig::baseline()
        },
    )
    .unwrap();
    (out.net, tr)
}

#[test]
fn curvature_and_cross_lipschitz_reach_different_weights() {
    let (net, tr) = baseline_net();
    let cfg = TrainConfig::finetune();
    let a = train::finetune(&net, &tr, RegularizerSpec::new(RegKind::Curvature, 1.0).unwrap(), &cfg).unwrap();
    let b = train::finetune(&net, &tr, RegularizerSpec::new(RegKind::CrossLipschitz, 1.0).unwrap(), &cfg).unwrap();
    let diff: f64 = a
        .net
        .weights()
        .iter()
        .zip(b.net.weights())
        .map(|(x, y)| frobenius((x - y).view()).powi(2))
        .sum();
    assert!(diff.sqrt() > 1e-3, "weights differ by only {}", diff.sqrt());
}

#[test]
fn huge_penalty_with_small_step_shrinks_the_map() {
    let (net, tr) = baseline_net();
    let mean_mu = |n: &Network| {
        (0..tr.len())
            .map(|i| rrl::analytic::lipschitz(&n.local_linear_map(&tr.sample(i).0).unwrap()))
            .sum::<f64>()
            / tr.len() as f64
    };
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 1e-6,
        momentum: 0.0,
        ..TrainConfig::finetune()
    };
    let out = train::finetune(&net, &tr, RegularizerSpec::new(RegKind::Jacobian, 1e4).unwrap(), &cfg).unwrap();
    assert!(mean_mu(&out.net) < 0.9 * mean_mu(&net));
}

//! Property tests for the invariants the library promises.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrl::analytic;
use rrl::attack::{self, AttackConfig, AttackKind};
use rrl::certify::{self, quadratic_radius, r2_analytic, Certification};
use rrl::data::{self, Dataset};
use rrl::linalg::{norm2, Vector};
use rrl::network::{read_weights, write_weights, Activation, Network};
use rrl::oracle::rel_error;
use rrl::regularize::RegularizerSpec;
use rrl::train::{self, LrSchedule, TrainConfig};

fn net_strategy(max_layers: usize, classes: &'static [usize]) -> impl Strategy<Value = (Network, Vector)> {
    (
        prop::collection::vec(2usize..24, 0..max_layers),
        2usize..10,
        prop::sample::select(classes),
        any::<bool>(),
        prop::bool::weighted(0.3),
        any::<u64>(),
    )
        .prop_map(|(hidden, input, k, bias, leaky, seed)| {
            let mut widths = vec![input];
            widths.extend(hidden);
            widths.push(k);
            let act = if leaky {
                Activation::Leaky { alpha: 0.1 }
            } else {
                Activation::Relu
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::random(&widths, act, bias, &mut rng).unwrap();
            let x = Vector::from_iter((0..input).map(|i| ((seed >> (i % 60)) & 0xff) as f64 / 64.0 - 2.0));
            (net, x)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn local_map_reproduces_logits((net, x) in net_strategy(4, &[2, 3, 10])) {
        let z = net.logits(&x).unwrap();
        let g = net.local_linear_map(&x).unwrap().evaluate(&x);
        let scale = 1.0 + norm2(&z);
        prop_assert!(norm2(&(&z - &g)) <= 1e-10 * scale);
    }

    #[test]
    fn weight_file_round_trips((net, x) in net_strategy(4, &[2, 3, 10])) {
        let mut buf = Vec::new();
        write_weights(&net, &mut buf).unwrap();
        let back = read_weights(buf.as_slice()).unwrap();
        prop_assert_eq!(back.widths(), net.widths());
        prop_assert_eq!(back.logits(&x).unwrap(), net.logits(&x).unwrap());
        let mut again = Vec::new();
        write_weights(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn truncated_weight_file_is_rejected((net, _x) in net_strategy(3, &[2, 3]), cut in 0.0f64..1.0) {
        let mut buf = Vec::new();
        write_weights(&net, &mut buf).unwrap();
        let n = ((buf.len() - 1) as f64 * cut) as usize;
        prop_assert!(read_weights(&buf[..n]).is_err());
    }

    #[test]
    fn idx_round_trips(pixels in prop::collection::vec(0u8..=255, 0..6), n in 0usize..5, k in 2usize..11) {
        let dim = pixels.len().max(1);
        let inputs = Array2::from_shape_fn((n, dim), |(i, j)| f64::from(pixels.get((i + j) % pixels.len().max(1)).copied().unwrap_or(0)) / 255.0);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let d = Dataset::new(inputs, labels, k).unwrap();
        let (mut ib, mut lb) = (Vec::new(), Vec::new());
        data::write_idx_streams(&d, &mut ib, &mut lb).unwrap();
        let back = data::idx_dataset(ib.as_slice(), lb.as_slice()).unwrap();
        prop_assert_eq!(&back.labels, &d.labels);
        prop_assert_eq!(&back.inputs, &d.inputs);
    }

    #[test]
    fn quadratic_radius_solves_the_model(g in 0.0f64..50.0, h in 0.0f64..50.0, xi in 1e-6f64..5.0) {
        prop_assume!(g > 1e-9 || h > 1e-9);
        let r = quadratic_radius(g, h, xi).unwrap();
        prop_assert!(r > 0.0);
        prop_assert!(rel_error(g * r + 0.5 * h * r * r, xi) <= 1e-12);
    }

    #[test]
    fn binary_gradient_and_hessian_norms((net, x) in net_strategy(4, &[2])) {
        let map = net.local_linear_map(&x).unwrap();
        let y = net.predict(&x).unwrap();
        let rec = analytic::softmax_ce(&map.evaluate(&x), y).unwrap();
        let d = analytic::input_derivatives(&map, &rec).unwrap();
        let (p, nu) = (rec.p_y(), analytic::cross_lipschitz(&map));
        prop_assume!(nu > 1e-8 && p < 1.0 - 1e-9);
        prop_assert!(rel_error(norm2(&d.gradient), (1.0 - p) * nu) <= 1e-10);
        prop_assert!(rel_error(d.hessian.spectral_norm().unwrap(), p * (1.0 - p) * nu * nu) <= 1e-10);
    }

    #[test]
    fn binary_radius_increases_with_confidence(p in 0.51f64..0.98, dp in 1e-3f64..0.01, nu in 0.1f64..10.0) {
        let xi = |p: f64| std::f64::consts::LN_2 + p.ln();
        let lo = r2_analytic(p, nu, xi(p)).unwrap();
        let hi = r2_analytic(p + dp, nu, xi(p + dp)).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn zero_budget_worst_case_is_the_loss((net, x) in net_strategy(3, &[2])) {
        let y = net.predict(&x).unwrap();
        match certify::certify(&net, &x, y, 0.0).unwrap() {
            Certification::Certified(c) => prop_assert_eq!(c.eta_star, Some(c.loss)),
            Certification::Uncertifiable { .. } => prop_assert!(false, "predicted label must certify"),
        }
    }

    #[test]
    fn multiclass_bounds_never_exceed_binary_radius((net, x) in net_strategy(3, &[2])) {
        let y = net.predict(&x).unwrap();
        if let Certification::Certified(c) = certify::certify(&net, &x, y, 0.0).unwrap() {
            let r2 = c.r2_analytic.unwrap();
            prop_assert!(c.mc.best() <= r2 * (1.0 + 1e-9) + 1e-12);
        }
    }
}

fn linear_binary(seed: u64, dim: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Network::random(&[dim, 2], Activation::Relu, true, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// On a linear classifier the sign step is the exact l∞ maximizer, so
    /// robust accuracy cannot grow with the budget.
    #[test]
    fn robust_accuracy_non_increasing_in_epsilon(seed in any::<u64>(), eps in prop::collection::vec(0.0f64..1.0, 2..5)) {
        let net = linear_binary(seed, 6);
        let d = data::synth_tsipras(60, 6, data::TSIPRAS_ETA, seed).unwrap();
        let mut eps = eps;
        eps.sort_by(f64::total_cmp);
        for kind in [AttackKind::Fgsm, AttackKind::Pgd] {
            let acc: Vec<f64> = eps
                .iter()
                .map(|&e| attack::evaluate(&net, &d, &AttackConfig::new(kind).with_epsilon(e).unclipped()).unwrap().0.robust_acc)
                .collect();
            for w in acc.windows(2) {
                prop_assert!(w[1] <= w[0], "{kind:?}: {acc:?} over {eps:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn full_batch_loss_is_non_increasing(seed in any::<u64>(), lr in 1e-3f64..2e-2) {
        let d = data::synth_tsipras(80, 5, data::TSIPRAS_ETA, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::random(&[5, 12, 2], Activation::Relu, true, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 0,
            learning_rate: lr,
            momentum: 0.0,
            schedule: LrSchedule::Constant,
            seed,
            ..TrainConfig::baseline()
        };
        let out = train::train(&net, &d, &cfg).unwrap();
        for w in out.trace.windows(2) {
            prop_assert!(w[1].loss <= w[0].loss + 1e-3, "{} -> {}", w[0].loss, w[1].loss);
        }
    }

    #[test]
    fn regularized_objective_matches_its_parts(seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let d = data::synth_tsipras(40, 4, data::TSIPRAS_ETA, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::random(&[4, 8, 2], Activation::Relu, true, &mut rng).unwrap();
        let spec = RegularizerSpec::new(rrl::regularize::RegKind::CrossLipschitz, lambda).unwrap();
        let stats = net.batch_objective(d.inputs.view(), &d.labels, Some(&spec)).unwrap();
        let mut reg = 0.0;
        for i in 0..d.len() {
            let (x, y) = d.sample(i);
            let map = net.local_linear_map(&x).unwrap();
            let rec = analytic::softmax_ce(&map.evaluate(&x), y).unwrap();
            reg += rrl::regularize::reg_value(&spec, &map, &rec).unwrap();
        }
        prop_assert!((stats.reg_sum - reg).abs() <= 1e-9 * (1.0 + reg.abs()));
    }
}

#[test]
fn wrong_input_dimension_is_rejected() {
    let net = linear_binary(0, 3);
    assert!(net.logits(&Array1::zeros(2)).is_err());
}

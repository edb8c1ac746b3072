//! FGSM, PGD, DeepFool and Carlini-Wagner on a small trained classifier.
//!
//! Run with `cargo run --release --example attacks`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrl::attack::{self, AttackConfig, AttackKind};
use rrl::data;
use rrl::network::{Activation, Network};
use rrl::train::{self, TrainConfig};

fn main() -> rrl::Result<()> {
    let d = data::synth_tsipras(800, 10, data::TSIPRAS_ETA, 1)?;
    let (tr, te) = data::split(&d, 0.75, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = Network::random(&[10, 32, 16, 2], Activation::Relu, true, &mut rng)?;
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 0.05,
        ..TrainConfig::baseline()
    };
    let net = train::train(&init, &tr, &cfg)?.net;

    // Gaussian inputs: no [0, 1] box
    let kinds = [
        AttackConfig::new(AttackKind::Fgsm).with_epsilon(0.3).unclipped(),
        AttackConfig::new(AttackKind::Pgd).with_epsilon(0.3).unclipped(),
        AttackConfig::new(AttackKind::DeepFool).unclipped(),
        AttackConfig::new(AttackKind::Cw).unclipped(),
    ];
    println!("per-sample l2 norms (* = label flipped):");
    for i in 0..5 {
        let (x, y) = te.sample(i);
        let cells: Vec<String> = kinds
            .iter()
            .map(|a| match attack::run_attack(&net, &x, y, a, i as u64) {
                Ok(r) if r.clean_misclassified => format!("{:>9}", "wrong"),
                Ok(r) => format!("{:>8.4}{}", r.l2, if r.success { '*' } else { ' ' }),
                Err(e) => format!("{e}"),
            })
            .collect();
        println!("  sample {i} (y = {y}): {}", cells.join(" "));
    }

    let eval = te.head(100);
    println!("\naggregate over {} test samples:", eval.len());
    for a in &kinds {
        let (m, _) = attack::evaluate(&net, &eval, a)?;
        println!(
            "  {:<9} clean {:.3}  robust {:.3}  mean l2 {}",
            a.kind.as_str(),
            m.clean_acc,
            m.robust_acc,
            m.mean_min_l2.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}

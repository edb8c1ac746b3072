//! Certificates for a hand-built linear classifier and for a trained MLP.
//!
//! Run with `cargo run --release --example certify_reference`.

use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrl::certify::{self, Certification};
use rrl::data;
use rrl::network::{Activation, Network};
use rrl::train::{self, TrainConfig};

fn show(c: &Certification) {
    match c {
        Certification::Certified(c) => {
            println!("  p_y {:.4}  xi {:.4}  nu {:.4}  mu {:.4}", c.p_y, c.xi, c.nu, c.mu);
            if let (Some(r2), Some(rinf), Some(eta)) = (c.r2_analytic, c.rinf_analytic, c.eta_star) {
                println!("  r2 {r2:.5}  rinf {rinf:.5}  eta*(eps={}) {eta:.5}", c.epsilon);
            }
            println!(
                "  bracket [{:.5}, {:.5}]  multi-class bounds {:.5} / {:.5}",
                c.lemma1_lower, c.lemma1_upper, c.mc.nu_bound, c.mc.mu_bound
            );
        }
        Certification::Uncertifiable { predicted, p_y, .. } => {
            println!("  misclassified as {predicted} (p_y {p_y:.4})");
        }
    }
}

fn main() -> rrl::Result<()> {
    // v₊ - v₋ = (2, 0); logits at (1, 0) are (0.5, -0.5)
    let net = Network::new(
        vec![array![[1.0, -1.0], [0.0, 0.0]]],
        Some(vec![array![-0.5, 0.5]]),
        Activation::Relu,
    )?;
    println!("linear reference, x = (1, 0):");
    show(&certify::certify(&net, &array![1.0, 0.0], 0, 0.1)?);

    let d = data::synth_tsipras(600, 10, data::TSIPRAS_ETA, 0)?;
    let (tr, te) = data::split(&d, 0.8, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let init = Network::random(&[10, 32, 16, 2], Activation::Relu, true, &mut rng)?;
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 0.05,
        ..TrainConfig::baseline()
    };
    let out = train::train(&init, &tr, &cfg)?;
    let certs = certify::certify_batch(&out.net, te.inputs.view(), &te.labels, 0.05)?;
    for (i, c) in certs.iter().take(3).enumerate() {
        println!("trained MLP, test sample {i}:");
        show(c);
    }
    let rows: Vec<_> = certs
        .iter()
        .enumerate()
        .map(|(i, c)| certify::CertificateRow::from_certification(i, c, 0.05))
        .collect();
    let mut csv = Vec::new();
    certify::write_certificates(&rows, &mut csv)?;
    let text = String::from_utf8_lossy(&csv);
    println!("\nsummary rows:");
    for line in text.lines().filter(|l| l.starts_with('p') || l.starts_with("mean")) {
        println!("  {line}");
    }
    Ok(())
}

//! Population gradient descent under λν²/2 and 2λ-paired μ² on the
//! Gaussian task. From the antisymmetric initialization the trajectories
//! coincide; from a generic one they separate.
//!
//! Run with `cargo run --release --example gradient_flow`.

use rrl::data::TSIPRAS_ETA;
use rrl::train::{gradient_flow_experiment, FlowInit};

fn main() -> rrl::Result<()> {
    for (name, init) in [("antisymmetric", FlowInit::Bayes), ("generic", FlowInit::Generic { seed: 0 })] {
        let r = gradient_flow_experiment(10, 0.1, TSIPRAS_ETA, 0.5, 1000, 1e-3, init)?;
        println!(
            "{name:<14} max divergence {:.3e}  final divergence {:.3e}  losses {:.6} / {:.6}",
            r.max_divergence, r.final_divergence, r.final_loss_nu, r.final_loss_mu
        );
        let marks: Vec<String> = [0, 99, 499, 999]
            .iter()
            .map(|&t| format!("t={}: {:.2e}", t + 1, r.divergence[t]))
            .collect();
        println!("{:<14} {}", "", marks.join("  "));
    }
    Ok(())
}

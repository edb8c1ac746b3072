//! Training only the last layer on fixed features: the ν²/2 and μ²
//! penalties reach the same optimum, and the μ² optimum has `v₊ = -v₋`.
//!
//! Run with `cargo run --release --example final_layer_equivalence`.

use rrl::train::{prop2_experiment, random_feature_problem};

fn main() -> rrl::Result<()> {
    println!("seed  lambda   |v+ + v-|/|v+ - v-|   nu rel diff   CE rel diff   objective gap");
    for seed in 0..5 {
        let (features, labels) = random_feature_problem(200, 8, 12, seed);
        for lambda in [0.01, 0.1, 1.0] {
            let r = prop2_experiment(&features, &labels, lambda, seed)?;
            println!(
                "{seed:>4}  {lambda:<6}   {:>19.2e}   {:>11.2e}   {:>11.2e}   {:>13.2e}",
                r.jacobian.sum_norm / r.jacobian.diff_norm,
                r.nu_rel_diff,
                r.ce_rel_diff,
                r.objective_gap
            );
        }
    }
    Ok(())
}

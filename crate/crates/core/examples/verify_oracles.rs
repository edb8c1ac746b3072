//! The self-contained oracle suite: closed forms, certificates and
//! inequalities checked against independent numerical oracles.
//!
//! Run with `cargo run --release --example verify_oracles`.

use std::time::Instant;

use rrl::verify::{run_suite, summarize, VerifyConfig, SUITES};

fn main() -> rrl::Result<()> {
    let cfg = VerifyConfig::default();
    let mut total_failed = 0;
    for suite in SUITES {
        let t = Instant::now();
        let rows = run_suite(suite, &cfg)?;
        let (n, failed) = summarize(&rows);
        total_failed += failed;
        let worst = rows
            .iter()
            .filter(|r| r.tolerance > 0.0)
            .map(|r| r.rel_error / r.tolerance)
            .fold(0.0f64, f64::max);
        println!(
            "{suite:<20} {n:>5} rows  {failed} failed  worst error/tolerance {worst:.2e}  ({:.1}s)",
            t.elapsed().as_secs_f64()
        );
        for r in rows.iter().filter(|r| !r.pass).take(5) {
            println!("  {} fixture {}: {} vs {}", r.quantity, r.fixture, r.analytic, r.oracle);
        }
    }
    if total_failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}

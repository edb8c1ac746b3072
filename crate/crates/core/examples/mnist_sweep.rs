//! λ sweep on 7-vs-1 MNIST: baseline per seed, fine-tuning under each
//! regularizer, DeepFool and PGD evaluation, averaged table and SVG charts.
//!
//! Run with `cargo run --release --example mnist_sweep -- [quick|full] [out_dir]`.
//! `quick` (default) uses one seed and three λ values; `full` runs five seeds
//! over the complete grid (about 15 minutes on one core).

use std::fs;
use std::path::{Path, PathBuf};

use rrl::data::{self, binary_subset};
use rrl::plot;
use rrl::train::{self, SweepConfig};

fn main() -> rrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode = args.next().unwrap_or_else(|| "quick".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "mnist-sweep".into()));
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist10k");
    let all = data::load_idx(&root.join("images-idx3-ubyte"), &root.join("labels-idx1-ubyte"))?;
    let (tr, te) = data::split(&binary_subset(&all, 7, 1)?, 0.8, 0)?;
    println!("7 vs 1: {} train, {} test", tr.len(), te.len());

    let mut cfg = SweepConfig::default();
    if mode != "full" {
        cfg.seeds = vec![0];
        cfg.lambda_grid = vec![0.0, 0.1, 1.0];
        cfg.eval_samples = 100;
    }
    let result = train::sweep(&cfg, &tr, &te)?;
    for d in result.divergences() {
        println!("diverged: {} at epoch {} (loss {})", d.model_id, d.epoch, d.loss);
    }
    let rows = result.averaged_rows();
    println!(
        "\n{:<16} {:>6} {:<9} {:>6} {:>6} {:>8}",
        "regularizer", "lambda", "attack", "clean", "robust", "mean l2"
    );
    for r in &rows {
        let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3}"));
        println!(
            "{:<16} {:>6} {:<9} {:>6} {:>6} {:>8}",
            r.reg_kind,
            r.lambda,
            r.attack,
            f(r.clean_acc),
            f(r.robust_acc),
            f(r.mean_min_l2)
        );
    }
    fs::create_dir_all(&out)?;
    for (stem, chart) in plot::sweep_charts(&rows) {
        fs::write(out.join(format!("{stem}.svg")), chart.render())?;
    }
    println!("\ncharts written to {}", out.display());
    Ok(())
}

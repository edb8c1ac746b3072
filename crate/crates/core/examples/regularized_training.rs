//! Baseline training followed by fine-tuning under each regularizer.
//!
//! Run with `cargo run --release --example regularized_training [lambda]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrl::analytic;
use rrl::attack::{self, AttackConfig, AttackKind};
use rrl::data::{self, Dataset};
use rrl::network::{Activation, Network};
use rrl::regularize::{RegKind, RegularizerSpec};
use rrl::train::{self, TrainConfig};

fn mean_constants(net: &Network, d: &Dataset) -> rrl::Result<(f64, f64)> {
    let (mut nu, mut mu) = (0.0, 0.0);
    for i in 0..d.len() {
        let map = net.local_linear_map(&d.sample(i).0)?;
        nu += analytic::cross_lipschitz(&map);
        mu += analytic::lipschitz(&map);
    }
    Ok((nu / d.len() as f64, mu / d.len() as f64))
}

fn main() -> rrl::Result<()> {
    let lambda: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("lambda must be a number"))
        .unwrap_or(0.5);
    let d = data::synth_tsipras(1000, 20, data::TSIPRAS_ETA, 3)?;
    let (tr, te) = data::split(&d, 0.8, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let init = Network::random(&[20, 64, 32, 2], Activation::Relu, true, &mut rng)?;
    let base = train::train(
        &init,
        &tr,
        &TrainConfig {
            epochs: 15,
            learning_rate: 0.05,
            ..TrainConfig::baseline()
        },
    )?;
    let df = AttackConfig::new(AttackKind::DeepFool).unclipped();
    let report = |name: &str, net: &Network, obj: f64| -> rrl::Result<()> {
        let (acc, _) = train::evaluate_loss(net, &te)?;
        let (nu, mu) = mean_constants(net, &te)?;
        let (m, _) = attack::evaluate(net, &te, &df)?;
        println!(
            "{name:<16} objective {obj:>8.4}  test acc {acc:.3}  mean nu {nu:.3}  mean mu {mu:.3}  DeepFool l2 {:.4}",
            m.mean_min_l2.unwrap_or(f64::NAN)
        );
        Ok(())
    };
    report("baseline", &base.net, base.trace.last().map_or(f64::NAN, |r| r.objective))?;
    for kind in [
        RegKind::Jacobian,
        RegKind::CrossLipschitz,
        RegKind::InputGradient,
        RegKind::Curvature,
    ] {
        let spec = RegularizerSpec::new(kind, lambda)?;
        match train::finetune(&base.net, &tr, spec, &TrainConfig::finetune()) {
            Ok(out) => report(kind.as_str(), &out.net, out.trace.last().map_or(f64::NAN, |r| r.objective))?,
            Err(rrl::Error::Divergence { epoch, loss }) => {
                println!("{:<16} diverged at epoch {epoch} (loss {loss})", kind.as_str())
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

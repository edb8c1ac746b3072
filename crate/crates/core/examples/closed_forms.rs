//! Closed-form input gradient and Hessian of the loss against finite
//! differences, plus the four regularizer values at one sample.
//!
//! Run with `cargo run --release --example closed_forms`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rrl::analytic;
use rrl::linalg::{frobenius, norm2, Vector};
use rrl::network::{Activation, Network};
use rrl::oracle::{self, rel_error_mat, rel_error_vec};
use rrl::regularize::{reg_value, RegKind, RegularizerSpec};

fn main() -> rrl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (widths, act) in [
        (vec![6, 16, 2], Activation::Relu),
        (vec![6, 16, 12, 3], Activation::Leaky { alpha: 0.1 }),
        (vec![8, 24, 10], Activation::Relu),
    ] {
        let net = Network::random(&widths, act, true, &mut rng)?;
        let x = Vector::from_iter((0..widths[0]).map(|_| StandardNormal.sample(&mut rng)));
        let y = net.predict(&x)?;
        let map = net.local_linear_map(&x)?;
        let rec = analytic::softmax_ce(&map.evaluate(&x), y)?;
        let forms = analytic::input_derivatives(&map, &rec)?;
        let h = forms.hessian.materialize()?;

        let loss = |z: &Vector| net.loss_input_gradient(z, y).map(|r| r.0).unwrap_or(f64::NAN);
        let g_fd = oracle::fd_gradient(loss, &x, oracle::FD_GRADIENT_STEP);
        let h_fd = oracle::fd_hessian(loss, &x, oracle::FD_HESSIAN_STEP);

        println!(
            "widths {widths:?}, K = {}, boundary margin {:.2e}",
            rec.num_classes(),
            net.boundary_margin(&x)?
        );
        println!(
            "  |grad| {:.6}  rel err vs FD {:.2e}",
            norm2(&forms.gradient),
            rel_error_vec(&forms.gradient, &g_fd)
        );
        println!(
            "  |H|_F  {:.6}  rel err vs FD {:.2e}  spectral norm {:.6}",
            frobenius(h.view()),
            rel_error_mat(&h, &h_fd),
            forms.hessian.spectral_norm()?
        );
        println!(
            "  nu {:.4}  mu {:.4}  p_y {:.4}",
            analytic::cross_lipschitz(&map),
            analytic::lipschitz(&map),
            rec.p_y()
        );
        for kind in [
            RegKind::Jacobian,
            RegKind::CrossLipschitz,
            RegKind::InputGradient,
            RegKind::Curvature,
        ] {
            if !kind.supports(rec.num_classes()) {
                continue;
            }
            let v = reg_value(&RegularizerSpec::new(kind, 1.0)?, &map, &rec)?;
            println!("  {kind:<16} {v:.6}");
        }
    }
    Ok(())
}

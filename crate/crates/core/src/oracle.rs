//! Brute-force and numerical oracles.
//!
//! Nothing here uses the closed forms of [`crate::analytic`] or
//! [`crate::certify`]; the oracles only see scalar fields, dense matrices and
//! quadratic models, so agreement with the closed forms is an independent check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, norm2, Matrix, Norm, Vector, SYMMETRY_TOL};

pub const FD_GRADIENT_STEP: f64 = 1e-4;
pub const FD_HESSIAN_STEP: f64 = 1e-3;
pub const MAX_VERTEX_DIM: usize = 12;
pub const MAX_JACOBI_DIM: usize = 64;
pub const DEFAULT_RESTARTS: usize = 1000;
/// Radius shrink used when searching for a strictly smaller feasible point.
pub const CONFIRM_SHRINK: f64 = 1e-6;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient<F: Fn(&Vector) -> f64>(f: F, x: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Four-point central second differences, symmetrized.
pub fn fd_hessian<F: Fn(&Vector) -> f64>(f: F, x: &Vector, h: f64) -> Matrix {
    let n = x.len();
    let mut hess = Matrix::zeros((n, n));
    let mut xp = x.clone();
    let f0 = f(x);
    for i in 0..n {
        let xi = xp[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        hess[[i, i]] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..n {
            let xj = xp[j];
            let mut corner = |si: f64, sj: f64| {
                xp[i] = xi + si * h;
                xp[j] = xj + sj * h;
                let v = f(&xp);
                xp[i] = xi;
                xp[j] = xj;
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h);
            hess[[i, j]] = v;
            hess[[j, i]] = v;
        }
    }
    hess
}

/// Full spectrum of a symmetric matrix, eigenvalues descending; eigenvectors
/// are the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub sweeps: usize,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is at most
/// `1e-12 · max(1, ‖A‖_F)`.
pub fn dense_eig_sym(a: &Matrix) -> Result<Spectrum> {
    let n = a.nrows();
    if n > MAX_JACOBI_DIM {
        return Err(Error::Oracle(format!(
            "dense eigensolver limited to n <= {MAX_JACOBI_DIM}, got {n}"
        )));
    }
    let residual = asymmetry(a)?;
    if residual > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { residual });
    }
    let mut m = (a + &a.t()) * 0.5;
    let mut q = Matrix::eye(n);
    let scale = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let off = |m: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[[i, j]] * m[[i, j]];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) > 1e-12 * scale {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                residual: off(&m),
            });
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m[[p, r]];
                if apr.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[r, r]] - m[[p, p]]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkr = m[[k, r]];
                    m[[k, p]] = c * mkp - s * mkr;
                    m[[k, r]] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mrk = m[[r, k]];
                    m[[p, k]] = c * mpk - s * mrk;
                    m[[r, k]] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let qkp = q[[k, p]];
                    let qkr = q[[k, r]];
                    q[[k, p]] = c * qkp - s * qkr;
                    q[[k, r]] = s * qkp + c * qkr;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Matrix::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&q.column(src));
    }
    Ok(Spectrum { values, vectors, sweeps })
}

/// `∇ᵀr + ½ rᵀHr`.
fn model_gain(grad: &Vector, h: &Matrix, r: &Vector) -> f64 {
    grad.dot(r) + 0.5 * r.dot(&h.dot(r))
}

/// Smallest `t > 0` with `a t + b t² / 2 >= xi`, or `+∞`.
fn ray_root(a: f64, b: f64, xi: f64) -> f64 {
    if xi <= 0.0 {
        return 0.0;
    }
    if b <= 0.0 {
        return if a > 0.0 { xi / a } else { f64::INFINITY };
    }
    (-a + (a * a + 2.0 * b * xi).sqrt()) / b
}

#[derive(Debug, Clone)]
pub struct MinPerturbation {
    pub value: f64,
    pub minimizer: Vector,
    /// The minimizer is feasible and the randomized search found nothing smaller.
    pub confirmed: bool,
    pub restarts: usize,
}

fn check_quadratic(grad: &Vector, h: &Matrix) -> Result<()> {
    if h.nrows() != grad.len() || h.ncols() != grad.len() {
        return Err(Error::DimensionMismatch {
            context: "quadratic model",
            expected: grad.len(),
            found: h.nrows(),
        });
    }
    Ok(())
}

/// Minimal `‖r‖` (l2 or l∞) with `L + ∇ᵀr + ½ rᵀHr >= β` for PSD `H`.
pub fn min_pert_quadratic(
    loss: f64,
    grad: &Vector,
    h: &Matrix,
    beta: f64,
    norm: Norm,
    restarts: usize,
    seed: u64,
) -> Result<MinPerturbation> {
    check_quadratic(grad, h)?;
    let xi = beta - loss;
    if xi < 0.0 {
        return Err(Error::Misclassified { slack: xi });
    }
    if xi == 0.0 {
        return Ok(MinPerturbation {
            value: 0.0,
            minimizer: Vector::zeros(grad.len()),
            confirmed: true,
            restarts: 0,
        });
    }
    match norm {
        Norm::L2 => min_pert_l2(grad, h, xi, restarts, seed),
        Norm::Inf => min_pert_linf(grad, h, xi),
        Norm::L1 => Err(Error::Oracle("l1 minimal perturbation is not provided".into())),
    }
}

fn min_pert_l2(grad: &Vector, h: &Matrix, xi: f64, restarts: usize, seed: u64) -> Result<MinPerturbation> {
    let n = grad.len();
    let spec = dense_eig_sym(h)?;
    let lmax = spec.values.first().copied().unwrap_or(0.0).max(0.0);
    let gt = spec.vectors.t().dot(grad);
    let gnorm = norm2(grad);
    let tiny = 1e-13 * lmax.max(1.0);

    let minimizer = if lmax <= tiny {
        // no curvature: the model is linear
        if gnorm == 0.0 {
            return Err(Error::Oracle("constant quadratic model never reaches the threshold".into()));
        }
        grad * (xi / (gnorm * gnorm))
    } else {
        let top: Vec<bool> = spec.values.iter().map(|&l| l >= lmax - 1e-10 * lmax.max(1.0)).collect();
        let top_weight: f64 = gt.iter().zip(&top).filter(|(_, &t)| t).map(|(g, _)| g * g).sum();
        // r(λ) = (λI - H)⁻¹ ∇ in the eigenbasis
        let coords = |lam: f64, skip_top: bool| -> Vector {
            Vector::from_iter((0..n).map(|i| if skip_top && top[i] { 0.0 } else { gt[i] / (lam - spec.values[i]) }))
        };
        let gain_at = |c: &Vector| -> f64 { (0..n).map(|i| gt[i] * c[i] + 0.5 * spec.values[i] * c[i] * c[i]).sum() };
        let hard = top_weight <= 1e-24 * gnorm.max(1e-300).powi(2);
        let hard_base = hard.then(|| {
            let c = coords(lmax, true);
            let gain = gain_at(&c);
            (c, gain)
        });
        let coords_final = match hard_base {
            Some((c, gain)) if gain < xi => {
                let tau = (2.0 * (xi - gain) / lmax).sqrt();
                let i_top = top.iter().position(|&t| t).expect("top eigenvalue");
                let mut c = c;
                c[i_top] = tau;
                c
            }
            _ => {
                let f = |lam: f64| gain_at(&coords(lam, hard));
                let mut lo = lmax;
                let mut hi = lmax + lmax.max(gnorm).max(1e-12);
                let mut guard = 0;
                while f(hi) >= xi {
                    hi = lmax + 2.0 * (hi - lmax);
                    guard += 1;
                    if guard > 2000 {
                        return Err(Error::Oracle("secular bracket failed".into()));
                    }
                }
                for _ in 0..300 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if f(mid) >= xi {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                // lo is feasible unless it is still lmax itself
                let lam = if lo > lmax { lo } else { hi };
                coords(lam, hard)
            }
        };
        spec.vectors.dot(&coords_final)
    };
    let value = norm2(&minimizer);
    let feasible = model_gain(grad, h, &minimizer) >= xi * (1.0 - 1e-9);
    let smaller = search_smaller_l2(grad, h, xi, value * (1.0 - CONFIRM_SHRINK), restarts, seed);
    Ok(MinPerturbation {
        value,
        minimizer,
        confirmed: feasible && !smaller,
        restarts,
    })
}

/// Projected ascent of the (convex) model gain on the sphere of radius `rho`
/// from random starts; true if any start reaches the threshold.
pub fn search_smaller_l2(grad: &Vector, h: &Matrix, xi: f64, rho: f64, restarts: usize, seed: u64) -> bool {
    let n = grad.len();
    if rho <= 0.0 || n == 0 {
        return false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let mut r: Vector = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = norm2(&r);
        if len == 0.0 {
            continue;
        }
        r *= rho / len;
        let mut gain = model_gain(grad, h, &r);
        for _ in 0..500 {
            if gain >= xi {
                return true;
            }
            // maximizing the linearization over the sphere never decreases a convex gain
            let d = grad + &h.dot(&r);
            let dn = norm2(&d);
            if dn == 0.0 {
                break;
            }
            let next = d * (rho / dn);
            let next_gain = model_gain(grad, h, &next);
            let done = next_gain - gain <= 1e-15 * gain.abs().max(1e-300);
            r = next;
            gain = next_gain;
            if done {
                break;
            }
        }
        if gain >= xi {
            return true;
        }
    }
    false
}

fn for_each_sign_vertex<F: FnMut(&Vector)>(n: usize, mut f: F) {
    let mut s = Vector::from_elem(n, -1.0);
    for mask in 0u32..(1u32 << n) {
        for i in 0..n {
            s[i] = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
        }
        f(&s);
    }
}

fn min_pert_linf(grad: &Vector, h: &Matrix, xi: f64) -> Result<MinPerturbation> {
    let n = grad.len();
    if n > MAX_VERTEX_DIM {
        return Err(Error::Oracle(format!(
            "vertex enumeration limited to n <= {MAX_VERTEX_DIM}, got {n}"
        )));
    }
    // {ε : max over the box >= ξ} = ∪_s {ε : ε aₛ + ½ε² bₛ >= ξ}
    let mut best = f64::INFINITY;
    let mut arg = Vector::zeros(n);
    for_each_sign_vertex(n, |s| {
        let t = ray_root(grad.dot(s), s.dot(&h.dot(s)), xi);
        if t < best {
            best = t;
            arg = s * t;
        }
    });
    if !best.is_finite() {
        return Err(Error::Oracle("no vertex direction reaches the threshold".into()));
    }
    Ok(MinPerturbation {
        value: best,
        minimizer: arg,
        confirmed: true,
        restarts: 1 << n,
    })
}

#[derive(Debug, Clone)]
pub struct BoxMaximum {
    pub value: f64,
    pub vertex: Vector,
}

/// Exact maximum of `L + ∇ᵀr + ½ rᵀHr` over `‖r‖∞ <= ε` by vertex enumeration.
pub fn max_loss_box(loss: f64, grad: &Vector, h: &Matrix, eps: f64) -> Result<BoxMaximum> {
    check_quadratic(grad, h)?;
    let n = grad.len();
    if n > MAX_VERTEX_DIM {
        return Err(Error::Oracle(format!(
            "vertex enumeration limited to n <= {MAX_VERTEX_DIM}, got {n}"
        )));
    }
    if eps < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {eps}")));
    }
    let mut best = BoxMaximum {
        value: f64::NEG_INFINITY,
        vertex: Vector::zeros(n),
    };
    for_each_sign_vertex(n, |s| {
        let r = s * eps;
        let v = loss + model_gain(grad, h, &r);
        if v > best.value {
            best = BoxMaximum { value: v, vertex: r };
        }
    });
    Ok(best)
}

/// `|a - b| / max(|b|, floor)`.
pub fn rel_error(analytic: f64, oracle: f64) -> f64 {
    (analytic - oracle).abs() / oracle.abs().max(1e-300)
}

/// `‖a - b‖₂ / max(‖b‖₂, floor)`.
pub fn rel_error_vec(analytic: &Vector, oracle: &Vector) -> f64 {
    norm2(&(analytic - oracle)) / norm2(oracle).max(1e-300)
}

pub fn rel_error_mat(analytic: &Matrix, oracle: &Matrix) -> f64 {
    let diff: f64 = (analytic - oracle).iter().map(|v| v * v).sum::<f64>().sqrt();
    let base: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / base.max(1e-300)
}

/// One comparison between a closed form and its oracle.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub suite: String,
    pub quantity: String,
    pub fixture: usize,
    pub analytic: f64,
    pub oracle: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub boundary_margin: Option<f64>,
    pub step: Option<f64>,
}

impl OracleReport {
    /// Relative comparison; `pass ⇔ rel_error <= tolerance`.
    pub fn relative(suite: &str, quantity: &str, fixture: usize, analytic: f64, oracle: f64, tolerance: f64) -> Self {
        let rel = rel_error(analytic, oracle);
        Self::with_error(suite, quantity, fixture, analytic, oracle, rel, tolerance)
    }

    pub fn with_error(suite: &str, quantity: &str, fixture: usize, analytic: f64, oracle: f64, rel_error: f64, tolerance: f64) -> Self {
        Self {
            suite: suite.into(),
            quantity: quantity.into(),
            fixture,
            analytic,
            oracle,
            rel_error,
            tolerance,
            pass: rel_error <= tolerance,
            boundary_margin: None,
            step: None,
        }
    }

    /// An inequality `lhs <= rhs` recorded with the violation as its error.
    pub fn inequality(suite: &str, quantity: &str, fixture: usize, lhs: f64, rhs: f64, slack: f64) -> Self {
        let excess = (lhs - rhs).max(0.0) / rhs.abs().max(1.0);
        Self::with_error(suite, quantity, fixture, lhs, rhs, excess, slack)
    }

    pub fn guarded(mut self, margin: f64, step: f64) -> Self {
        self.boundary_margin = Some(margin);
        self.step = Some(step);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fd_gradient_linear_and_quadratic() {
        let a = array![1.5, -2.0, 0.25];
        let g = fd_gradient(|x| a.dot(x), &array![0.3, 0.1, -0.7], FD_GRADIENT_STEP);
        assert!(rel_error_vec(&g, &a) < 1e-10);
        let m = array![[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 3.0]];
        let x = array![0.2, -0.4, 1.0];
        let g = fd_gradient(|x| 0.5 * x.dot(&m.dot(x)), &x, FD_GRADIENT_STEP);
        assert!(rel_error_vec(&g, &m.dot(&x)) < 1e-8);
        let hm = fd_hessian(|x| 0.5 * x.dot(&m.dot(x)), &x, FD_HESSIAN_STEP);
        assert!(rel_error_mat(&hm, &m) < 1e-8);
        assert!(asymmetry(&hm).unwrap() <= 1e-8);
    }

    #[test]
    fn jacobi_examples() {
        let s = dense_eig_sym(&array![[3.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(s.values, vec![3.0, 1.0]);
        let w = array![1.0, 2.0, -2.0];
        let col = w.clone().insert_axis(ndarray::Axis(1));
        let s = dense_eig_sym(&col.dot(&col.t())).unwrap();
        assert!((s.values[0] - 9.0).abs() < 1e-12);
        assert!(s.values[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(dense_eig_sym(&array![[1.0, 2.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn jacobi_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = Matrix::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let a = &b + &b.t();
        let s = dense_eig_sym(&a).unwrap();
        let d = Matrix::from_diag(&Vector::from(s.values.clone()));
        let back = s.vectors.dot(&d).dot(&s.vectors.t());
        assert!(rel_error_mat(&back, &a) < 1e-12);
        assert!(s.values.windows(2).all(|w| w[0] >= w[1]));
    }

    fn reference_quadratic() -> (f64, Vector, Matrix) {
        let p: f64 = 1.0 / (1.0 + (-1.0f64).exp());
        let g = array![2.0 * (p - 1.0), 0.0];
        let h = array![[4.0 * p * (1.0 - p), 0.0], [0.0, 0.0]];
        (-p.ln(), g, h)
    }

    #[test]
    fn reference_min_perturbation() {
        let (loss, g, h) = reference_quadratic();
        let r = min_pert_quadratic(loss, &g, &h, 2f64.ln(), Norm::L2, 200, 1).unwrap();
        assert!((r.value - 0.5134962827967225).abs() < 1e-12, "{}", r.value);
        assert!(r.confirmed);
        let z = min_pert_quadratic(loss, &g, &h, loss, Norm::L2, 10, 1).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn linf_variant() {
        let p: f64 = 1.0 / (1.0 + (-1.0f64).exp());
        let w = array![1.0, 1.0];
        let g = &w * (p - 1.0);
        let col = w.clone().insert_axis(ndarray::Axis(1));
        let h = col.dot(&col.t()) * (p * (1.0 - p));
        let r = min_pert_quadratic(-p.ln(), &g, &h, 2f64.ln(), Norm::Inf, 0, 1).unwrap();
        assert!((r.value - 0.5134962827967225).abs() < 1e-12);
    }

    #[test]
    fn hard_case_uses_top_eigenvector() {
        // gradient orthogonal to the top eigenvector
        let g = array![0.0, 1.0];
        let h = array![[2.0, 0.0], [0.0, 0.5]];
        let xi = 10.0;
        let r = min_pert_quadratic(0.0, &g, &h, xi, Norm::L2, 500, 3).unwrap();
        assert!(r.confirmed);
        assert!(model_gain(&g, &h, &r.minimizer) >= xi * (1.0 - 1e-9));
        assert!(!search_smaller_l2(&g, &h, xi, r.value * 0.999, 2000, 9));
    }

    #[test]
    fn wrong_radius_is_refuted() {
        let (loss, g, h) = reference_quadratic();
        let xi = 2f64.ln() - loss;
        assert!(search_smaller_l2(&g, &h, xi, 0.52, 50, 2));
    }

    #[test]
    fn box_maximum_reference() {
        let (loss, g, h) = reference_quadratic();
        let m = max_loss_box(loss, &g, &h, 0.0).unwrap();
        assert_eq!(m.value, loss);
        let m = max_loss_box(loss, &g, &h, 0.1).unwrap();
        assert!((m.value - 0.370982).abs() < 1e-6);
        assert_eq!(m.vertex[0], -0.1);
        assert!(max_loss_box(0.0, &Vector::zeros(13), &Matrix::zeros((13, 13)), 0.1).is_err());
    }
}

//! Batched forward/backward passes.
//!
//! Activation patterns are treated as constants (the usual piecewise-linear
//! subgradient). Regularizers of the form `λ φ(p_y) ‖V U‖_F²` are
//! differentiated through `V = W_1 D_1 ⋯ D_{d-1} W_d` directly: the columns
//! `V u_k` come from a frozen-pattern backward pass, and
//! `∂‖A W_j B u‖² / ∂W_j = 2 Aᵀ(V u)(B u)ᵀ` needs one more frozen-pattern
//! forward pass of `V u` through the lower layers.

use ndarray::{ArrayView2, Axis};

use super::Network;
use crate::analytic::log_softmax_row;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::regularize::{penalty_form, RegularizerSpec};

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Option<Vec<Vector>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Matrix::zeros(w.raw_dim())).collect(),
            biases: net.biases.as_ref().map(|bs| bs.iter().map(|b| Vector::zeros(b.len())).collect()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.biases.as_mut(), other.biases.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in self.biases.iter_mut().flatten() {
            *b *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self.weights.iter().flat_map(|w| w.iter()).map(|v| v * v).sum();
        let b: f64 = self.biases.iter().flatten().flat_map(|b| b.iter()).map(|v| v * v).sum();
        (w + b).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().flatten().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Zeroes every layer except the last.
    pub fn keep_final_layer_only(&mut self) {
        let d = self.weights.len();
        for w in &mut self.weights[..d - 1] {
            w.fill(0.0);
        }
        if let Some(bs) = self.biases.as_mut() {
            for b in &mut bs[..d - 1] {
                b.fill(0.0);
            }
        }
    }
}

/// Sums over a batch; divide by `count` for means.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub reg_sum: f64,
    pub correct: usize,
    pub count: usize,
    /// Smallest |hidden preactivation| seen in the batch.
    pub min_margin: f64,
}

impl BatchStats {
    pub fn merge(&mut self, other: &BatchStats) {
        if self.count == 0 {
            *self = *other;
            return;
        }
        self.loss_sum += other.loss_sum;
        self.reg_sum += other.reg_sum;
        self.correct += other.correct;
        self.count += other.count;
        self.min_margin = self.min_margin.min(other.min_margin);
    }
}

pub(crate) struct BatchTrace {
    /// `A_0 = X, ..., A_{d-1}`, one row per sample.
    pub acts: Vec<Matrix>,
    /// Multipliers of hidden layers `1..d-1`.
    pub masks: Vec<Matrix>,
    pub logits: Matrix,
    pub min_margin: f64,
}

fn repeat_rows(m: &Matrix, times: usize) -> Matrix {
    if times == 1 {
        return m.clone();
    }
    let (rows, cols) = m.dim();
    let mut out = Matrix::zeros((rows * times, cols));
    for (i, row) in m.rows().into_iter().enumerate() {
        for t in 0..times {
            out.row_mut(i * times + t).assign(&row);
        }
    }
    out
}

impl Network {
    pub(crate) fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<BatchTrace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "batch input",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        let d = self.depth();
        let mut acts = Vec::with_capacity(d);
        let mut masks = Vec::with_capacity(d.saturating_sub(1));
        acts.push(x.to_owned());
        let mut min_margin = f64::INFINITY;
        for j in 0..d - 1 {
            let mut pre = acts[j].dot(&self.weights[j]);
            if let Some(bs) = &self.biases {
                pre += &bs[j];
            }
            min_margin = pre.iter().fold(min_margin, |m, p| m.min(p.abs()));
            let mask = pre.mapv(|p| self.activation.multiplier(p));
            pre *= &mask;
            masks.push(mask);
            acts.push(pre);
        }
        let mut logits = acts[d - 1].dot(&self.weights[d - 1]);
        if let Some(bs) = &self.biases {
            logits += &bs[d - 1];
        }
        Ok(BatchTrace {
            acts,
            masks,
            logits,
            min_margin,
        })
    }

    /// Backpropagates logit deltas (one row per sample) into parameter gradients.
    fn backward_batch(&self, trace: &BatchTrace, delta_z: Matrix, grads: &mut Gradients) {
        let mut delta = delta_z;
        for j in (0..self.depth()).rev() {
            grads.weights[j] += &trace.acts[j].t().dot(&delta);
            if let Some(gb) = grads.biases.as_mut() {
                gb[j] += &delta.sum_axis(Axis(0));
            }
            if j > 0 {
                delta = delta.dot(&self.weights[j].t());
                delta *= &trace.masks[j - 1];
            }
        }
    }

    /// Rows `(V u_k)ᵀ` for every sample (row index `b * r + k`) together with
    /// the frozen-pattern sensitivities `R_l` (rows `(B_l u_k)ᵀ`), `l = 1..d`.
    fn penalty_rows(&self, trace: &BatchTrace, u: &Matrix) -> (Matrix, Vec<Matrix>) {
        let batch = trace.acts[0].nrows();
        let r = u.ncols();
        let d = self.depth();
        let mut sens: Vec<Matrix> = Vec::with_capacity(d);
        let top = {
            let ut = u.t().to_owned();
            let mut m = Matrix::zeros((batch * r, u.nrows()));
            for b in 0..batch {
                m.slice_mut(ndarray::s![b * r..(b + 1) * r, ..]).assign(&ut);
            }
            m
        };
        sens.push(top);
        for l in (1..d).rev() {
            let prev = sens.last().expect("non-empty");
            let mut next = prev.dot(&self.weights[l].t());
            next *= &repeat_rows(&trace.masks[l - 1], r);
            sens.push(next);
        }
        sens.reverse();
        let vu = sens[0].dot(&self.weights[0].t());
        (vu, sens)
    }

    /// Mean gradient of `ce_weight * CE + reg` over the batch.
    pub(crate) fn objective_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        ce_weight: f64,
        reg: Option<&RegularizerSpec>,
    ) -> Result<(Gradients, BatchStats)> {
        let batch = x.nrows();
        if y.len() != batch {
            return Err(Error::DimensionMismatch {
                context: "batch labels",
                expected: batch,
                found: y.len(),
            });
        }
        if batch == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let k = self.num_classes();
        if let Some(&bad) = y.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} >= K = {k}")));
        }
        let trace = self.forward_batch(x)?;
        let inv_b = 1.0 / batch as f64;

        let mut stats = BatchStats {
            count: batch,
            min_margin: trace.min_margin,
            ..Default::default()
        };
        let mut probs = Matrix::zeros((batch, k));
        for (b, row) in trace.logits.rows().into_iter().enumerate() {
            let logp = log_softmax_row(row);
            stats.loss_sum -= logp[y[b]];
            if super::argmax(row) == y[b] {
                stats.correct += 1;
            }
            probs.row_mut(b).assign(&logp.mapv(f64::exp));
        }

        let mut delta_z = probs.clone();
        for (b, &c) in y.iter().enumerate() {
            delta_z[[b, c]] -= 1.0;
        }
        delta_z *= ce_weight * inv_b;

        let mut grads = Gradients::zeros_like(self);
        let form = match reg {
            Some(spec) if spec.lambda != 0.0 => penalty_form(spec, k)?,
            _ => None,
        };
        if let Some(form) = form {
            let r = form.u.ncols();
            let (vu, sens) = self.penalty_rows(&trace, &form.u);
            // per-sample quadratic form Q_b = Σ_k ‖V u_k‖²
            let q: Vec<f64> = (0..batch)
                .map(|b| vu.slice(ndarray::s![b * r..(b + 1) * r, ..]).iter().map(|v| v * v).sum())
                .collect();
            let mut row_coef = Vec::with_capacity(batch * r);
            for b in 0..batch {
                let p_y = probs[[b, y[b]]];
                let (phi, dphi) = form.confidence_weight(p_y);
                stats.reg_sum += form.lambda * phi * q[b];
                // dependence through p_y: ∂p_y/∂z = p_y (e_y - p)
                let coef = form.lambda * dphi * q[b] * inv_b;
                if coef != 0.0 {
                    for c in 0..k {
                        let e = if c == y[b] { 1.0 } else { 0.0 };
                        delta_z[[b, c]] += coef * p_y * (e - probs[[b, c]]);
                    }
                }
                let w = 2.0 * form.lambda * phi * inv_b;
                row_coef.extend(std::iter::repeat_n(w, r));
            }
            // dependence through V
            let mut fwd = vu;
            for (mut row, &w) in fwd.rows_mut().into_iter().zip(&row_coef) {
                row *= w;
            }
            let d = self.depth();
            for l in 0..d {
                grads.weights[l] += &fwd.t().dot(&sens[l]);
                if l + 1 < d {
                    fwd = fwd.dot(&self.weights[l]);
                    fwd *= &repeat_rows(&trace.masks[l], r);
                }
            }
        }

        self.backward_batch(&trace, delta_z, &mut grads);
        Ok((grads, stats))
    }

    /// Mean CE (+ regularizer) gradient over a batch given as rows of `x`.
    ///
    /// `ce_weight` scales the cross-entropy part (0 gives the regularizer alone).
    pub fn batch_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        ce_weight: f64,
        reg: Option<&RegularizerSpec>,
    ) -> Result<(Gradients, BatchStats)> {
        self.objective_gradients(x, y, ce_weight, reg)
    }

    /// Mean CE and regularizer values over a batch (no gradients).
    pub fn batch_objective(&self, x: ArrayView2<'_, f64>, y: &[usize], reg: Option<&RegularizerSpec>) -> Result<BatchStats> {
        let k = self.num_classes();
        let trace = self.forward_batch(x)?;
        let mut stats = BatchStats {
            count: x.nrows(),
            min_margin: trace.min_margin,
            ..Default::default()
        };
        let mut probs = Vec::with_capacity(x.nrows());
        for (b, row) in trace.logits.rows().into_iter().enumerate() {
            let logp = log_softmax_row(row);
            stats.loss_sum -= logp[y[b]];
            if super::argmax(row) == y[b] {
                stats.correct += 1;
            }
            probs.push(logp[y[b]].exp());
        }
        let form = match reg {
            Some(spec) if spec.lambda != 0.0 => penalty_form(spec, k)?,
            _ => None,
        };
        if let Some(form) = form {
            let r = form.u.ncols();
            let (vu, _) = self.penalty_rows(&trace, &form.u);
            for (b, p_y) in probs.iter().enumerate() {
                let q: f64 = vu.slice(ndarray::s![b * r..(b + 1) * r, ..]).iter().map(|v| v * v).sum();
                stats.reg_sum += form.lambda * form.confidence_weight(*p_y).0 * q;
            }
        }
        Ok(stats)
    }
}

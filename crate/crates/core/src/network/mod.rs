//! General-ReLU multi-layer perceptrons.
//!
//! Layer `j` holds `W_j` with shape `n_{j-1} x n_j` and computes
//! `a_j = σ(W_jᵀ a_{j-1} + b_j)`; the last layer is affine and produces the
//! logits. Around any input the network is affine, `g(x') = Vᵀx' + c` on the
//! polytope of inputs sharing the activation pattern of `x`.

mod backprop;
mod format;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub use backprop::{BatchStats, Gradients};
pub use format::{read_weights, write_weights, WEIGHT_FILE_MAGIC};

/// Piecewise-linear activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Leaky { alpha: f64 },
}

impl Activation {
    /// Multiplier applied to non-positive preactivations.
    pub fn slope(&self) -> f64 {
        match *self {
            Activation::Relu => 0.0,
            Activation::Leaky { alpha } => alpha,
        }
    }

    /// Multiplier for a preactivation; exactly zero counts as inactive.
    #[inline]
    pub fn multiplier(&self, pre: f64) -> f64 {
        if pre > 0.0 {
            1.0
        } else {
            self.slope()
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Relu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    weights: Vec<Matrix>,
    biases: Option<Vec<Vector>>,
    activation: Activation,
}

/// Intermediate values of a single forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `a_0 = x, a_1, ..., a_{d-1}`.
    pub activations: Vec<Vector>,
    /// Hidden preactivations `W_jᵀ a_{j-1} + b_j` for `j = 1..d-1`.
    pub preactivations: Vec<Vector>,
    pub logits: Vector,
}

/// Per-hidden-layer multipliers (1 for active units, α otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<f64>>,
}

impl ActivationPattern {
    /// Compact signature: one character per hidden unit, `1` active, `0` not.
    pub fn signature(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.iter().map(|&m| if m == 1.0 { '1' } else { '0' }).collect::<String>())
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// The affine restriction `g(x') = Vᵀx' + c` valid on the polytope of `x`.
#[derive(Debug, Clone)]
pub struct LocalLinearMap {
    /// `n x K`; column `k` is the gradient of logit `k`.
    pub v: Matrix,
    /// Affine offset, zero for bias-free networks.
    pub c: Vector,
    pub pattern: ActivationPattern,
}

impl LocalLinearMap {
    pub fn num_classes(&self) -> usize {
        self.v.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn column(&self, k: usize) -> ArrayView1<'_, f64> {
        self.v.column(k)
    }

    /// `Vᵀx + c`.
    pub fn evaluate(&self, x: &Vector) -> Vector {
        self.v.t().dot(x) + &self.c
    }

    /// Builds a map directly from its parts (used by fixtures and the
    /// closed-form tests; the pattern is left empty).
    pub fn from_parts(v: Matrix, c: Vector) -> Self {
        Self {
            v,
            c,
            pattern: ActivationPattern { layers: Vec::new() },
        }
    }
}

impl Network {
    pub fn new(weights: Vec<Matrix>, biases: Option<Vec<Vector>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidNetwork("no layers".into()));
        }
        for (j, pair) in weights.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} has {} outputs but layer {} expects {} inputs",
                    j + 1,
                    pair[0].ncols(),
                    j + 2,
                    pair[1].nrows()
                )));
            }
        }
        let k = weights.last().map(|w| w.ncols()).unwrap_or(0);
        if k < 2 {
            return Err(Error::InvalidNetwork(format!("need at least 2 classes, got {k}")));
        }
        let alpha = activation.slope();
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidNetwork(format!("leaky slope {alpha} outside [0, 1)")));
        }
        if let Some(bs) = &biases {
            if bs.len() != weights.len() {
                return Err(Error::InvalidNetwork(format!(
                    "{} bias vectors for {} layers",
                    bs.len(),
                    weights.len()
                )));
            }
            for (j, (b, w)) in bs.iter().zip(&weights).enumerate() {
                if b.len() != w.ncols() {
                    return Err(Error::InvalidNetwork(format!(
                        "bias {} has length {}, layer width is {}",
                        j + 1,
                        b.len(),
                        w.ncols()
                    )));
                }
            }
        }
        let finite =
            weights.iter().all(|w| w.iter().all(|v| v.is_finite())) && biases.iter().flatten().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// He-normal initialized network with zero biases.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], activation: Activation, with_bias: bool, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidNetwork("need input and output widths".into()));
        }
        let weights = widths
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Matrix::from_shape_fn((w[0], w[1]), |_| normal.sample(rng))
            })
            .collect();
        let biases = with_bias.then(|| widths[1..].iter().map(|&n| Vector::zeros(n)).collect());
        Self::new(weights, biases, activation)
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> Option<&[Vector]> {
        self.biases.as_deref()
    }

    pub fn biases_mut(&mut self) -> Option<&mut [Vector]> {
        self.biases.as_deref_mut()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of parameterized layers `d`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// `n_0, ..., n_d`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.weights[0].nrows())
            .chain(self.weights.iter().map(|w| w.ncols()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights[self.depth() - 1].ncols()
    }

    pub fn num_params(&self) -> usize {
        let w: usize = self.weights.iter().map(|w| w.len()).sum();
        let b: usize = self.biases.iter().flatten().map(|b| b.len()).sum();
        w + b
    }

    fn check_input(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    fn affine(&self, j: usize, a: &Vector) -> Vector {
        let w = &self.weights[j];
        let mut pre = match &self.biases {
            Some(bs) => bs[j].clone(),
            None => Vector::zeros(w.ncols()),
        };
        // row-wise axpy over contiguous rows; zero activations are skipped
        for (row, &ai) in w.rows().into_iter().zip(a.iter()) {
            if ai != 0.0 {
                pre.scaled_add(ai, &row);
            }
        }
        pre
    }

    pub fn forward(&self, x: &Vector) -> Result<Forward> {
        self.check_input(x.view())?;
        let d = self.depth();
        let mut activations = Vec::with_capacity(d);
        let mut preactivations = Vec::with_capacity(d - 1);
        activations.push(x.clone());
        for j in 0..d - 1 {
            let pre = self.affine(j, &activations[j]);
            let act = pre.mapv(|p| p * self.activation.multiplier(p));
            preactivations.push(pre);
            activations.push(act);
        }
        let logits = self.affine(d - 1, &activations[d - 1]);
        Ok(Forward {
            activations,
            preactivations,
            logits,
        })
    }

    pub fn logits(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward(x)?.logits)
    }

    /// Predicted class; ties resolve to the lowest index.
    pub fn predict(&self, x: &Vector) -> Result<usize> {
        Ok(argmax(self.logits(x)?.view()))
    }

    pub fn activation_pattern(&self, x: &Vector) -> Result<ActivationPattern> {
        let fwd = self.forward(x)?;
        Ok(self.pattern_of(&fwd))
    }

    fn pattern_of(&self, fwd: &Forward) -> ActivationPattern {
        ActivationPattern {
            layers: fwd
                .preactivations
                .iter()
                .map(|pre| pre.iter().map(|&p| self.activation.multiplier(p)).collect())
                .collect(),
        }
    }

    /// Extracts `(V, c)` by one frozen-pattern backward pass per class.
    pub fn local_linear_map(&self, x: &Vector) -> Result<LocalLinearMap> {
        let fwd = self.forward(x)?;
        let pattern = self.pattern_of(&fwd);
        let k = self.num_classes();
        // one backward matvec chain per class, starting from e_k at the logits
        let mut v = Matrix::zeros((self.input_dim(), k));
        for class in 0..k {
            let mut delta = Vector::zeros(k);
            delta[class] = 1.0;
            for j in (1..self.depth()).rev() {
                delta = self.weights[j].dot(&delta);
                delta *= &Array1::from(pattern.layers[j - 1].clone());
            }
            v.column_mut(class).assign(&self.weights[0].dot(&delta));
        }
        let c = &fwd.logits - &v.t().dot(x);
        Ok(LocalLinearMap { v, c, pattern })
    }

    /// Forward pass plus `Σ_k δ_k ∇ₓ z_k`, where `δ = seed(logits)`.
    pub fn input_vjp<F>(&self, x: &Vector, seed: F) -> Result<(Forward, Vector)>
    where
        F: FnOnce(&Vector) -> Vector,
    {
        let fwd = self.forward(x)?;
        let mut delta = seed(&fwd.logits);
        if delta.len() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                context: "logit cotangent",
                expected: self.num_classes(),
                found: delta.len(),
            });
        }
        for j in (1..self.depth()).rev() {
            delta = self.weights[j].dot(&delta);
            for (d, &p) in delta.iter_mut().zip(fwd.preactivations[j - 1].iter()) {
                *d *= self.activation.multiplier(p);
            }
        }
        let grad = self.weights[0].dot(&delta);
        Ok((fwd, grad))
    }

    /// Cross-entropy and its input gradient `V(p - e_y)`.
    pub fn loss_input_gradient(&self, x: &Vector, y: usize) -> Result<(f64, Vector, Vector)> {
        if y >= self.num_classes() {
            return Err(Error::InvalidArgument(format!("label {y} >= K = {}", self.num_classes())));
        }
        let mut loss = 0.0;
        let (fwd, grad) = self.input_vjp(x, |z| {
            let logp = crate::analytic::log_softmax_row(z.view());
            loss = -logp[y];
            let mut d = logp.mapv(f64::exp);
            d[y] -= 1.0;
            d
        })?;
        Ok((loss, grad, fwd.logits))
    }

    /// Smallest `|preactivation|` over all hidden units; `+∞` without hidden layers.
    pub fn boundary_margin(&self, x: &Vector) -> Result<f64> {
        let fwd = self.forward(x)?;
        Ok(fwd
            .preactivations
            .iter()
            .flat_map(|p| p.iter())
            .fold(f64::INFINITY, |m, p| m.min(p.abs())))
    }

    /// Logits for each row of `x`.
    pub fn logits_batch(&self, x: ArrayView2<'_, f64>) -> Result<Matrix> {
        Ok(self.forward_batch(x)?.logits)
    }

    /// Gradients of cross-entropy (plus the regularizer, if given) for one sample.
    pub fn param_gradients(&self, x: &Vector, y: usize, reg: Option<&crate::regularize::RegularizerSpec>) -> Result<Gradients> {
        self.check_input(x.view())?;
        let xb = x.view().insert_axis(Axis(0));
        let (g, _) = self.batch_gradients(xb, &[y], 1.0, reg)?;
        Ok(g)
    }

    /// Applies `params -= step * grads` layer by layer.
    pub fn apply_update(&mut self, update: &Gradients) {
        for (w, g) in self.weights.iter_mut().zip(&update.weights) {
            *w -= g;
        }
        if let (Some(bs), Some(gs)) = (self.biases.as_mut(), update.biases.as_ref()) {
            for (b, g) in bs.iter_mut().zip(gs) {
                *b -= g;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().flatten().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// A copy whose last layer is replaced (used by final-layer experiments).
    pub fn with_final_layer(&self, w: Matrix, b: Option<Vector>) -> Result<Self> {
        let mut weights = self.weights.clone();
        let d = weights.len();
        weights[d - 1] = w;
        let biases = match (&self.biases, b) {
            (Some(bs), Some(b)) => {
                let mut bs = bs.clone();
                bs[d - 1] = b;
                Some(bs)
            }
            (Some(bs), None) => Some(bs.clone()),
            (None, _) => None,
        };
        Self::new(weights, biases, self.activation)
    }

    /// Hidden representation `a_{d-1}` for each row of `x`.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Matrix> {
        let trace = self.forward_batch(x)?;
        Ok(trace.acts[self.depth() - 1].clone())
    }
}

pub fn argmax(z: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// True when `y` strictly wins over every other logit.
pub fn strictly_classified(z: ArrayView1<'_, f64>, y: usize) -> bool {
    z.iter().enumerate().all(|(k, &v)| k == y || z[y] > v)
}

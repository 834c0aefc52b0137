//! Dense layers with an attached whitening transform, forward/backward passes
//! and the regularized softmax cross-entropy loss.
//!
//! Every layer computes `z = W·(S·x) + b`, `x_next = f(z)` where `S` is the
//! layer's Fisher whitening matrix. `S` is a constant as far as
//! differentiation is concerned: [`backward`] returns gradients for `W` and
//! `b` only, and propagates `Sᵀ·Wᵀ·δ` upstream.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fisher::{FisherConfig, FisherError, FisherState};
use crate::linalg::{LinalgError, Mat};
use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("layer {layer}: expected input with {expected} rows, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("model needs at least one layer")]
    EmptyModel,
    #[error("layer {layer}: output width {out} does not chain into next input width {next_in}")]
    BrokenChain {
        layer: usize,
        out: usize,
        next_in: usize,
    },
    #[error("label {label} at sample {sample} is out of range for {classes} classes")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error("got {labels} labels for a batch of {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("trace does not belong to this model: {0}")]
    TraceMismatch(String),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Elementwise nonlinearity of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    /// Used by the output layer; softmax lives in the loss.
    Identity,
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl ActivationKind {
    pub fn apply<T: Real>(self, z: &Mat<T>) -> Mat<T> {
        match self {
            ActivationKind::Sigmoid => z.map(sigmoid),
            ActivationKind::Relu => z.map(|v| if v > T::zero() { v } else { T::zero() }),
            ActivationKind::Identity => z.clone(),
        }
    }

    /// Sensitivity `v_f = f'(z)`. ReLU uses 0 at the kink.
    pub fn sensitivity<T: Real>(self, z: &Mat<T>) -> Mat<T> {
        match self {
            ActivationKind::Sigmoid => z.map(|v| {
                let s = sigmoid(v);
                s * (T::one() - s)
            }),
            ActivationKind::Relu => z.map(|v| if v > T::zero() { T::one() } else { T::zero() }),
            ActivationKind::Identity => z.map(|_| T::one()),
        }
    }
}

/// Elementwise activation.
pub fn activation_apply<T: Real>(kind: ActivationKind, z: &Mat<T>) -> Mat<T> {
    kind.apply(z)
}

/// Elementwise sensitivity (activation derivative) at the pre-activations.
pub fn activation_v<T: Real>(kind: ActivationKind, z: &Mat<T>) -> Mat<T> {
    kind.sensitivity(z)
}

/// A dense layer: learnable `W` (`d_out × d_in`) and `b` (`d_out × 1`) plus
/// the non-learned whitening state.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f64> {
    pub weights: Mat<T>,
    pub bias: Mat<T>,
    pub activation: ActivationKind,
    pub fisher: FisherState<T>,
}

/// Per-layer values retained by the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace<T = f64> {
    /// Raw layer input `x`.
    pub input: Mat<T>,
    /// `S·x`.
    pub whitened: Mat<T>,
    /// `z = W·(S·x) + b`.
    pub pre_activation: Mat<T>,
    /// `f(z)`.
    pub output: Mat<T>,
}

impl<T: Real> DenseLayer<T> {
    /// Glorot-uniform weights in `±√(6/(d_in+d_out))`, zero bias, `S = I`.
    pub fn new_random<R: Rng>(
        d_in: usize,
        d_out: usize,
        activation: ActivationKind,
        fisher: &FisherConfig,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let weights = Mat::from_fn(d_out, d_in, |_, _| T::lit(rng.random_range(-limit..limit)));
        Self {
            weights,
            bias: Mat::zeros(d_out, 1),
            activation,
            fisher: FisherState::new(d_in, fisher.clone()),
        }
    }

    #[inline]
    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    /// `W·u + b` for already-whitened inputs `u`.
    pub fn affine(&self, u: &Mat<T>) -> Result<Mat<T>, LinalgError> {
        let mut z = self.weights.matmul(u)?;
        let b = self.bias.as_slice();
        for (i, &bi) in b.iter().enumerate() {
            z.row_mut(i).iter_mut().for_each(|v| *v = *v + bi);
        }
        Ok(z)
    }

    /// Pre-activations under the current `S`.
    pub fn pre_activation(&self, x: &Mat<T>) -> Result<Mat<T>, NetworkError> {
        Ok(self.affine(&self.fisher.whiten(x)?)?)
    }

    /// One layer of the forward pass. `index` only labels errors.
    pub fn forward(&self, index: usize, x: &Mat<T>) -> Result<LayerTrace<T>, NetworkError> {
        if x.rows() != self.d_in() {
            return Err(NetworkError::DimensionMismatch {
                layer: index,
                expected: self.d_in(),
                got: x.rows(),
            });
        }
        let whitened = self.fisher.whiten(x)?;
        let pre_activation = self.affine(&whitened)?;
        let output = self.activation.apply(&pre_activation);
        Ok(LayerTrace {
            input: x.clone(),
            whitened,
            pre_activation,
            output,
        })
    }
}

/// Ordered stack of dense layers plus the L2 coefficient `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T = f64> {
    layers: Vec<DenseLayer<T>>,
    pub l2: T,
}

impl<T: Real> MlpModel<T> {
    /// Checks that widths chain from layer to layer.
    pub fn from_layers(layers: Vec<DenseLayer<T>>, l2: T) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::EmptyModel);
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(NetworkError::BrokenChain {
                    layer: k,
                    out: pair[0].d_out(),
                    next_in: pair[1].d_in(),
                });
            }
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.shape() != (layer.d_out(), 1) {
                return Err(NetworkError::TraceMismatch(format!("layer {k}: bias shape")));
            }
            if layer.fisher.dim() != layer.d_in() {
                return Err(NetworkError::DimensionMismatch {
                    layer: k,
                    expected: layer.d_in(),
                    got: layer.fisher.dim(),
                });
            }
        }
        Ok(Self { layers, l2 })
    }

    /// Randomly initialised MLP with the given widths (`widths.len() >= 2`).
    /// Hidden layers use `hidden`; the output layer is `Identity`.
    pub fn new_random<R: Rng>(
        widths: &[usize],
        hidden: ActivationKind,
        l2: T,
        fisher: &FisherConfig,
        rng: &mut R,
    ) -> Result<Self, NetworkError> {
        if widths.len() < 2 {
            return Err(NetworkError::EmptyModel);
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { ActivationKind::Identity } else { hidden };
                DenseLayer::new_random(w[0], w[1], act, fisher, rng)
            })
            .collect();
        Self::from_layers(layers, l2)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    /// `Σ_k ‖W_k‖²_F`.
    pub fn weight_sq_norm(&self) -> T {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().iter().map(|&w| w * w).sum::<T>())
            .sum()
    }

    /// SHA-256 over every weight, bias and whitening entry.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for l in &self.layers {
            for m in [&l.weights, &l.bias, l.fisher.s()] {
                for &v in m.as_slice() {
                    h.update(v.le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T = f64> {
    pub layers: Vec<LayerTrace<T>>,
    /// Column-wise softmax of the final layer output.
    pub probabilities: Mat<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn logits(&self) -> &Mat<T> {
        &self.layers[self.layers.len() - 1].output
    }

    /// Builds a trace from per-layer traces already computed (as the
    /// interleaved training step does).
    pub fn from_layers(layers: Vec<LayerTrace<T>>) -> Self {
        let probabilities = softmax_columns(&layers[layers.len() - 1].output);
        Self {
            layers,
            probabilities,
        }
    }
}

/// Column-wise softmax, max-shifted.
pub fn softmax_columns<T: Real>(logits: &Mat<T>) -> Mat<T> {
    let (k, b) = logits.shape();
    let mut p = Mat::zeros(k, b);
    for j in 0..b {
        let m = (0..k).map(|i| logits[(i, j)]).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for i in 0..k {
            let e = (logits[(i, j)] - m).exp();
            p[(i, j)] = e;
            sum = sum + e;
        }
        for i in 0..k {
            p[(i, j)] = p[(i, j)] / sum;
        }
    }
    p
}

/// Forward pass through the whitened stack. Does not touch the whitening
/// state.
pub fn forward<T: Real>(model: &MlpModel<T>, x0: &Mat<T>) -> Result<ForwardTrace<T>, NetworkError> {
    let mut traces = Vec::with_capacity(model.layers.len());
    let mut x = x0.clone();
    for (k, layer) in model.layers.iter().enumerate() {
        let t = layer.forward(k, &x)?;
        x = t.output.clone();
        traces.push(t);
    }
    Ok(ForwardTrace::from_layers(traces))
}

/// Mean softmax cross-entropy plus `(λ/2)·Σ‖W‖²_F`, and `∂loss/∂logits`
/// (the L2 part does not depend on the logits).
pub fn softmax_xent_l2<T: Real>(
    logits: &Mat<T>,
    labels: &[usize],
    model: &MlpModel<T>,
) -> Result<(T, Mat<T>), NetworkError> {
    let (k, b) = logits.shape();
    let (xent_sum, probs) = xent_sum(logits, labels)?;
    let inv_b = T::one() / T::lit(b as f64);
    let mut d = probs;
    for (j, &y) in labels.iter().enumerate() {
        d[(y, j)] = d[(y, j)] - T::one();
    }
    let d = d.scale(inv_b);
    debug_assert_eq!(d.rows(), k);
    let loss = xent_sum * inv_b + T::lit(0.5) * model.l2 * model.weight_sq_norm();
    Ok((loss, d))
}

/// Summed (not averaged) cross-entropy over the batch and the softmax.
pub(crate) fn xent_sum<T: Real>(logits: &Mat<T>, labels: &[usize]) -> Result<(T, Mat<T>), NetworkError> {
    let (k, b) = logits.shape();
    if labels.len() != b {
        return Err(NetworkError::LabelCount {
            labels: labels.len(),
            batch: b,
        });
    }
    if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(NetworkError::LabelOutOfRange {
            sample,
            label,
            classes: k,
        });
    }
    let probs = softmax_columns(logits);
    let mut total = T::zero();
    for (j, &y) in labels.iter().enumerate() {
        let m = (0..k).map(|i| logits[(i, j)]).fold(T::neg_infinity(), T::max);
        let lse = m + (0..k).map(|i| (logits[(i, j)] - m).exp()).sum::<T>().ln();
        total = total + (lse - logits[(y, j)]);
    }
    Ok((total, probs))
}

/// Gradients of one layer. There is deliberately no whitening-matrix
/// gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient<T = f64> {
    pub weights: Mat<T>,
    pub bias: Mat<T>,
}

/// Backpropagation with every `S` held constant.
///
/// `dW_k = δ_k·(S_k x_k)ᵀ + λ·W_k`, `db_k = Σ_cols δ_k`, upstream signal
/// `S_kᵀ·W_kᵀ·δ_k`.
pub fn backward<T: Real>(
    model: &MlpModel<T>,
    trace: &ForwardTrace<T>,
    d_logits: &Mat<T>,
) -> Result<Vec<LayerGradient<T>>, NetworkError> {
    let n = model.layers.len();
    if trace.layers.len() != n {
        return Err(NetworkError::TraceMismatch(format!(
            "{} layer traces for {} layers",
            trace.layers.len(),
            n
        )));
    }
    for (k, (layer, lt)) in model.layers.iter().zip(&trace.layers).enumerate() {
        if lt.whitened.rows() != layer.d_in() || lt.pre_activation.rows() != layer.d_out() {
            return Err(NetworkError::TraceMismatch(format!("layer {k} shapes")));
        }
    }
    if d_logits.shape() != trace.logits().shape() {
        return Err(NetworkError::TraceMismatch("dLogits shape".into()));
    }

    let mut grads = Vec::with_capacity(n);
    let mut upstream = d_logits.clone();
    for k in (0..n).rev() {
        let layer = &model.layers[k];
        let lt = &trace.layers[k];
        let delta = match layer.activation {
            ActivationKind::Identity => upstream,
            act => upstream.hadamard(&act.sensitivity(&lt.pre_activation))?,
        };
        let mut d_w = delta.matmul_t(&lt.whitened)?;
        if model.l2 != T::zero() {
            d_w.add_scaled_in_place(model.l2, &layer.weights)?;
        }
        let d_b = Mat::from_fn(delta.rows(), 1, |i, _| delta.row(i).iter().copied().sum());
        if k > 0 {
            let through_w = layer.weights.t_matmul(&delta)?;
            upstream = layer.fisher.whiten_transposed(&through_w)?;
        } else {
            upstream = Mat::zeros(0, 0);
        }
        grads.push(LayerGradient {
            weights: d_w,
            bias: d_b,
        });
    }
    grads.reverse();
    Ok(grads)
}

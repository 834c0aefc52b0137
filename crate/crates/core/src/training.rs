//! Optimizers, the structured natural-gradient training step, evaluation and
//! the epoch loop.
//!
//! A training step walks the layers in order. For each layer it computes the
//! pre-activations with the current `S`, lets the layer's [`FisherState`]
//! refresh `S` from the raw input and those pre-activations, and only then
//! produces the layer output with the (possibly new) `S`, which feeds the next
//! layer. Backpropagation treats every `S` as a constant and plain
//! (momentum) gradient descent updates `W` and `b`.
//!
//! The plain SGD baseline is the same step with the refresh skipped; with
//! frozen identity whitening both paths perform bit-for-bit the same
//! arithmetic.
//!
//! [`FisherState`]: crate::fisher::FisherState

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::fisher::{FisherError, RefreshOutcome};
use crate::linalg::{inverse, random_spd, spd_invsqrt_oracle, LinalgError, Mat};
use crate::network::{
    backward, forward, softmax_xent_l2, xent_sum, ForwardTrace, LayerGradient, LayerTrace, MlpModel,
    NetworkError,
};
use crate::parallel::{map_ordered, Exec};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("shape mismatch: parameter {param:?} vs {other:?}")]
    ShapeMismatch {
        param: (usize, usize),
        other: (usize, usize),
    },
    #[error("invalid optimizer setting `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Sngd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainingError::InvalidConfig {
                key: "lr",
                reason: "must be finite and > 0".into(),
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainingError::InvalidConfig {
                key: "momentum",
                reason: "must lie in [0, 1)".into(),
            });
        }
        Ok(())
    }
}

/// One line of the learning-curve log.
///
/// Training loss and accuracy average over the batches seen in the epoch so
/// far (measured before each update); the Fisher counters are cumulative
/// over the run and summed over layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub fisher_refreshes: u64,
    pub fisher_failures: u64,
    pub wall_time_s: f64,
}

fn check_shapes<T: Real>(param: &Mat<T>, other: &Mat<T>) -> Result<(), TrainingError> {
    if param.shape() != other.shape() {
        return Err(TrainingError::ShapeMismatch {
            param: param.shape(),
            other: other.shape(),
        });
    }
    Ok(())
}

/// `v' = momentum·v + grad`, `param' = param − lr·v'`.
pub fn sgd_step<T: Real>(
    param: &Mat<T>,
    grad: &Mat<T>,
    lr: T,
    momentum: T,
    velocity: &Mat<T>,
) -> Result<(Mat<T>, Mat<T>), TrainingError> {
    let mut p = param.clone();
    let mut v = velocity.clone();
    sgd_step_in_place(&mut p, grad, lr, momentum, &mut v)?;
    Ok((p, v))
}

pub fn sgd_step_in_place<T: Real>(
    param: &mut Mat<T>,
    grad: &Mat<T>,
    lr: T,
    momentum: T,
    velocity: &mut Mat<T>,
) -> Result<(), TrainingError> {
    check_shapes(param, grad)?;
    check_shapes(param, velocity)?;
    let p = param.as_mut_slice();
    let v = velocity.as_mut_slice();
    for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(grad.as_slice()) {
        *vi = momentum * *vi + gi;
        *pi = *pi - lr * *vi;
    }
    Ok(())
}

/// Momentum buffers for every weight and bias of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T = f64> {
    pub config: OptimizerConfig,
    velocities: Vec<LayerGradient<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, model: &MlpModel<T>) -> Result<Self, TrainingError> {
        config.validate()?;
        let velocities = model
            .layers()
            .iter()
            .map(|l| LayerGradient {
                weights: Mat::zeros(l.weights.rows(), l.weights.cols()),
                bias: Mat::zeros(l.bias.rows(), 1),
            })
            .collect();
        Ok(Self { config, velocities })
    }

    pub fn velocities(&self) -> &[LayerGradient<T>] {
        &self.velocities
    }

    pub fn apply(&mut self, model: &mut MlpModel<T>, grads: &[LayerGradient<T>]) -> Result<(), TrainingError> {
        let lr = T::lit(self.config.lr);
        let mom = T::lit(self.config.momentum);
        for ((layer, g), v) in model.layers_mut().iter_mut().zip(grads).zip(&mut self.velocities) {
            sgd_step_in_place(&mut layer.weights, &g.weights, lr, mom, &mut v.weights)?;
            sgd_step_in_place(&mut layer.bias, &g.bias, lr, mom, &mut v.bias)?;
        }
        Ok(())
    }
}

/// What one training step observed.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport<T = f64> {
    /// Regularized loss of the batch before the update.
    pub loss: T,
    /// Argmax-correct predictions before the update.
    pub correct: usize,
    pub batch: usize,
    pub refreshed: usize,
    pub failed: usize,
}

fn argmax_column<T: Real>(m: &Mat<T>, j: usize) -> usize {
    let mut best = 0;
    for i in 1..m.rows() {
        if m[(i, j)] > m[(best, j)] {
            best = i;
        }
    }
    best
}

fn count_correct<T: Real>(scores: &Mat<T>, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(j, &y)| argmax_column(scores, j) == y)
        .count()
}

/// Forward pass with interleaved whitening refreshes; `S` changes only on
/// scheduled steps.
fn refreshing_forward<T: Real>(
    model: &mut MlpModel<T>,
    x0: &Mat<T>,
) -> Result<(ForwardTrace<T>, usize, usize), TrainingError> {
    let mut traces = Vec::with_capacity(model.layers().len());
    let (mut refreshed, mut failed) = (0, 0);
    let mut x = x0.clone();
    for (k, layer) in model.layers_mut().iter_mut().enumerate() {
        if x.rows() != layer.d_in() {
            return Err(NetworkError::DimensionMismatch {
                layer: k,
                expected: layer.d_in(),
                got: x.rows(),
            }
            .into());
        }
        let whitened = layer.fisher.whiten(&x)?;
        let z_old = layer.affine(&whitened)?;
        let trace = match layer.fisher.refresh(&x, &z_old, layer.activation)? {
            RefreshOutcome::Refreshed(_) => {
                refreshed += 1;
                layer.forward(k, &x)?
            }
            outcome => {
                failed += usize::from(matches!(outcome, RefreshOutcome::Failed(_)));
                let output = layer.activation.apply(&z_old);
                LayerTrace {
                    input: x,
                    whitened,
                    pre_activation: z_old,
                    output,
                }
            }
        };
        x = trace.output.clone();
        traces.push(trace);
    }
    Ok((ForwardTrace::from_layers(traces), refreshed, failed))
}

/// One optimization step on the batch `(x, labels)`.
///
/// With [`OptimizerKind::Sngd`] each layer's whitening state is offered a
/// refresh before that layer's output is produced. With
/// [`OptimizerKind::Sgd`] whitening states are left untouched.
pub fn sngd_train_step<T: Real>(
    model: &mut MlpModel<T>,
    x: &Mat<T>,
    labels: &[usize],
    opt: &mut Optimizer<T>,
) -> Result<StepReport<T>, TrainingError> {
    if x.cols() == 0 {
        return Err(TrainingError::EmptyBatch);
    }
    let (trace, refreshed, failed) = match opt.config.kind {
        OptimizerKind::Sngd => refreshing_forward(model, x)?,
        OptimizerKind::Sgd => (forward(model, x)?, 0, 0),
    };
    let (loss, d_logits) = softmax_xent_l2(trace.logits(), labels, model)?;
    let correct = count_correct(&trace.probabilities, labels);
    let grads = backward(model, &trace, &d_logits)?;
    opt.apply(model, &grads)?;
    Ok(StepReport {
        loss,
        correct,
        batch: labels.len(),
        refreshed,
        failed,
    })
}

pub const EVAL_CHUNK: usize = 1000;

/// `(regularized mean loss, accuracy)` over the whole dataset, forward only.
pub fn evaluate<T: Real>(model: &MlpModel<T>, data: &Dataset<T>) -> Result<(T, f64), TrainingError> {
    evaluate_with(model, data, Exec::default())
}

/// [`evaluate`] with an explicit execution policy. Chunks are reduced in a
/// fixed order, so the result does not depend on the policy.
pub fn evaluate_with<T: Real>(
    model: &MlpModel<T>,
    data: &Dataset<T>,
    exec: Exec,
) -> Result<(T, f64), TrainingError> {
    let n = data.len();
    if n == 0 {
        return Err(TrainingError::EmptyDataset);
    }
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(EVAL_CHUNK)
        .map(|s| (s, (s + EVAL_CHUNK).min(n)))
        .collect();
    let parts = map_ordered(exec, chunks, |(s, e)| -> Result<(T, usize), TrainingError> {
        let idx: Vec<usize> = (s..e).collect();
        let trace = forward(model, &data.x.select_columns(&idx))?;
        let labels = &data.labels[s..e];
        let (sum, probs) = xent_sum(trace.logits(), labels)?;
        Ok((sum, count_correct(&probs, labels)))
    });
    let mut total = T::zero();
    let mut correct = 0;
    for part in parts {
        let (s, c) = part?;
        total = total + s;
        correct += c;
    }
    let loss = total / T::lit(n as f64) + T::lit(0.5) * model.l2 * model.weight_sq_norm();
    Ok((loss, correct as f64 / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Emit a row after every step instead of once per epoch.
    pub per_step: bool,
    /// Record elapsed seconds; when off the column is 0 so that logs from
    /// repeated runs are byte-identical.
    pub wall_time: bool,
    pub exec: Exec,
}

/// Stream of the shuffling generator, distinct from any initialization
/// stream drawn from the same seed.
const SHUFFLE_STREAM: u64 = 1;

fn fisher_totals<T: Real>(model: &MlpModel<T>) -> (u64, u64) {
    model
        .layers()
        .iter()
        .fold((0, 0), |(r, f), l| (r + l.fisher.refreshes(), f + l.fisher.failures()))
}

/// Runs `settings.epochs` epochs of minibatch training, reshuffling the
/// training set every epoch. Every emitted row is also passed to `on_row`.
///
/// Validation is evaluated at the end of each epoch (and once before
/// training for per-step rows, which carry the latest evaluation). With an
/// empty validation set the validation columns are NaN.
pub fn train<T: Real>(
    model: &mut MlpModel<T>,
    opt: &mut Optimizer<T>,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    settings: &TrainSettings,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<Vec<MetricsRow>, TrainingError> {
    if train_set.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    if settings.batch_size == 0 {
        return Err(TrainingError::EmptyBatch);
    }
    let start = Instant::now();
    let elapsed = || {
        if settings.wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let validate = |m: &MlpModel<T>| -> Result<(f64, f64), TrainingError> {
        if val_set.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let (l, a) = evaluate_with(m, val_set, settings.exec)?;
        Ok((l.as_f64(), a))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rows = Vec::new();
    let mut step: u64 = 0;
    let mut val = if settings.per_step {
        validate(model)?
    } else {
        (f64::NAN, f64::NAN)
    };

    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let batches: Vec<&[usize]> = order.chunks(settings.batch_size).collect();
        let last = batches.len() - 1;
        for (b, idx) in batches.into_iter().enumerate() {
            let x = train_set.x.select_columns(idx);
            let labels: Vec<usize> = idx.iter().map(|&j| train_set.labels[j]).collect();
            let rep = sngd_train_step(model, &x, &labels, opt)?;
            step += 1;
            loss_sum += rep.loss.as_f64() * rep.batch as f64;
            correct += rep.correct;
            seen += rep.batch;
            if b == last {
                val = validate(model)?;
            }
            if settings.per_step || b == last {
                let (fisher_refreshes, fisher_failures) = fisher_totals(model);
                let row = MetricsRow {
                    epoch,
                    step,
                    train_loss: loss_sum / seen as f64,
                    train_acc: correct as f64 / seen as f64,
                    val_loss: val.0,
                    val_acc: val.1,
                    fisher_refreshes,
                    fisher_failures,
                    wall_time_s: elapsed(),
                };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// One step each way for a quadratic loss `ℓ(w) = ½wᵀAw + cᵀw` under the
/// metric `G`, returning `(natural-gradient step, reparameterized step)`.
///
/// The natural-gradient side computes `w − α·G⁻¹·∇ℓ(w)`. The other side
/// writes `w = M·w'` with the fixed `M = G^(-1/2)`, takes one plain gradient
/// step on `w'` for `ℓ(M·w')` and maps the result back through `M`.
pub fn lemma1_step_pair(
    g: &Mat<f64>,
    a: &Mat<f64>,
    c: &Mat<f64>,
    w: &Mat<f64>,
    alpha: f64,
) -> Result<(Mat<f64>, Mat<f64>), LinalgError> {
    let grad = |w: &Mat<f64>| -> Result<Mat<f64>, LinalgError> { a.matmul(w)?.add(c) };

    let mut natural = w.clone();
    natural.add_scaled_in_place(-alpha, &inverse(g)?.matmul(&grad(w)?)?)?;

    let m = spd_invsqrt_oracle(g)?;
    let mut w_prime = inverse(&m)?.matmul(w)?;
    let grad_prime = m.t_matmul(&grad(&m.matmul(&w_prime)?)?)?;
    w_prime.add_scaled_in_place(-alpha, &grad_prime)?;
    let reparameterized = m.matmul(&w_prime)?;
    Ok((natural, reparameterized))
}

/// Learning rate used by [`lemma1_equivalence_check`].
pub const EQUIVALENCE_ALPHA: f64 = 0.1;

/// Max absolute entrywise gap between the two sides of [`lemma1_step_pair`]
/// on a seeded random instance: `G` and `A` are random SPD matrices with
/// eigenvalues in `[e⁻¹, e]`, `c` and `w` are standard normal.
pub fn lemma1_equivalence_check(dim: usize, seed: u64) -> f64 {
    assert!(dim >= 1, "dim must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectrum = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0f64..=1.0).exp()).collect()
    };
    let g_eigs = spectrum(&mut rng);
    let g: Mat = random_spd(&g_eigs, &mut rng);
    let a_eigs = spectrum(&mut rng);
    let a: Mat = random_spd(&a_eigs, &mut rng);
    let mut normal = |_, _| -> f64 { StandardNormal.sample(&mut rng) };
    let c = Mat::from_fn(dim, 1, &mut normal);
    let w = Mat::from_fn(dim, 1, &mut normal);
    let (natural, reparameterized) =
        lemma1_step_pair(&g, &a, &c, &w, EQUIVALENCE_ALPHA).expect("well-conditioned random instance");
    natural
        .sub(&reparameterized)
        .expect("same shape")
        .max_abs()
}

use fisherflow::fisher::FisherConfig;
use fisherflow::linalg::{random_spd, Mat};
use fisherflow::network::{
    activation_apply, activation_v, backward, forward, softmax_xent_l2, ActivationKind, DenseLayer,
    MlpModel, NetworkError,
};
use fisherflow::fisher::FisherState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Grads = Vec<Vec<Vec<f64>>>;
type Biases = Vec<Vec<f64>>;

/// Plain dense MLP written with scalar loops only: no whitening, no `Mat`
/// arithmetic.
struct PlainMlp {
    w: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
    act: Vec<ActivationKind>,
    l2: f64,
}

fn f(kind: ActivationKind, z: f64) -> f64 {
    match kind {
        ActivationKind::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        ActivationKind::Relu => z.max(0.0),
        ActivationKind::Identity => z,
    }
}

fn df(kind: ActivationKind, z: f64) -> f64 {
    match kind {
        ActivationKind::Sigmoid => f(kind, z) * (1.0 - f(kind, z)),
        ActivationKind::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::Identity => 1.0,
    }
}

impl PlainMlp {
    fn of(model: &MlpModel) -> Self {
        let w = model
            .layers()
            .iter()
            .map(|l| (0..l.d_out()).map(|i| l.weights.row(i).to_vec()).collect())
            .collect();
        let b = model.layers().iter().map(|l| l.bias.as_slice().to_vec()).collect();
        let act = model.layers().iter().map(|l| l.activation).collect();
        Self { w, b, act, l2: model.l2 }
    }

    /// Per-sample `(zs, xs)` with `xs[0]` the input.
    fn forward_one(&self, x0: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut xs = vec![x0.to_vec()];
        let mut zs = Vec::new();
        for k in 0..self.w.len() {
            let x = &xs[k];
            let z: Vec<f64> = self.w[k]
                .iter()
                .zip(&self.b[k])
                .map(|(row, bi)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bi)
                .collect();
            xs.push(z.iter().map(|&v| f(self.act[k], v)).collect());
            zs.push(z);
        }
        (zs, xs)
    }

    fn loss_and_grads(&self, x: &Mat, labels: &[usize]) -> (f64, Grads, Biases) {
        let n = self.w.len();
        let bsz = x.cols() as f64;
        let mut gw: Vec<Vec<Vec<f64>>> = self.w.iter().map(|l| l.iter().map(|r| vec![0.0; r.len()]).collect()).collect();
        let mut gb: Vec<Vec<f64>> = self.b.iter().map(|l| vec![0.0; l.len()]).collect();
        let mut loss = 0.0;
        for (j, &y) in labels.iter().enumerate() {
            let (zs, xs) = self.forward_one(&x.col(j));
            let logits = &xs[n];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            loss += m + sum.ln() - logits[y];
            let mut delta: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(i, l)| ((l - m).exp() / sum - if i == y { 1.0 } else { 0.0 }) / bsz)
                .collect();
            for k in (0..n).rev() {
                for (i, d) in delta.iter_mut().enumerate() {
                    *d *= df(self.act[k], zs[k][i]);
                }
                for i in 0..delta.len() {
                    gb[k][i] += delta[i];
                    for c in 0..xs[k].len() {
                        gw[k][i][c] += delta[i] * xs[k][c];
                    }
                }
                delta = (0..xs[k].len())
                    .map(|c| (0..delta.len()).map(|i| self.w[k][i][c] * delta[i]).sum())
                    .collect();
            }
        }
        let sq: f64 = self.w.iter().flatten().flatten().map(|v| v * v).sum();
        for (gk, wk) in gw.iter_mut().zip(&self.w) {
            for (gr, wr) in gk.iter_mut().zip(wk) {
                for (g, w) in gr.iter_mut().zip(wr) {
                    *g += self.l2 * w;
                }
            }
        }
        (loss / bsz + 0.5 * self.l2 * sq, gw, gb)
    }
}

fn random_model(widths: &[usize], hidden: ActivationKind, l2: f64, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MlpModel::new_random(widths, hidden, l2, &FisherConfig::frozen(), &mut rng).unwrap()
}

fn randn_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

fn loss(model: &MlpModel, x: &Mat, labels: &[usize]) -> f64 {
    let t = forward(model, x).unwrap();
    softmax_xent_l2(t.logits(), labels, model).unwrap().0
}

fn nudge(m: &mut MlpModel, layer: usize, bias: bool, idx: usize, delta: f64) {
    let l = &mut m.layers_mut()[layer];
    let p = if bias { &mut l.bias } else { &mut l.weights };
    p.as_mut_slice()[idx] += delta;
}

/// Max over entries of `|a − n| / max(|a|, |n|, 1e-4)` against central
/// differences with step 1e-5.
fn max_fd_error(model: &MlpModel, x: &Mat, labels: &[usize]) -> f64 {
    let t = forward(model, x).unwrap();
    let (_, d) = softmax_xent_l2(t.logits(), labels, model).unwrap();
    let grads = backward(model, &t, &d).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, g) in grads.iter().enumerate() {
        for bias in [false, true] {
            let analytic = if bias { &g.bias } else { &g.weights };
            for idx in 0..analytic.as_slice().len() {
                let mut probe = model.clone();
                nudge(&mut probe, k, bias, idx, h);
                let up = loss(&probe, x, labels);
                nudge(&mut probe, k, bias, idx, -2.0 * h);
                let down = loss(&probe, x, labels);
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.as_slice()[idx];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
            }
        }
    }
    worst
}

#[test]
fn activation_examples() {
    let z = Mat::column(&[0.0]);
    assert_eq!(activation_apply(ActivationKind::Sigmoid, &z)[(0, 0)], 0.5);
    assert_eq!(activation_v(ActivationKind::Sigmoid, &z)[(0, 0)], 0.25);
    let z = Mat::column(&[-1.0, 2.0]);
    assert_eq!(activation_apply(ActivationKind::Relu, &z).as_slice(), &[0.0, 2.0]);
    let z = Mat::column(&[-1.0, 0.0, 2.0]);
    assert_eq!(activation_v(ActivationKind::Relu, &z).as_slice(), &[0.0, 0.0, 1.0]);
    assert_eq!(activation_apply(ActivationKind::Identity, &z), z);
    let v = activation_v(ActivationKind::Sigmoid, &Mat::column(&[10.0]))[(0, 0)];
    let s = 1.0 / (1.0 + (-10.0f64).exp());
    assert!((v - s * (1.0 - s)).abs() < 1e-15);
    assert!((v - 4.5396e-5).abs() < 1e-9);
}

#[test]
fn single_layer_examples() {
    let layer = DenseLayer {
        weights: Mat::from_rows(&[vec![2.0]]).unwrap(),
        bias: Mat::zeros(1, 1),
        activation: ActivationKind::Identity,
        fisher: FisherState::new(1, FisherConfig::default()),
    };
    let model = MlpModel::from_layers(vec![layer], 0.0).unwrap();
    assert_eq!(forward(&model, &Mat::column(&[3.0])).unwrap().logits()[(0, 0)], 6.0);

    let neuron = DenseLayer {
        weights: Mat::zeros(1, 3),
        bias: Mat::zeros(1, 1),
        activation: ActivationKind::Sigmoid,
        fisher: FisherState::new(3, FisherConfig::default()),
    };
    let model = MlpModel::from_layers(vec![neuron], 0.0).unwrap();
    let t = forward(&model, &Mat::column(&[1.0, -7.0, 2.5])).unwrap();
    assert_eq!(t.logits()[(0, 0)], 0.5);
}

#[test]
fn forward_errors_name_the_layer() {
    let model = random_model(&[3, 4, 2], ActivationKind::Relu, 0.0, 1);
    match forward(&model, &Mat::zeros(5, 2)) {
        Err(NetworkError::DimensionMismatch { layer: 0, expected: 3, got: 5 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn loss_examples() {
    let model = random_model(&[2, 10], ActivationKind::Relu, 0.0, 0);
    let (l, _) = softmax_xent_l2(&Mat::zeros(10, 3), &[0, 4, 9], &model).unwrap();
    assert!((l - 10f64.ln()).abs() < 1e-15);
    let mut logits = Mat::zeros(10, 1);
    logits[(3, 0)] = 50.0;
    assert!(softmax_xent_l2(&logits, &[3], &model).unwrap().0 < 1e-10);
    assert!(matches!(
        softmax_xent_l2(&logits, &[10], &model),
        Err(NetworkError::LabelOutOfRange { .. })
    ));
}

#[test]
fn dlogits_matches_finite_differences() {
    let model = random_model(&[2, 5], ActivationKind::Relu, 0.0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let logits = randn_mat(5, 4, &mut rng);
    let labels = [1, 0, 4, 2];
    let (_, d) = softmax_xent_l2(&logits, &labels, &model).unwrap();
    let h = 1e-5;
    for i in 0..5 {
        for j in 0..4 {
            let mut up = logits.clone();
            up[(i, j)] += h;
            let mut down = logits.clone();
            down[(i, j)] -= h;
            let numeric = (softmax_xent_l2(&up, &labels, &model).unwrap().0
                - softmax_xent_l2(&down, &labels, &model).unwrap().0)
                / (2.0 * h);
            let rel = (d[(i, j)] - numeric).abs() / d[(i, j)].abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-6, "{rel}");
        }
    }
}

#[test]
fn zero_input_gives_zero_first_layer_weight_gradient() {
    let model = random_model(&[3, 4, 2], ActivationKind::Sigmoid, 0.0, 5);
    let x = Mat::zeros(3, 2);
    let t = forward(&model, &x).unwrap();
    let (_, d) = softmax_xent_l2(t.logits(), &[0, 1], &model).unwrap();
    let g = backward(&model, &t, &d).unwrap();
    assert_eq!(g[0].weights.max_abs(), 0.0);
    assert!(g[0].bias.max_abs() > 0.0);
}

#[test]
fn backward_rejects_foreign_trace() {
    let a = random_model(&[3, 4, 2], ActivationKind::Sigmoid, 0.0, 1);
    let b = random_model(&[3, 2], ActivationKind::Sigmoid, 0.0, 1);
    let t = forward(&b, &Mat::zeros(3, 1)).unwrap();
    assert!(matches!(
        backward(&a, &t, &Mat::zeros(2, 1)),
        Err(NetworkError::TraceMismatch(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn identity_whitening_matches_plain_mlp(
        widths in prop::collection::vec(1usize..=8, 2..=4),
        relu in any::<bool>(),
        l2 in 0.0f64..0.1,
        seed in any::<u64>(),
        batch in 1usize..=6,
    ) {
        let hidden = if relu { ActivationKind::Relu } else { ActivationKind::Sigmoid };
        let model = random_model(&widths, hidden, l2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = randn_mat(widths[0], batch, &mut rng);
        let k = *widths.last().unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..k)).collect();

        let plain = PlainMlp::of(&model);
        let t = forward(&model, &x).unwrap();
        for j in 0..batch {
            let (_, xs) = plain.forward_one(&x.col(j));
            for (i, v) in xs.last().unwrap().iter().enumerate() {
                prop_assert!((t.logits()[(i, j)] - v).abs() < 1e-12);
            }
            let s: f64 = t.probabilities.col(j).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }

        let (l, d) = softmax_xent_l2(t.logits(), &labels, &model).unwrap();
        let grads = backward(&model, &t, &d).unwrap();
        let (pl, gw, gb) = plain.loss_and_grads(&x, &labels);
        prop_assert!((l - pl).abs() < 1e-12);
        for (k, g) in grads.iter().enumerate() {
            for i in 0..g.weights.rows() {
                prop_assert!((g.bias[(i, 0)] - gb[k][i]).abs() < 1e-12);
                for (c, want) in gw[k][i].iter().enumerate() {
                    prop_assert!((g.weights[(i, c)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn whitened_gradients_match_finite_differences(
        widths in prop::collection::vec(1usize..=16, 2..=4),
        l2 in 0.0f64..0.1,
        seed in any::<u64>(),
        batch in 1usize..=8,
    ) {
        let mut model = random_model(&widths, ActivationKind::Sigmoid, l2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for layer in model.layers_mut() {
            let spectrum: Vec<f64> = (0..layer.d_in()).map(|_| rng.random_range(0.3..3.0)).collect();
            let s: Mat = random_spd(&spectrum, &mut rng);
            layer.fisher.set_matrix(s).unwrap();
        }
        let x = randn_mat(widths[0], batch, &mut rng);
        let k = *widths.last().unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..k)).collect();
        let err = max_fd_error(&model, &x, &labels);
        prop_assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn s_changes_loss_but_gradient_only_sees_the_trace(seed in any::<u64>()) {
        let mut model = random_model(&[3, 4, 2], ActivationKind::Sigmoid, 0.0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn_mat(3, 4, &mut rng);
        let labels = [0, 1, 1, 0];
        let t = forward(&model, &x).unwrap();
        let (l0, d) = softmax_xent_l2(t.logits(), &labels, &model).unwrap();
        let g0 = backward(&model, &t, &d).unwrap();

        let s: Mat = random_spd(&[0.5, 1.0, 2.0], &mut rng);
        model.layers_mut()[0].fisher.set_matrix(s).unwrap();
        let l1 = loss(&model, &x, &labels);
        prop_assert!(l1 != l0);
        // Same trace and weights: the first-layer gradient cannot depend on S.
        let g1 = backward(&model, &t, &d).unwrap();
        prop_assert_eq!(&g0[0], &g1[0]);
        prop_assert_eq!(g0.len(), model.layers().len());
    }
}

use fisherflow::data::{gen_blobs, Dataset, Split};
use fisherflow::fisher::FisherConfig;
use fisherflow::network::{backward, forward, softmax_xent_l2, ActivationKind, MlpModel};
use fisherflow::parallel::Exec;
use fisherflow::training::{
    evaluate, evaluate_with, lemma1_equivalence_check, lemma1_step_pair, sgd_step, sngd_train_step, train,
    OptimizerConfig, OptimizerKind, Optimizer, TrainSettings,
};
use fisherflow::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(widths: &[usize], act: ActivationKind, fisher: &FisherConfig, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MlpModel::new_random(widths, act, 1e-3, fisher, &mut rng).unwrap()
}

fn optimizer(kind: OptimizerKind, lr: f64, momentum: f64, m: &MlpModel) -> Optimizer {
    Optimizer::new(OptimizerConfig { kind, lr, momentum }, m).unwrap()
}

fn bits(m: &MlpModel) -> Vec<u64> {
    m.layers()
        .iter()
        .flat_map(|l| l.weights.as_slice().iter().chain(l.bias.as_slice()).map(|v| v.to_bits()))
        .collect()
}

fn settings(epochs: usize, batch_size: usize, per_step: bool) -> TrainSettings {
    TrainSettings {
        epochs,
        batch_size,
        seed: 7,
        per_step,
        wall_time: false,
        exec: Exec::Sequential,
    }
}

#[test]
fn equivalence_diagonal_metric_hand_values() {
    let g = Mat::from_diag(&[4.0, 1.0]);
    let a = Mat::identity(2);
    let c = Mat::zeros(2, 1);
    let w = Mat::column(&[1.0, 1.0]);
    let (natural, reparam) = lemma1_step_pair(&g, &a, &c, &w, 0.1).unwrap();
    assert!(natural.sub(&Mat::column(&[0.975, 0.9])).unwrap().max_abs() < 1e-15);
    assert!(natural.sub(&reparam).unwrap().max_abs() < 1e-12);
}

#[test]
fn frozen_sngd_step_equals_manual_sgd_step() {
    let data: Dataset = gen_blobs(3, 30, 4, 3, 10.0).unwrap();
    let mut m = model(&[4, 6, 5, 3], ActivationKind::Sigmoid, &FisherConfig::frozen(), 11);
    let mut opt = optimizer(OptimizerKind::Sngd, 0.05, 0.9, &m);
    let mut reference = m.clone();
    let mut velocity: Vec<(Mat, Mat)> = reference
        .layers()
        .iter()
        .map(|l| (Mat::zeros(l.d_out(), l.d_in()), Mat::zeros(l.d_out(), 1)))
        .collect();
    for step in 0..100 {
        let idx: Vec<usize> = (0..10).map(|k| (step * 10 + k) % data.len()).collect();
        let x = data.x.select_columns(&idx);
        let labels: Vec<usize> = idx.iter().map(|&j| data.labels[j]).collect();
        sngd_train_step(&mut m, &x, &labels, &mut opt).unwrap();

        let trace = forward(&reference, &x).unwrap();
        let (_, d_logits) = softmax_xent_l2(trace.logits(), &labels, &reference).unwrap();
        let grads = backward(&reference, &trace, &d_logits).unwrap();
        for ((layer, g), (vw, vb)) in reference.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
            let (w, v) = sgd_step(&layer.weights, &g.weights, 0.05, 0.9, vw).unwrap();
            layer.weights = w;
            *vw = v;
            let (b, v) = sgd_step(&layer.bias, &g.bias, 0.05, 0.9, vb).unwrap();
            layer.bias = b;
            *vb = v;
        }
        assert_eq!(bits(&m), bits(&reference), "diverged at step {step}");
    }
}

#[test]
fn frozen_sngd_trajectory_matches_sgd_bitwise() {
    let data: Dataset = gen_blobs(5, 60, 2, 2, 10.0).unwrap();
    let empty = data.take(0);
    let run = |kind| {
        let mut m = model(&[2, 16, 2], ActivationKind::Sigmoid, &FisherConfig::frozen(), 2);
        let mut opt = optimizer(kind, 0.1, 0.0, &m);
        let rows = train(&mut m, &mut opt, &data, &empty, &settings(10, 12, true), |_| {}).unwrap();
        (rows, bits(&m))
    };
    let (sgd_rows, sgd_bits) = run(OptimizerKind::Sgd);
    let (sngd_rows, sngd_bits) = run(OptimizerKind::Sngd);
    assert_eq!(sgd_rows.len(), 100);
    for (a, b) in sgd_rows.iter().zip(&sngd_rows) {
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
        assert_eq!(a.train_acc.to_bits(), b.train_acc.to_bits());
    }
    assert_eq!(sgd_bits, sngd_bits);
}

#[test]
fn blobs_epoch_loss_strictly_decreases() {
    let data: Dataset = gen_blobs(8, 500, 2, 2, 10.0).unwrap();
    let empty = data.take(0);
    for kind in [OptimizerKind::Sgd, OptimizerKind::Sngd] {
        let fisher = match kind {
            OptimizerKind::Sgd => FisherConfig::frozen(),
            OptimizerKind::Sngd => FisherConfig::default(),
        };
        let mut m = model(&[2, 16, 2], ActivationKind::Sigmoid, &fisher, 4);
        let mut opt = optimizer(kind, 0.1, 0.0, &m);
        let rows = train(&mut m, &mut opt, &data, &empty, &settings(10, 50, false), |_| {}).unwrap();
        assert_eq!(rows.last().unwrap().step, 200);
        for pair in rows.windows(2) {
            assert!(pair[1].train_loss < pair[0].train_loss, "{kind:?}: {pair:?}");
        }
        let (_, acc) = evaluate(&m, &data).unwrap();
        assert!(acc > 0.95, "{kind:?}: {acc}");
    }
}

#[test]
fn step_changes_whitening_only_on_schedule() {
    let data: Dataset = gen_blobs(1, 20, 3, 2, 10.0).unwrap();
    let fisher = FisherConfig {
        interval: 3,
        ..FisherConfig::default()
    };
    let mut m = model(&[3, 5, 2], ActivationKind::Relu, &fisher, 6);
    let mut opt = optimizer(OptimizerKind::Sngd, 0.1, 0.0, &m);
    for step in 1..=9u64 {
        let before = m.clone();
        let rep = sngd_train_step(&mut m, &data.x, &data.labels, &mut opt).unwrap();
        for (l0, l1) in before.layers().iter().zip(m.layers()) {
            assert_ne!(l0.weights, l1.weights);
            assert_ne!(l0.bias, l1.bias);
            assert_eq!(l0.fisher.s() != l1.fisher.s(), step % 3 == 0, "step {step}");
        }
        assert_eq!(rep.refreshed, if step % 3 == 0 { 2 } else { 0 });
    }
}

fn brute_accuracy(m: &MlpModel, data: &Dataset) -> f64 {
    let mut correct = 0;
    for j in 0..data.len() {
        let trace = forward(m, &data.x.select_columns(&[j])).unwrap();
        let p = &trace.probabilities;
        let mut best = 0;
        for i in 1..p.rows() {
            if p[(i, 0)] > p[(best, 0)] {
                best = i;
            }
        }
        correct += usize::from(best == data.labels[j]);
    }
    correct as f64 / data.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn equivalence_holds_for_random_instances(dim in 1usize..=32, seed in any::<u64>()) {
        prop_assert!(lemma1_equivalence_check(dim, seed) < 1e-10);
    }

    #[test]
    fn sgd_step_matches_recurrence(
        vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..20),
        lr in 0.0f64..1.0,
        momentum in 0.0f64..0.99,
    ) {
        let p = Mat::column(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
        let g = Mat::column(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
        let v = Mat::column(&vals.iter().map(|v| v.2).collect::<Vec<_>>());
        let (p1, v1) = sgd_step(&p, &g, lr, momentum, &v).unwrap();
        for i in 0..vals.len() {
            let vi = momentum * v[(i, 0)] + g[(i, 0)];
            prop_assert_eq!(v1[(i, 0)], vi);
            prop_assert_eq!(p1[(i, 0)], p[(i, 0)] - lr * vi);
        }
        prop_assert!(sgd_step(&p, &Mat::zeros(vals.len() + 1, 1), lr, momentum, &v).is_err());
    }

    #[test]
    fn evaluate_is_pure_and_matches_brute_force(
        n in 1usize..60,
        classes in 2usize..5,
        seed in any::<u64>(),
        whitened in any::<bool>(),
    ) {
        let data: Dataset = gen_blobs(seed, n, 3, classes, 2.0).unwrap();
        let mut m = model(&[3, 7, classes], ActivationKind::Relu, &FisherConfig::default(), seed);
        if whitened {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let s = Mat::from_fn(3, 3, |i, j| if i == j { 1.0 } else { rng.random_range(-0.3..0.3) });
            m.layers_mut()[0].fisher.set_matrix(s).unwrap();
        }
        let before = m.clone();
        let (loss_seq, acc_seq) = evaluate_with(&m, &data, Exec::Sequential).unwrap();
        let (loss_par, acc_par) = evaluate_with(&m, &data, Exec::Parallel).unwrap();
        prop_assert_eq!(&m, &before);
        prop_assert_eq!(m.fingerprint(), before.fingerprint());
        prop_assert_eq!(loss_seq.to_bits(), loss_par.to_bits());
        prop_assert_eq!(acc_seq, acc_par);
        prop_assert_eq!(acc_seq, brute_accuracy(&m, &data));
    }
}

#[test]
fn evaluate_rejects_empty_dataset() {
    let m = model(&[2, 2], ActivationKind::Relu, &FisherConfig::frozen(), 0);
    let empty = Dataset::new(Mat::zeros(2, 0), vec![], 2, Split::Val).unwrap();
    assert!(evaluate(&m, &empty).is_err());
}

use fisherflow::fisher::{local_fisher, solve_invsqrt, FisherConfig, FisherState, RefreshOutcome, SolverKind};
use fisherflow::linalg::{eigh_jacobi, spd_invsqrt_oracle};
use fisherflow::network::ActivationKind;
use fisherflow::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

fn activation() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![
        Just(ActivationKind::Sigmoid),
        Just(ActivationKind::Relu),
        Just(ActivationKind::Identity),
    ]
}

fn solver() -> impl Strategy<Value = SolverKind> {
    prop_oneof![
        Just(SolverKind::NewtonSchulz),
        Just(SolverKind::DenmanBeavers),
        Just(SolverKind::Oracle),
    ]
}

fn brute_whiten(s: &Mat, x: &Mat) -> Mat {
    Mat::from_fn(s.rows(), x.cols(), |i, j| (0..s.cols()).map(|k| s[(i, k)] * x[(k, j)]).sum())
}

#[test]
fn first_refresh_starts_from_identity() {
    let mut st = FisherState::<f64>::new(3, FisherConfig::default());
    assert!(st.is_identity());
    assert_eq!(st.s(), &Mat::identity(3));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = batch(&mut rng, 3, 6);
    let z = batch(&mut rng, 2, 6);
    let out = st.refresh(&x, &z, ActivationKind::Sigmoid).unwrap();
    assert!(matches!(out, RefreshOutcome::Refreshed(_)));
    assert!(!st.is_identity());
    assert_eq!(st.refreshes(), 1);
}

#[test]
fn frozen_state_never_changes() {
    let mut st = FisherState::<f64>::new(4, FisherConfig::frozen());
    let before = st.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let x = batch(&mut rng, 4, 5);
        let z = batch(&mut rng, 3, 5);
        assert_eq!(st.refresh(&x, &z, ActivationKind::Relu).unwrap(), RefreshOutcome::Skipped);
    }
    assert_eq!(st.s(), before.s());
    assert!(st.is_identity());
    assert_eq!((st.refreshes(), st.failures(), st.step_counter()), (0, 0, 50));
}

#[test]
fn oracle_solver_reproduces_exact_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = batch(&mut rng, 5, 12);
    let z = batch(&mut rng, 4, 12);
    let cfg = FisherConfig {
        solver: SolverKind::Oracle,
        ..FisherConfig::default()
    };
    let mut st = FisherState::<f64>::new(5, cfg.clone());
    st.refresh(&x, &z, ActivationKind::Sigmoid).unwrap();
    let vf = ActivationKind::Sigmoid.sensitivity(&z);
    let g = local_fisher(&x, &vf, cfg.eps_rel, cfg.floor_abs).unwrap().g_damped;
    let expected = spd_invsqrt_oracle(&g).unwrap().symmetrize();
    assert!(st.s().sub(&expected).unwrap().max_abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refreshed_s_is_symmetric_positive_definite(
        d in 1usize..=12,
        b in 1usize..=16,
        act in activation(),
        solver in solver(),
        eps in 1e-3f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = FisherConfig { solver, eps_rel: eps, solver_iters: if solver == SolverKind::DenmanBeavers { 50 } else { 20 }, ..FisherConfig::default() };
        let mut st = FisherState::<f64>::new(d, cfg);
        for _ in 0..3 {
            let x = batch(&mut rng, d, b);
            let z = batch(&mut rng, 4, b);
            prop_assert!(matches!(st.refresh(&x, &z, act).unwrap(), RefreshOutcome::Refreshed(_)));
            let s = st.s();
            prop_assert!(s.sub(&s.transpose()).unwrap().frobenius_norm() < 1e-8);
            prop_assert!(eigh_jacobi(s).unwrap().min_value() > 0.0);
        }
    }

    #[test]
    fn refresh_count_follows_schedule(steps in 0u64..200, interval in 1usize..=25) {
        let cfg = FisherConfig { interval, solver: SolverKind::Oracle, ..FisherConfig::default() };
        let mut st = FisherState::<f64>::new(2, cfg);
        let x = Mat::from_fn(2, 3, |i, j| (i as f64 - j as f64) * 0.5);
        let z = Mat::from_fn(2, 3, |i, j| (i + j) as f64 * 0.1);
        let mut refreshed = 0u64;
        for _ in 0..steps {
            if matches!(st.refresh(&x, &z, ActivationKind::Relu).unwrap(), RefreshOutcome::Refreshed(_)) {
                refreshed += 1;
            }
        }
        prop_assert_eq!(refreshed, steps / interval as u64);
        prop_assert_eq!(st.refreshes(), steps / interval as u64);
        prop_assert_eq!(st.step_counter(), steps);
    }

    #[test]
    fn zero_ema_replaces_with_solver_output(d in 1usize..=10, b in 1usize..=10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = FisherConfig::default();
        let mut st = FisherState::<f64>::new(d, cfg.clone());
        st.set_matrix(Mat::from_diag(&vec![3.0; d])).unwrap();
        let x = batch(&mut rng, d, b);
        let z = batch(&mut rng, 3, b);
        st.refresh(&x, &z, ActivationKind::Sigmoid).unwrap();
        let vf = ActivationKind::Sigmoid.sensitivity(&z);
        let g = local_fisher(&x, &vf, cfg.eps_rel, cfg.floor_abs).unwrap().g_damped;
        let (expected, _) = solve_invsqrt(&g, cfg.solver, cfg.solver_iters).unwrap();
        prop_assert_eq!(st.s(), &expected);
    }

    #[test]
    fn whiten_matches_explicit_product(d in 1usize..=12, b in 1usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = FisherState::<f64>::new(d, FisherConfig::default());
        st.set_matrix(batch(&mut rng, d, d)).unwrap();
        let x = batch(&mut rng, d, b);
        let w = st.whiten(&x).unwrap();
        prop_assert!(w.sub(&brute_whiten(st.s(), &x)).unwrap().max_abs() < 1e-12);
        let wt = st.whiten_transposed(&x).unwrap();
        prop_assert!(wt.sub(&brute_whiten(&st.s().transpose(), &x)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn s_sequence_is_deterministic(d in 1usize..=8, ema in 0.0f64..0.9, seed in any::<u64>()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = FisherConfig { ema, ..FisherConfig::default() };
            let mut st = FisherState::<f64>::new(d, cfg);
            let mut seq = Vec::new();
            for _ in 0..5 {
                let x = batch(&mut rng, d, 7);
                let z = batch(&mut rng, 3, 7);
                st.refresh(&x, &z, ActivationKind::Relu).unwrap();
                seq.push(st.s().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
            seq
        };
        prop_assert_eq!(run(), run());
    }
}

//! Built-in sanity checks. The gradient routine is a parameter so that a
//! deliberately broken backward pass can be shown to fail them.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::gen_blobs;
use crate::fisher::FisherConfig;
use crate::linalg::{
    log_uniform_spectrum, random_spd, spd_invsqrt_oracle, db_sqrt, ns_invsqrt, Mat, DB_DEFAULT_MAX_ITERS,
    DB_DEFAULT_TOL, NS_DEFAULT_ITERS,
};
use crate::network::{
    backward, forward, softmax_xent_l2, ActivationKind, ForwardTrace, LayerGradient, MlpModel, NetworkError,
};
use crate::training::{lemma1_equivalence_check, sngd_train_step, Optimizer, OptimizerConfig, OptimizerKind};

use super::{EXIT_FAILED, EXIT_OK};

pub type GradientFn =
    fn(&MlpModel, &ForwardTrace, &Mat) -> Result<Vec<LayerGradient>, NetworkError>;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FD_REL_FLOOR: f64 = 1e-4;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const SOLVER_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn loss_of(model: &MlpModel, x: &Mat, labels: &[usize]) -> f64 {
    let trace = forward(model, x).expect("shapes fixed by construction");
    softmax_xent_l2(trace.logits(), labels, model).expect("valid labels").0
}

fn param_mut(m: &mut MlpModel, layer: usize, which: usize) -> &mut Mat {
    let l = &mut m.layers_mut()[layer];
    if which == 0 {
        &mut l.weights
    } else {
        &mut l.bias
    }
}

/// `|a − n| / max(|a|, |n|, FD_REL_FLOOR)` maximized over every weight and
/// bias, where `a` comes from `grad` and `n` from central differences.
pub fn gradient_error(model: &MlpModel, x: &Mat, labels: &[usize], grad: GradientFn) -> f64 {
    let trace = forward(model, x).expect("shapes fixed by construction");
    let (_, d_logits) = softmax_xent_l2(trace.logits(), labels, model).expect("valid labels");
    let analytic = match grad(model, &trace, &d_logits) {
        Ok(g) if g.len() == model.layers().len() => g,
        _ => return f64::INFINITY,
    };
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, g) in analytic.iter().enumerate() {
        for which in 0..2 {
            let reference = if which == 0 { &g.weights } else { &g.bias };
            let len = reference.as_slice().len();
            for idx in 0..len {
                let orig = param_mut(&mut probe, k, which).as_slice()[idx];
                param_mut(&mut probe, k, which).as_mut_slice()[idx] = orig + FD_STEP;
                let up = loss_of(&probe, x, labels);
                param_mut(&mut probe, k, which).as_mut_slice()[idx] = orig - FD_STEP;
                let down = loss_of(&probe, x, labels);
                param_mut(&mut probe, k, which).as_mut_slice()[idx] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = reference.as_slice()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_REL_FLOOR);
                worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
            }
        }
    }
    worst
}

/// Small sigmoid MLP with random SPD whitening matrices.
pub fn random_whitened_model<R: Rng>(rng: &mut R) -> MlpModel {
    let depth = rng.random_range(2..=3);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(2..=5)).collect();
    let mut model =
        MlpModel::new_random(&widths, ActivationKind::Sigmoid, 0.01, &FisherConfig::frozen(), rng).expect("widths >= 1");
    for layer in model.layers_mut() {
        let spectrum: Vec<f64> = (0..layer.d_in()).map(|_| rng.random_range(0.5..2.0)).collect();
        let s: Mat = random_spd(&spectrum, rng);
        layer.fisher.set_matrix(s).expect("matching dimension");
    }
    model
}

fn check_gradients(grad: GradientFn) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let model = random_whitened_model(&mut rng);
        let x = Mat::from_fn(model.input_dim(), 4, |_, _| StandardNormal.sample(&mut rng));
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..model.num_classes())).collect();
        worst = worst.max(gradient_error(&model, &x, &labels, grad));
    }
    CheckResult {
        name: "gradient",
        passed: worst < GRADIENT_TOL,
        detail: format!("max relative error {worst:.3e} over 10 models (tol {GRADIENT_TOL:e})"),
    }
}

fn check_equivalence() -> CheckResult {
    let worst = [1usize, 2, 4, 8, 16, 32]
        .iter()
        .flat_map(|&d| (0..10).map(move |s| lemma1_equivalence_check(d, s)))
        .fold(0.0f64, f64::max);
    CheckResult {
        name: "equivalence",
        passed: worst < EQUIVALENCE_TOL,
        detail: format!("max discrepancy {worst:.3e} (tol {EQUIVALENCE_TOL:e})"),
    }
}

fn check_solvers() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5bd);
    let mut worst = 0.0f64;
    let mut error = None;
    for _ in 0..20 {
        let d = rng.random_range(1..=32);
        let a: Mat = random_spd(&log_uniform_spectrum(d, 1e4, &mut rng), &mut rng);
        let solved = spd_invsqrt_oracle(&a).and_then(|o| {
            let (z_ns, _) = ns_invsqrt(&a, NS_DEFAULT_ITERS)?;
            let (_, z_db, _) = db_sqrt(&a, DB_DEFAULT_MAX_ITERS, DB_DEFAULT_TOL)?;
            let n = o.frobenius_norm();
            Ok(z_ns.sub(&o)?.frobenius_norm().max(z_db.sub(&o)?.frobenius_norm()) / n)
        });
        match solved {
            Ok(e) => worst = worst.max(e),
            Err(e) => error = Some(e.to_string()),
        }
    }
    CheckResult {
        name: "spd_solvers",
        passed: error.is_none() && worst < SOLVER_TOL,
        detail: match error {
            Some(e) => format!("solver error: {e}"),
            None => format!("max relative error vs oracle {worst:.3e} (tol {SOLVER_TOL:e})"),
        },
    }
}

fn check_identity_reduction() -> CheckResult {
    let data = gen_blobs::<f64>(7, 50, 2, 2, 10.0).expect("valid blob counts");
    let build = |kind| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model =
            MlpModel::new_random(&[2, 8, 2], ActivationKind::Sigmoid, 1e-3, &FisherConfig::frozen(), &mut rng)
                .expect("valid widths");
        let cfg = OptimizerConfig {
            kind,
            lr: 0.1,
            momentum: 0.9,
        };
        let opt = Optimizer::new(cfg, &model).expect("valid optimizer");
        (model, opt)
    };
    let (mut a, mut opt_a) = build(OptimizerKind::Sgd);
    let (mut b, mut opt_b) = build(OptimizerKind::Sngd);
    let mut identical = true;
    for step in 0..100 {
        let idx: Vec<usize> = (0..10).map(|i| (step * 10 + i) % data.len()).collect();
        let x = data.x.select_columns(&idx);
        let labels: Vec<usize> = idx.iter().map(|&j| data.labels[j]).collect();
        let la = sngd_train_step(&mut a, &x, &labels, &mut opt_a).map(|r| r.loss);
        let lb = sngd_train_step(&mut b, &x, &labels, &mut opt_b).map(|r| r.loss);
        identical &= matches!((la, lb), (Ok(p), Ok(q)) if p.to_bits() == q.to_bits());
    }
    identical &= a.fingerprint() == b.fingerprint();
    CheckResult {
        name: "identity_reduction",
        passed: identical,
        detail: "100 steps, frozen identity whitening vs plain SGD, bitwise".into(),
    }
}

/// Runs every check with `grad` as the backward pass.
pub fn run_checks(grad: GradientFn) -> Vec<CheckResult> {
    vec![
        check_gradients(grad),
        check_equivalence(),
        check_solvers(),
        check_identity_reduction(),
    ]
}

/// Prints one line per check; exit code 0 only if all pass.
pub fn selftest_with(grad: GradientFn, out: &mut dyn Write) -> i32 {
    let results = run_checks(grad);
    for r in &results {
        let _ = writeln!(out, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

pub fn cmd_selftest(out: &mut dyn Write) -> i32 {
    selftest_with(backward::<f64>, out)
}

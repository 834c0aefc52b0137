use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{failed, CliError};
use crate::linalg::{
    db_sqrt, eigh_jacobi, log_uniform_spectrum, ns_invsqrt, random_spd, Mat, DB_DEFAULT_MAX_ITERS,
    DB_DEFAULT_TOL, NS_DEFAULT_ITERS,
};

#[derive(Clone, Debug, PartialEq)]
pub struct MatsqrtRow {
    pub trial: usize,
    pub method: &'static str,
    pub iterations: usize,
    /// `‖Z·A·Z − I‖_F`.
    pub residual: f64,
    /// `‖Z − Z_oracle‖_F / ‖Z_oracle‖_F`.
    pub rel_err: f64,
    pub millis: f64,
}

fn residual(a: &Mat, z: &Mat) -> f64 {
    z.matmul(a)
        .and_then(|m| m.matmul(z))
        .and_then(|m| m.sub(&Mat::identity(a.rows())))
        .map_or(f64::NAN, |m| m.frobenius_norm())
}

/// Times Newton–Schulz, Denman–Beavers and the eigen oracle on `trials`
/// random SPD matrices with condition number `condition`, printing one line
/// per method and trial.
pub fn cmd_matsqrt(
    dim: usize,
    trials: usize,
    seed: u64,
    condition: f64,
    out: &mut dyn Write,
) -> Result<Vec<MatsqrtRow>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(3 * trials);
    writeln!(
        out,
        "{:>5} {:>7} {:>6} {:>12} {:>12} {:>10}",
        "trial", "method", "iters", "residual", "rel_err", "ms"
    )
    .map_err(failed)?;
    for trial in 0..trials {
        let spectrum = log_uniform_spectrum(dim, condition, &mut rng);
        let a: Mat = random_spd(&spectrum, &mut rng);

        let t = Instant::now();
        let eig = eigh_jacobi(&a).map_err(failed)?;
        let oracle = eig.map_spectrum(|l| 1.0 / l.sqrt());
        let oracle_ms = t.elapsed().as_secs_f64() * 1e3;
        let oracle_norm = oracle.frobenius_norm();
        let rel = |z: &Mat| z.sub(&oracle).map_or(f64::NAN, |d| d.frobenius_norm() / oracle_norm);

        let t = Instant::now();
        let (z_ns, ns) = ns_invsqrt(&a, NS_DEFAULT_ITERS).map_err(failed)?;
        let ns_ms = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let (_, z_db, db) = db_sqrt(&a, DB_DEFAULT_MAX_ITERS, DB_DEFAULT_TOL).map_err(failed)?;
        let db_ms = t.elapsed().as_secs_f64() * 1e3;

        let trial_rows = [
            MatsqrtRow {
                trial,
                method: "ns",
                iterations: ns.iterations_used,
                residual: ns.residual,
                rel_err: rel(&z_ns),
                millis: ns_ms,
            },
            MatsqrtRow {
                trial,
                method: "db",
                iterations: db.iterations_used,
                residual: db.residual,
                rel_err: rel(&z_db),
                millis: db_ms,
            },
            MatsqrtRow {
                trial,
                method: "oracle",
                iterations: eig.sweeps,
                residual: residual(&a, &oracle),
                rel_err: 0.0,
                millis: oracle_ms,
            },
        ];
        for r in &trial_rows {
            writeln!(
                out,
                "{:>5} {:>7} {:>6} {:>12.3e} {:>12.3e} {:>10.3}",
                r.trial, r.method, r.iterations, r.residual, r.rel_err, r.millis
            )
            .map_err(failed)?;
        }
        rows.extend(trial_rows);
    }
    let total = |m: &str| rows.iter().filter(|r| r.method == m).map(|r| r.millis).sum::<f64>();
    if trials > 0 {
        writeln!(
            out,
            "oracle/ns time ratio {:.2}, oracle/db time ratio {:.2}",
            total("oracle") / total("ns"),
            total("oracle") / total("db")
        )
        .map_err(failed)?;
    }
    Ok(rows)
}

//! Local Fisher layers.
//!
//! Each dense layer owns a [`FisherState`] holding `S = G^(-1/2)`, where
//!
//! ```text
//! G = damp( E[v_f²] · E[x xᵀ] )
//! ```
//!
//! is estimated from the current batch: `x` are the layer's raw inputs and
//! `v_f = f'(z)` the activation sensitivities at the pre-activations produced
//! with the *current* `S`. `E[v_f²]` is a scalar mean over the batch and all
//! output units, which keeps `G` a `d_in × d_in` matrix.
//!
//! `S` starts at the identity and is replaced (or blended, see
//! [`FisherConfig::ema`]) every `interval` steps. It never receives a
//! gradient.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    damp_spd, db_sqrt, gram_mean, ns_invsqrt, spd_invsqrt_oracle, LinalgError, Mat,
    SpdSolveReport, DB_DEFAULT_TOL, RESIDUAL_TOL,
};
use crate::network::ActivationKind;
use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum FisherError {
    #[error("batch mismatch: inputs have {inputs} samples, sensitivities have {sensitivities}")]
    BatchMismatch { inputs: usize, sensitivities: usize },
    #[error("whitening expects {expected} rows, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid fisher configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which inverse-square-root routine refreshes `S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    NewtonSchulz,
    DenmanBeavers,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherConfig {
    pub eps_rel: f64,
    pub floor_abs: f64,
    /// Refresh every `interval` training steps.
    pub interval: usize,
    /// Weight of the previous `S` when blending; 0 replaces outright.
    pub ema: f64,
    pub solver: SolverKind,
    /// Newton–Schulz step count, or the Denman–Beavers iteration cap.
    pub solver_iters: usize,
    /// Never refresh: `S` stays at its initial identity.
    pub frozen: bool,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            eps_rel: 0.1,
            floor_abs: 1e-8,
            interval: 1,
            ema: 0.0,
            solver: SolverKind::NewtonSchulz,
            solver_iters: 15,
            frozen: false,
        }
    }
}

impl FisherConfig {
    /// A configuration that keeps `S = I` forever (plain SGD).
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            ..Self::default()
        }
    }

    /// Returns the offending key and reason on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.eps_rel.is_finite() && self.eps_rel >= 0.0) {
            return Err(("eps_rel", "must be finite and >= 0".into()));
        }
        if !(self.floor_abs.is_finite() && self.floor_abs >= 0.0) {
            return Err(("floor_abs", "must be finite and >= 0".into()));
        }
        if self.eps_rel == 0.0 && self.floor_abs == 0.0 {
            return Err(("floor_abs", "eps_rel and floor_abs cannot both be 0".into()));
        }
        if self.interval == 0 {
            return Err(("interval", "must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.ema) {
            return Err(("ema", "must lie in [0, 1)".into()));
        }
        if self.solver_iters == 0 {
            return Err(("solver_iters", "must be >= 1".into()));
        }
        Ok(())
    }
}

/// One batch estimate of the local Fisher matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherEstimate<T = f64> {
    /// `E[v_f²]` over batch and output units.
    pub scalar_v: T,
    /// `E[x xᵀ]`.
    pub gram: Mat<T>,
    /// `damp(scalar_v · gram)`, symmetric positive-definite.
    pub g_damped: Mat<T>,
}

/// Local Fisher estimate from layer inputs `x` (`d × B`) and sensitivities
/// `vf` (`d_out × B`).
pub fn local_fisher<T: Real>(
    x: &Mat<T>,
    vf: &Mat<T>,
    eps_rel: f64,
    floor_abs: f64,
) -> Result<FisherEstimate<T>, FisherError> {
    if x.cols() != vf.cols() {
        return Err(FisherError::BatchMismatch {
            inputs: x.cols(),
            sensitivities: vf.cols(),
        });
    }
    let gram = gram_mean(x)?;
    let count = vf.rows() * vf.cols();
    let scalar_v = if count == 0 {
        T::zero()
    } else {
        vf.as_slice().iter().map(|&v| v * v).sum::<T>() / T::lit(count as f64)
    };
    let g_damped = damp_spd(&gram.scale(scalar_v), eps_rel, floor_abs)?;
    Ok(FisherEstimate {
        scalar_v,
        gram,
        g_damped,
    })
}

/// Runs the configured solver for `g^(-1/2)` and symmetrizes the result.
pub fn solve_invsqrt<T: Real>(
    g: &Mat<T>,
    solver: SolverKind,
    iters: usize,
) -> Result<(Mat<T>, SpdSolveReport), LinalgError> {
    let (root, report) = match solver {
        SolverKind::NewtonSchulz => ns_invsqrt(g, iters)?,
        SolverKind::DenmanBeavers => {
            let (_, z, report) = db_sqrt(g, iters, DB_DEFAULT_TOL)?;
            (z, report)
        }
        SolverKind::Oracle => {
            let z = spd_invsqrt_oracle(g)?;
            let residual = z
                .matmul(g)?
                .matmul(&z)?
                .sub(&Mat::identity(g.rows()))?
                .frobenius_norm()
                .as_f64();
            let report = SpdSolveReport {
                iterations_used: 1,
                residual,
                converged: residual <= RESIDUAL_TOL,
                tolerance: RESIDUAL_TOL,
            };
            (z, report)
        }
    };
    Ok((root.symmetrize(), report))
}

/// What a call to [`FisherState::refresh`] did.
#[derive(Clone, Debug, PartialEq)]
pub enum RefreshOutcome {
    /// Frozen, or not a scheduled step.
    Skipped,
    Refreshed(SpdSolveReport),
    /// The solver failed; `S` was kept.
    Failed(LinalgError),
}

/// Whitening state of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherState<T = f64> {
    s: Mat<T>,
    /// `S` is exactly the identity; whitening can be skipped.
    identity: bool,
    config: FisherConfig,
    step_counter: u64,
    refreshes: u64,
    failures: u64,
    last_report: Option<SpdSolveReport>,
}

impl<T: Real> FisherState<T> {
    pub fn new(dim: usize, config: FisherConfig) -> Self {
        Self {
            s: Mat::identity(dim),
            identity: true,
            config,
            step_counter: 0,
            refreshes: 0,
            failures: 0,
            last_report: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn s(&self) -> &Mat<T> {
        &self.s
    }

    pub fn config(&self) -> &FisherConfig {
        &self.config
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn failures(&self) -> u64 {
        self.failures
    }

    pub fn last_report(&self) -> Option<&SpdSolveReport> {
        self.last_report.as_ref()
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// Overrides `S` directly (used to set up experiments and tests).
    pub fn set_matrix(&mut self, s: Mat<T>) -> Result<(), FisherError> {
        if s.shape() != self.s.shape() {
            return Err(FisherError::DimensionMismatch {
                expected: self.dim(),
                got: s.rows(),
            });
        }
        self.identity = s == Mat::identity(self.dim());
        self.s = s;
        Ok(())
    }

    /// `S · x`.
    pub fn whiten(&self, x: &Mat<T>) -> Result<Mat<T>, FisherError> {
        if x.rows() != self.dim() {
            return Err(FisherError::DimensionMismatch {
                expected: self.dim(),
                got: x.rows(),
            });
        }
        if self.identity {
            return Ok(x.clone());
        }
        Ok(self.s.matmul(x)?)
    }

    /// `Sᵀ · g`, the backward counterpart of [`whiten`](Self::whiten).
    pub fn whiten_transposed(&self, g: &Mat<T>) -> Result<Mat<T>, FisherError> {
        if g.rows() != self.dim() {
            return Err(FisherError::DimensionMismatch {
                expected: self.dim(),
                got: g.rows(),
            });
        }
        if self.identity {
            return Ok(g.clone());
        }
        Ok(self.s.t_matmul(g)?)
    }

    /// Advances the step counter and, on scheduled steps, re-estimates `S`
    /// from raw inputs `x` and pre-activations `z` (computed with the current
    /// `S`).
    ///
    /// Solver failures keep the old `S`, bump the failure count and return
    /// `Ok(RefreshOutcome::Failed)`; only malformed arguments are errors.
    pub fn refresh(
        &mut self,
        x: &Mat<T>,
        z: &Mat<T>,
        act: ActivationKind,
    ) -> Result<RefreshOutcome, FisherError> {
        self.step_counter += 1;
        if self.config.frozen || !self.step_counter.is_multiple_of(self.config.interval as u64) {
            return Ok(RefreshOutcome::Skipped);
        }
        if x.rows() != self.dim() {
            return Err(FisherError::DimensionMismatch {
                expected: self.dim(),
                got: x.rows(),
            });
        }
        if x.cols() != z.cols() {
            return Err(FisherError::BatchMismatch {
                inputs: x.cols(),
                sensitivities: z.cols(),
            });
        }

        let vf = act.sensitivity(z);
        let solved = local_fisher(x, &vf, self.config.eps_rel, self.config.floor_abs)
            .map_err(|e| match e {
                FisherError::Linalg(l) => l,
                other => LinalgError::InvalidArgument(other.to_string()),
            })
            .and_then(|est| solve_invsqrt(&est.g_damped, self.config.solver, self.config.solver_iters));

        let (s_new, report) = match solved {
            Ok(r) => r,
            Err(e) => {
                self.failures += 1;
                return Ok(RefreshOutcome::Failed(e));
            }
        };

        self.s = if self.config.ema == 0.0 {
            s_new
        } else {
            let keep = T::lit(self.config.ema);
            let mut blended = s_new.scale(T::one() - keep);
            blended.add_scaled_in_place(keep, &self.s)?;
            blended.symmetrize()
        };
        self.identity = false;
        self.refreshes += 1;
        self.last_report = Some(report);
        Ok(RefreshOutcome::Refreshed(report))
    }
}

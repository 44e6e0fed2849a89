//! Penalized (Moreau-Yosida regularized) dynamics of the crawler.
//!
//! For an index `n = (n1, n2)` the velocity `yⁿ` of body 1 solves
//!
//! ```text
//! M ẏⁿ + φ'_{1,n1}(yⁿ) + φ'_{2,n2}(yⁿ + ℓ̇) = -m2 ℓ̈,   yⁿ(0) = y0
//! ```
//!
//! and the impulses `k1ⁿ = ∫ φ'_{1,n1}(yⁿ)`, `k2ⁿ = ∫ φ'_{2,n2}(yⁿ + ℓ̇) + c2`
//! with `c2 = -M y0 - m2 ℓ̇(0)` satisfy `M yⁿ + k1ⁿ + k2ⁿ = -m2 ℓ̇` for all t.

mod dopri;
mod refine;

pub use refine::{
    cauchy_bound, cauchy_bound_multi, refine, run_schedule, sup_difference, Certificate,
    schedule_pairs, PairCheck, RefineError, RefineOutcome, RefineSettings,
};
pub(crate) use dopri::output_grid;
pub(crate) use refine::{refine_with, run_stages};

use crate::model::{GaitProgram, InitialConditions, PhysicalParams};
use crate::moreau_yosida::{FrictionPotential, RegularizationIndex};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("step size underflow at t = {t} (h = {h:e}); the index is too large for these tolerances")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {steps} exhausted at t = {t}")]
    StepBudget { t: f64, steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("linear relation residual {residual:e} exceeds {tolerance:e}")]
    LinearRelationDrift { residual: f64, tolerance: f64 },
}

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    /// Spacing of the uniform output grid.
    pub output_grid: f64,
    /// Upper bound on `max(n)·h`; steps are capped at `stiffness_guard / max(n)`.
    /// Zero disables the cap.
    pub stiffness_guard: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_max: 1e-2,
            output_grid: 1e-3,
            stiffness_guard: 1.0,
            max_steps: 50_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SolverError::InvalidConfig {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        };
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        positive("h_max", self.h_max)?;
        positive("output_grid", self.output_grid)?;
        if !(self.stiffness_guard.is_finite() && self.stiffness_guard >= 0.0) {
            return Err(SolverError::InvalidConfig {
                field: "stiffness_guard",
                reason: format!("must be finite and >= 0, got {}", self.stiffness_guard),
            });
        }
        if self.max_steps == 0 {
            return Err(SolverError::InvalidConfig {
                field: "max_steps",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    /// Tolerance on the linear relation residual for a run whose velocity
    /// peaks at `max_abs_y`.
    pub fn linear_tolerance(&self, max_abs_y: f64) -> f64 {
        10.0 * (self.atol + self.rtol * max_abs_y)
    }
}

/// A penalized system with one reduced velocity and `channels()` clamped
/// friction terms.
pub trait FrictionSystem: Sync {
    fn channels(&self) -> usize;
    fn total_mass(&self) -> f64;
    /// Largest penalization index, used by the stiffness guard.
    fn max_index(&self) -> u64;
    /// Returns `ẏ` and writes the clamped friction forces into `forces`.
    fn evaluate(&self, t: f64, y: f64, forces: &mut [f64]) -> f64;
    fn initial_impulses(&self, y0: f64) -> Vec<f64>;
    /// Residual of the linear relation between velocity and impulses.
    fn linear_residual(&self, t: f64, y: f64, k: &[f64]) -> f64;
    /// Times where the forcing may be discontinuous.
    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64>;
}

/// Step counters of one integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Output of one penalized run on the uniform output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedTrajectory {
    /// Penalization index of each friction channel.
    pub indices: Vec<u64>,
    pub grid: Vec<f64>,
    pub y: Vec<f64>,
    /// One impulse series per friction channel.
    pub impulses: Vec<Vec<f64>>,
    /// Value the last channel starts from so that the linear relation holds at t = 0.
    pub impulse_offset: f64,
    /// Max over the grid of the linear relation residual.
    pub linear_residual: f64,
    pub stats: StepStats,
}

impl PenalizedTrajectory {
    pub fn k1(&self) -> &[f64] {
        &self.impulses[0]
    }

    pub fn k2(&self) -> &[f64] {
        &self.impulses[1]
    }

    /// `c2` of the two-body problem.
    pub fn c2(&self) -> f64 {
        self.impulse_offset
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn index(&self) -> Option<RegularizationIndex> {
        match self.indices.as_slice() {
            [n1, n2] => RegularizationIndex::new(*n1, *n2).ok(),
            _ => None,
        }
    }
}

/// The two-body penalized system for a fixed index.
#[derive(Debug, Clone, Copy)]
pub struct TwoBody<'a> {
    pub params: &'a PhysicalParams,
    pub gait: &'a GaitProgram,
    pub n: RegularizationIndex,
}

impl FrictionSystem for TwoBody<'_> {
    fn channels(&self) -> usize {
        2
    }

    fn total_mass(&self) -> f64 {
        self.params.total_mass()
    }

    fn max_index(&self) -> u64 {
        self.n.max()
    }

    fn evaluate(&self, t: f64, y: f64, forces: &mut [f64]) -> f64 {
        let g = self.gait.eval(t);
        let p1 = FrictionPotential::new(self.params.f1());
        let p2 = FrictionPotential::new(self.params.f2());
        let f1 = p1.gradient(self.n.n1, y);
        let f2 = p2.gradient(self.n.n2, y + g.l_dot);
        forces[0] = f1;
        forces[1] = f2;
        (-(self.params.m2() * g.l_ddot) - f1 - f2) / self.params.total_mass()
    }

    fn initial_impulses(&self, y0: f64) -> Vec<f64> {
        let c2 = -self.params.total_mass() * y0 - self.params.m2() * self.gait.eval(0.0).l_dot;
        vec![0.0, c2]
    }

    fn linear_residual(&self, t: f64, y: f64, k: &[f64]) -> f64 {
        let g = self.gait.eval(t);
        self.params.total_mass() * y + k[0] + k[1] + self.params.m2() * g.l_dot
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.gait.breakpoints(t0, t1)
    }
}

/// Right-hand side `ẏⁿ` of the penalized equation.
pub fn rhs(
    params: &PhysicalParams,
    gait: &GaitProgram,
    n: RegularizationIndex,
    t: f64,
    y: f64,
) -> f64 {
    let mut forces = [0.0; 2];
    TwoBody { params, gait, n }.evaluate(t, y, &mut forces)
}

/// Integrates any [`FrictionSystem`] from `y0` over `[0, horizon]`.
pub fn integrate_system<S: FrictionSystem + ?Sized>(
    sys: &S,
    indices: Vec<u64>,
    y0: f64,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<PenalizedTrajectory, SolverError> {
    cfg.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SolverError::InvalidConfig {
            field: "horizon",
            reason: format!("must be finite and > 0, got {horizon}"),
        });
    }
    let k0 = sys.initial_impulses(y0);
    let offset = *k0.last().unwrap_or(&0.0);
    let mut x0 = Vec::with_capacity(k0.len() + 1);
    x0.push(y0);
    x0.extend(k0);
    let samples = dopri::integrate(sys, x0, horizon, cfg)?;

    let p = sys.channels();
    let mut y = Vec::with_capacity(samples.grid.len());
    let mut impulses = vec![Vec::with_capacity(samples.grid.len()); p];
    let mut residual: f64 = 0.0;
    for (t, x) in samples.grid.iter().zip(&samples.states) {
        y.push(x[0]);
        for c in 0..p {
            impulses[c].push(x[c + 1]);
        }
        residual = residual.max(sys.linear_residual(*t, x[0], &x[1..]).abs());
    }
    let traj = PenalizedTrajectory {
        indices,
        grid: samples.grid,
        y,
        impulses,
        impulse_offset: offset,
        linear_residual: residual,
        stats: samples.stats,
    };
    let tolerance = cfg.linear_tolerance(traj.max_abs_y());
    if !(residual <= tolerance) {
        return Err(SolverError::LinearRelationDrift {
            residual,
            tolerance,
        });
    }
    Ok(traj)
}

/// Solves the two-body penalized problem for index `n` on `[0, horizon]`.
pub fn integrate(
    params: &PhysicalParams,
    gait: &GaitProgram,
    ic: &InitialConditions,
    n: RegularizationIndex,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<PenalizedTrajectory, SolverError> {
    let sys = TwoBody { params, gait, n };
    integrate_system(&sys, n.as_vec(), ic.y0, horizon, cfg)
}

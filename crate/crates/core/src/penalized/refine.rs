//! Geometric refinement of the penalization index with a Cauchy certificate.
//!
//! For two indices `n`, `r` the penalized velocities obey
//!
//! ```text
//! sup_{[0,t]} |yⁿ - yʳ|² ≤ Σ_i f_i² (1/n_i + 1/r_i) t
//! ```
//!
//! so the number of stages needed for a target `ε` is known before any run
//! is made. All stages are integrated concurrently and combined in schedule
//! order.

use rayon::prelude::*;
use thiserror::Error;

use super::{integrate, PenalizedTrajectory, SolverConfig, SolverError};
use crate::model::{GaitProgram, InitialConditions, PhysicalParams};
use crate::moreau_yosida::RegularizationIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("invalid refinement setting `{field}`: {reason}")]
    InvalidSettings { field: &'static str, reason: String },
    #[error("run with index {index:?} failed: {source}")]
    Solver {
        index: Vec<u64>,
        #[source]
        source: SolverError,
    },
    #[error(
        "refinement budget exhausted at index {:?}: bound {:e} > ε² = {:e}",
        .0.certificate.finest, .0.certificate.theoretical_bound, .0.certificate.epsilon * .0.certificate.epsilon
    )]
    BudgetExhausted(Box<RefineOutcome>),
    #[error(
        "runs {:?} and {:?} differ by {:e}, above the Cauchy bound sqrt({:e}) + {:e}",
        .0.coarse, .0.fine, .0.measured_sup, .0.bound, .0.slack
    )]
    CauchyViolation(Box<PairCheck>),
}

/// `f1²(1/n1 + 1/r1) t + f2²(1/n2 + 1/r2) t`, a bound on `sup |yⁿ - yʳ|²` over `[0, t]`.
pub fn cauchy_bound(
    f1: f64,
    f2: f64,
    n: RegularizationIndex,
    r: RegularizationIndex,
    t: f64,
) -> f64 {
    cauchy_bound_multi(&[f1, f2], &n.as_vec(), &r.as_vec(), t)
}

/// The same bound for any number of friction channels.
pub fn cauchy_bound_multi(frictions: &[f64], n: &[u64], r: &[u64], t: f64) -> f64 {
    frictions
        .iter()
        .zip(n.iter().zip(r))
        .map(|(f, (&ni, &ri))| f * f * (1.0 / ni as f64 + 1.0 / ri as f64) * t)
        .sum()
}

/// Max absolute difference of two equally sampled series.
pub fn sup_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSettings {
    pub n0: RegularizationIndex,
    /// Target velocity accuracy: stop once the adjacent-pair bound is `≤ ε²`.
    pub epsilon: f64,
    /// Maximum number of doublings of the index.
    pub k_max: u32,
}

/// Comparison of two adjacent runs of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub coarse: Vec<u64>,
    pub fine: Vec<u64>,
    /// Theoretical bound on the squared sup difference.
    pub bound: f64,
    pub measured_sup: f64,
    /// Integration slack allowed on top of `sqrt(bound)`.
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub epsilon: f64,
    /// Bound on `sup |yⁿ - yʳ|²` for the last two runs (0 for a frictionless
    /// single run, infinite when only one frictional run exists).
    pub theoretical_bound: f64,
    /// Measured sup difference between the last two runs.
    pub measured_sup: f64,
    pub finest: Vec<u64>,
    pub converged: bool,
}

impl Certificate {
    /// `sqrt` of the theoretical bound, in velocity units.
    pub fn velocity_bound(&self) -> f64 {
        self.theoretical_bound.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub runs: Vec<PenalizedTrajectory>,
    pub pairs: Vec<PairCheck>,
    pub certificate: Certificate,
}

impl RefineOutcome {
    /// The finest run, taken as the limit candidate.
    pub fn limit(&self) -> &PenalizedTrajectory {
        self.runs.last().expect("refinement always produces a run")
    }
}

fn doubled(n0: &[u64], k: u32) -> Vec<u64> {
    n0.iter().map(|n| n << k).collect()
}

pub(crate) fn check_pair(
    frictions: &[f64],
    a: &PenalizedTrajectory,
    b: &PenalizedTrajectory,
    horizon: f64,
    cfg: &SolverConfig,
) -> PairCheck {
    let bound = cauchy_bound_multi(frictions, &a.indices, &b.indices, horizon);
    let measured_sup = sup_difference(&a.y, &b.y);
    let slack = 2.0 * cfg.linear_tolerance(a.max_abs_y().max(b.max_abs_y()));
    PairCheck {
        coarse: a.indices.clone(),
        fine: b.indices.clone(),
        bound,
        measured_sup,
        slack,
        pass: measured_sup <= bound.sqrt() + slack,
    }
}

pub(crate) fn run_stages<F>(n0: &[u64], stages: u32, run: &F) -> Result<Vec<PenalizedTrajectory>, RefineError>
where
    F: Fn(&[u64]) -> Result<PenalizedTrajectory, SolverError> + Sync,
{
    (0..=stages)
        .into_par_iter()
        .map(|k| {
            let idx = doubled(n0, k);
            run(&idx).map_err(|source| RefineError::Solver { index: idx, source })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

pub(crate) fn refine_with<F>(
    frictions: &[f64],
    n0: &[u64],
    horizon: f64,
    epsilon: f64,
    k_max: u32,
    cfg: &SolverConfig,
    run: F,
) -> Result<RefineOutcome, RefineError>
where
    F: Fn(&[u64]) -> Result<PenalizedTrajectory, SolverError> + Sync,
{
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(RefineError::InvalidSettings {
            field: "epsilon",
            reason: format!("must be finite and > 0, got {epsilon}"),
        });
    }
    if n0.iter().any(|&n| n == 0) {
        return Err(RefineError::InvalidSettings {
            field: "n0",
            reason: "indices must be >= 1".into(),
        });
    }
    if n0.iter().any(|&n| (n << k_max) >> k_max != n) {
        return Err(RefineError::InvalidSettings {
            field: "k_max",
            reason: format!("n0·2^{k_max} overflows"),
        });
    }
    let frictionless = frictions.iter().all(|&f| f == 0.0);
    let target = epsilon * epsilon;
    let stages = if frictionless {
        Some(0)
    } else {
        (1..=k_max).find(|&k| {
            cauchy_bound_multi(frictions, &doubled(n0, k - 1), &doubled(n0, k), horizon) <= target
        })
    };
    let (count, converged) = match stages {
        Some(k) => (k, true),
        None => (k_max, false),
    };

    let runs = run_stages(n0, count, &run)?;
    let pairs: Vec<PairCheck> = runs
        .windows(2)
        .map(|w| check_pair(frictions, &w[0], &w[1], horizon, cfg))
        .collect();
    if let Some(bad) = pairs.iter().find(|p| !p.pass) {
        return Err(RefineError::CauchyViolation(Box::new(bad.clone())));
    }
    let certificate = match pairs.last() {
        Some(p) => Certificate {
            epsilon,
            theoretical_bound: p.bound,
            measured_sup: p.measured_sup,
            finest: p.fine.clone(),
            converged,
        },
        None => Certificate {
            epsilon,
            theoretical_bound: if frictionless { 0.0 } else { f64::INFINITY },
            measured_sup: 0.0,
            finest: n0.to_vec(),
            converged,
        },
    };
    let outcome = RefineOutcome {
        runs,
        pairs,
        certificate,
    };
    if converged {
        Ok(outcome)
    } else {
        Err(RefineError::BudgetExhausted(Box::new(outcome)))
    }
}

/// Runs the penalized solver at `n0·2^k` until the Cauchy bound between the
/// last two indices is at most `ε²`, or `k_max` doublings are spent.
///
/// A budget overrun is reported as [`RefineError::BudgetExhausted`], which
/// carries the partial outcome.
pub fn refine(
    params: &PhysicalParams,
    gait: &GaitProgram,
    ic: &InitialConditions,
    horizon: f64,
    cfg: &SolverConfig,
    settings: &RefineSettings,
) -> Result<RefineOutcome, RefineError> {
    refine_with(
        &[params.f1(), params.f2()],
        &settings.n0.as_vec(),
        horizon,
        settings.epsilon,
        settings.k_max,
        cfg,
        |idx: &[u64]| {
            let n = RegularizationIndex::new(idx[0], idx[1]).expect("indices checked");
            integrate(params, gait, ic, n, horizon, cfg)
        },
    )
}

/// All runs `n0·2^k`, `k = 0..=doublings`, in schedule order.
pub fn run_schedule(
    params: &PhysicalParams,
    gait: &GaitProgram,
    ic: &InitialConditions,
    horizon: f64,
    cfg: &SolverConfig,
    n0: RegularizationIndex,
    doublings: u32,
) -> Result<Vec<PenalizedTrajectory>, RefineError> {
    run_stages(&n0.as_vec(), doublings, &|idx: &[u64]| {
        let n = RegularizationIndex::new(idx[0], idx[1]).expect("indices checked");
        integrate(params, gait, ic, n, horizon, cfg)
    })
}

/// Pair checks for consecutive runs of a schedule.
pub fn schedule_pairs(
    frictions: &[f64],
    runs: &[PenalizedTrajectory],
    horizon: f64,
    cfg: &SolverConfig,
) -> Vec<PairCheck> {
    runs.windows(2)
        .map(|w| check_pair(frictions, &w[0], &w[1], horizon, cfg))
        .collect()
}

//! Physical model of the two-body crawler.
//!
//! Two masses `m1`, `m2` slide along a line; a linkage prescribes their
//! separation `ℓ(t) = x2(t) - x1(t)`. Each body feels Coulomb dry friction
//! of magnitude `f_i`. The only degree of freedom left is the velocity
//! `y = ẋ1` of the first body.

mod gait;

pub use gait::{GaitError, GaitProgram, GaitSample, ParabolicSegment};

use thiserror::Error;

/// Default half-width of the velocity band treated as "at rest".
pub const DEFAULT_STICK_BAND: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("time grid is empty")]
    EmptyGrid,
    #[error("time grid is not strictly increasing at index {index}")]
    NonMonotoneGrid { index: usize },
    #[error("sample count mismatch: grid has {grid}, values have {values}")]
    LengthMismatch { grid: usize, values: usize },
}

/// Masses and friction magnitudes of the two bodies.
///
/// The total mass is always recomputed from `m1 + m2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    m1: f64,
    m2: f64,
    f1: f64,
    f2: f64,
}

impl PhysicalParams {
    pub fn new(m1: f64, m2: f64, f1: f64, f2: f64) -> Result<Self, ModelError> {
        check_positive("m1", m1)?;
        check_positive("m2", m2)?;
        check_non_negative("f1", f1)?;
        check_non_negative("f2", f2)?;
        Ok(Self { m1, m2, f1, f2 })
    }

    pub fn m1(&self) -> f64 {
        self.m1
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn f1(&self) -> f64 {
        self.f1
    }

    pub fn f2(&self) -> f64 {
        self.f2
    }

    /// Total mass `M = m1 + m2`.
    pub fn total_mass(&self) -> f64 {
        self.m1 + self.m2
    }
}

pub(crate) fn check_positive(field: &'static str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            field,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

pub(crate) fn check_non_negative(field: &'static str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            field,
            reason: format!("must be finite and >= 0, got {v}"),
        })
    }
}

/// Initial velocity of body 1 and its initial position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditions {
    pub y0: f64,
    pub x10: f64,
}

impl InitialConditions {
    pub fn new(y0: f64, x10: f64) -> Result<Self, ModelError> {
        if !y0.is_finite() {
            return Err(ModelError::InvalidParameter {
                field: "y0",
                reason: format!("must be finite, got {y0}"),
            });
        }
        if !x10.is_finite() {
            return Err(ModelError::InvalidParameter {
                field: "x10",
                reason: format!("must be finite, got {x10}"),
            });
        }
        Ok(Self { y0, x10 })
    }

    pub fn at_rest() -> Self {
        Self { y0: 0.0, x10: 0.0 }
    }
}

/// Contact state of a single body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContactState {
    Stick,
    SlipPlus,
    SlipMinus,
}

impl ContactState {
    pub fn from_sign(sigma: f64) -> Self {
        if sigma > 0.0 {
            ContactState::SlipPlus
        } else if sigma < 0.0 {
            ContactState::SlipMinus
        } else {
            ContactState::Stick
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ContactState::Stick => "stick",
            ContactState::SlipPlus => "slip+",
            ContactState::SlipMinus => "slip-",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stick" => Some(ContactState::Stick),
            "slip+" => Some(ContactState::SlipPlus),
            "slip-" => Some(ContactState::SlipMinus),
            _ => None,
        }
    }
}

impl std::fmt::Display for ContactState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Stick/slip classification of both bodies at one instant.
///
/// `sigma_i` is the sign of the friction force direction: the velocity sign
/// when slipping, the sign of the driving force on breakaway, 0 when stuck.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub body1: ContactState,
    pub body2: ContactState,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Regime {
    pub fn new(body1: ContactState, body2: ContactState, sigma1: f64, sigma2: f64) -> Self {
        Self {
            body1,
            body2,
            sigma1,
            sigma2,
        }
    }
}

/// Friction force and contact state of one body under Coulomb's law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoulombOutcome {
    pub force: f64,
    pub state: ContactState,
    /// Direction of the friction force, in {-1, 0, +1}.
    pub sigma: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Coulomb friction on one body given the contact force `g` it receives and
/// its velocity `v`. Velocities with `|v| <= v_stick` count as zero.
///
/// On breakaway (at rest with `|g| > f`) the state reports the slip direction
/// the body is about to take.
pub fn coulomb_force(g: f64, v: f64, f: f64, v_stick: f64) -> CoulombOutcome {
    if v.abs() <= v_stick {
        if g.abs() <= f {
            CoulombOutcome {
                force: g,
                state: ContactState::Stick,
                sigma: 0.0,
            }
        } else {
            let s = sign(g);
            CoulombOutcome {
                force: f * s,
                state: ContactState::from_sign(s),
                sigma: s,
            }
        }
    } else {
        let s = sign(v);
        CoulombOutcome {
            force: f * s,
            state: ContactState::from_sign(s),
            sigma: s,
        }
    }
}

/// Contact force on body 2, `G2 = (m1 m2 / M)(ℓ̈ + F2/m2 - F1/m1)`.
/// Body 1 receives `G1 = -G2`.
pub fn contact_force(params: &PhysicalParams, l_ddot: f64, f1_force: f64, f2_force: f64) -> f64 {
    let (m1, m2) = (params.m1(), params.m2());
    m1 * m2 / params.total_mass() * (l_ddot + f2_force / m2 - f1_force / m1)
}

/// Positions `x1`, `x2` on a grid, reconstructed from the velocity of body 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

/// Recovers `x1(t) = x10 + ∫ y` by the composite trapezoid rule and sets
/// `x2 = x1 + ℓ` at every sample.
pub fn reconstruct_positions(
    grid: &[f64],
    y: &[f64],
    x10: f64,
    gait: &GaitProgram,
) -> Result<Positions, ModelError> {
    check_grid(grid)?;
    if y.len() != grid.len() {
        return Err(ModelError::LengthMismatch {
            grid: grid.len(),
            values: y.len(),
        });
    }
    let mut x1 = Vec::with_capacity(grid.len());
    let mut acc = x10;
    x1.push(acc);
    for j in 1..grid.len() {
        acc += 0.5 * (grid[j] - grid[j - 1]) * (y[j] + y[j - 1]);
        x1.push(acc);
    }
    let x2 = grid
        .iter()
        .zip(&x1)
        .map(|(&t, &x)| x + gait.eval(t).l)
        .collect();
    Ok(Positions { x1, x2 })
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<(), ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    for (j, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(ModelError::NonMonotoneGrid { index: j + 1 });
        }
    }
    Ok(())
}

//! Dry-friction crawler dynamics.
//!
//! Two bodies on a line, joined by a linkage that prescribes their distance,
//! move under Coulomb friction. The crate computes the motion three ways:
//!
//! * [`penalized`]: Moreau-Yosida regularized ODE, refined in the index
//!   until a Cauchy bound certifies the limit;
//! * [`oracle`]: an event-driven stick-slip solver built directly on the
//!   Coulomb law;
//! * [`vi`]: a checker that the limit satisfies the linear impulse relation
//!   and the two variational inequalities.
//!
//! [`chain`] extends the penalized solver to `p ≥ 2` aligned masses.

pub mod chain;
pub mod model;
pub mod moreau_yosida;
pub mod oracle;
pub mod penalized;
pub mod vi;

pub use model::{GaitProgram, InitialConditions, PhysicalParams};
pub use moreau_yosida::{FrictionPotential, RegularizationIndex};

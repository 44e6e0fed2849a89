//! `p ≥ 2` masses on a line joined by `p - 1` prescribed links.
//!
//! With `ℓ_j = x_{j+1} - x_j` prescribed, body `i` sits at `x_1 + L_i` where
//! `L_i = ℓ_1 + .. + ℓ_{i-1}` and `L_1 = 0`. The velocity `y = ẋ_1` is the only
//! unknown and the penalized equation reads
//!
//! ```text
//! M ẏ + Σ_i φ'_{i,n_i}(y + L̇_i) = -Σ_{i≥2} m_i L̈_i,   M = Σ_i m_i
//! ```
//!
//! with one impulse channel `k_i` per body. For `p = 2` this is the two-body
//! system, evaluated with the same floating-point operations.

use crate::model::{check_non_negative, check_positive, GaitProgram, InitialConditions, ModelError};
use crate::moreau_yosida::FrictionPotential;
use crate::penalized::{
    integrate_system, refine_with, run_stages, FrictionSystem, PenalizedTrajectory, RefineError,
    RefineOutcome, SolverConfig, SolverError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("a chain needs at least 2 bodies, got {0}")]
    TooShort(usize),
    #[error("{what}: expected {expected} entries, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index of body {0} must be >= 1")]
    ZeroIndex(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

/// Masses, friction magnitudes and links of an aligned chain.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    masses: Vec<f64>,
    frictions: Vec<f64>,
    links: Vec<GaitProgram>,
}

/// Offsets of every body relative to body 1 and their derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Offsets {
    pub l: Vec<f64>,
    pub l_dot: Vec<f64>,
    pub l_ddot: Vec<f64>,
}

impl ChainSpec {
    pub fn new(
        masses: Vec<f64>,
        frictions: Vec<f64>,
        links: Vec<GaitProgram>,
    ) -> Result<Self, ChainError> {
        let p = masses.len();
        if p < 2 {
            return Err(ChainError::TooShort(p));
        }
        if frictions.len() != p {
            return Err(ChainError::Length {
                what: "frictions",
                expected: p,
                got: frictions.len(),
            });
        }
        if links.len() != p - 1 {
            return Err(ChainError::Length {
                what: "links",
                expected: p - 1,
                got: links.len(),
            });
        }
        for &m in &masses {
            check_positive("masses", m)?;
        }
        for &f in &frictions {
            check_non_negative("frictions", f)?;
        }
        Ok(Self {
            masses,
            frictions,
            links,
        })
    }

    pub fn bodies(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn frictions(&self) -> &[f64] {
        &self.frictions
    }

    pub fn links(&self) -> &[GaitProgram] {
        &self.links
    }

    pub fn total_mass(&self) -> f64 {
        let mut m = self.masses[0];
        for &mi in &self.masses[1..] {
            m += mi;
        }
        m
    }

    pub fn offsets(&self, t: f64) -> Offsets {
        let p = self.bodies();
        let mut out = Offsets {
            l: vec![0.0; p],
            l_dot: vec![0.0; p],
            l_ddot: vec![0.0; p],
        };
        for (j, link) in self.links.iter().enumerate() {
            let g = link.eval(t);
            if j == 0 {
                out.l[1] = g.l;
                out.l_dot[1] = g.l_dot;
                out.l_ddot[1] = g.l_ddot;
            } else {
                out.l[j + 1] = out.l[j] + g.l;
                out.l_dot[j + 1] = out.l_dot[j] + g.l_dot;
                out.l_ddot[j + 1] = out.l_ddot[j] + g.l_ddot;
            }
        }
        out
    }

    /// `Σ_{i≥2} m_i v_i`, summed from body 2 up.
    fn weighted(&self, v: &[f64]) -> f64 {
        let mut acc = self.masses[1] * v[1];
        for i in 2..self.bodies() {
            acc += self.masses[i] * v[i];
        }
        acc
    }

    fn check_indices(&self, n: &[u64]) -> Result<(), ChainError> {
        if n.len() != self.bodies() {
            return Err(ChainError::Length {
                what: "indices",
                expected: self.bodies(),
                got: n.len(),
            });
        }
        if let Some(i) = n.iter().position(|&v| v == 0) {
            return Err(ChainError::ZeroIndex(i + 1));
        }
        Ok(())
    }
}

/// The penalized chain system for fixed indices.
#[derive(Debug, Clone, Copy)]
pub struct ChainSystem<'a> {
    pub spec: &'a ChainSpec,
    pub n: &'a [u64],
}

impl FrictionSystem for ChainSystem<'_> {
    fn channels(&self) -> usize {
        self.spec.bodies()
    }

    fn total_mass(&self) -> f64 {
        self.spec.total_mass()
    }

    fn max_index(&self) -> u64 {
        self.n.iter().copied().max().unwrap_or(1)
    }

    fn evaluate(&self, t: f64, y: f64, forces: &mut [f64]) -> f64 {
        let off = self.spec.offsets(t);
        let mut acc = -self.spec.weighted(&off.l_ddot);
        for i in 0..self.spec.bodies() {
            let phi = FrictionPotential::new(self.spec.frictions[i]);
            // body 1 takes y itself: y + 0.0 would turn -0.0 into +0.0
            let v = if i == 0 { y } else { y + off.l_dot[i] };
            forces[i] = phi.gradient(self.n[i], v);
            acc -= forces[i];
        }
        acc / self.spec.total_mass()
    }

    fn initial_impulses(&self, y0: f64) -> Vec<f64> {
        let off = self.spec.offsets(0.0);
        let mut k = vec![0.0; self.spec.bodies()];
        *k.last_mut().expect("p >= 2") = -self.spec.total_mass() * y0 - self.spec.weighted(&off.l_dot);
        k
    }

    fn linear_residual(&self, t: f64, y: f64, k: &[f64]) -> f64 {
        let off = self.spec.offsets(t);
        let mut r = self.spec.total_mass() * y;
        for &ki in k {
            r += ki;
        }
        r + self.spec.weighted(&off.l_dot)
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .spec
            .links
            .iter()
            .flat_map(|l| l.breakpoints(t0, t1))
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// Right-hand side `ẏ` of the penalized chain equation.
pub fn chain_rhs(spec: &ChainSpec, n: &[u64], t: f64, y: f64) -> Result<f64, ChainError> {
    spec.check_indices(n)?;
    let mut forces = vec![0.0; spec.bodies()];
    Ok(ChainSystem { spec, n }.evaluate(t, y, &mut forces))
}

/// Integrates the penalized chain; the trajectory carries one impulse
/// channel per body and the constant on the last channel.
pub fn chain_integrate(
    spec: &ChainSpec,
    ic: &InitialConditions,
    n: &[u64],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<PenalizedTrajectory, ChainError> {
    spec.check_indices(n)?;
    let sys = ChainSystem { spec, n };
    Ok(integrate_system(&sys, n.to_vec(), ic.y0, horizon, cfg)?)
}

/// Refinement of a chain with all indices equal to `n0` at the first stage.
pub fn chain_refine(
    spec: &ChainSpec,
    ic: &InitialConditions,
    horizon: f64,
    cfg: &SolverConfig,
    n0: u64,
    epsilon: f64,
    k_max: u32,
) -> Result<RefineOutcome, ChainError> {
    let start = vec![n0; spec.bodies()];
    spec.check_indices(&start)?;
    Ok(refine_with(
        &spec.frictions,
        &start,
        horizon,
        epsilon,
        k_max,
        cfg,
        |idx: &[u64]| integrate_system(&ChainSystem { spec, n: idx }, idx.to_vec(), ic.y0, horizon, cfg),
    )?)
}

/// Chain runs at `n0·2^k` for `k = 0..=doublings`, in schedule order.
pub fn chain_schedule(
    spec: &ChainSpec,
    ic: &InitialConditions,
    horizon: f64,
    cfg: &SolverConfig,
    n0: u64,
    doublings: u32,
) -> Result<Vec<PenalizedTrajectory>, ChainError> {
    let start = vec![n0; spec.bodies()];
    spec.check_indices(&start)?;
    Ok(run_stages(&start, doublings, &|idx: &[u64]| {
        integrate_system(&ChainSystem { spec, n: idx }, idx.to_vec(), ic.y0, horizon, cfg)
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PhysicalParams;
    use crate::moreau_yosida::RegularizationIndex;
    use crate::penalized::{cauchy_bound_multi, integrate, rhs, sup_difference};
    use std::f64::consts::PI;

    fn sine(a: f64, phase: f64) -> GaitProgram {
        GaitProgram::sinusoid(1.0, a, 2.0 * PI, phase).unwrap()
    }

    #[test]
    fn rejects_malformed_chains() {
        assert!(matches!(
            ChainSpec::new(vec![1.0], vec![0.1], vec![]),
            Err(ChainError::TooShort(1))
        ));
        assert!(matches!(
            ChainSpec::new(vec![1.0, 1.0], vec![0.1], vec![sine(0.1, 0.0)]),
            Err(ChainError::Length { what: "frictions", .. })
        ));
        assert!(matches!(
            ChainSpec::new(vec![1.0, 1.0, 1.0], vec![0.1; 3], vec![sine(0.1, 0.0)]),
            Err(ChainError::Length { what: "links", .. })
        ));
        assert!(ChainSpec::new(vec![1.0, -1.0], vec![0.1; 2], vec![sine(0.1, 0.0)]).is_err());
        assert!(ChainSpec::new(vec![1.0, 1.0], vec![0.1, -0.1], vec![sine(0.1, 0.0)]).is_err());
        let spec = ChainSpec::new(vec![1.0, 1.0], vec![0.1; 2], vec![sine(0.1, 0.0)]).unwrap();
        assert!(chain_rhs(&spec, &[10], 0.0, 0.0).is_err());
        assert!(matches!(chain_rhs(&spec, &[10, 0], 0.0, 0.0), Err(ChainError::ZeroIndex(2))));
    }

    #[test]
    fn two_body_rhs_is_reproduced_bit_for_bit() {
        let (m1, m2, f1, f2) = (1.3, 0.7, 0.15, 0.4);
        let gait = GaitProgram::sinusoid(0.8, 0.3, 5.0, 0.2).unwrap();
        let params = PhysicalParams::new(m1, m2, f1, f2).unwrap();
        let spec = ChainSpec::new(vec![m1, m2], vec![f1, f2], vec![gait.clone()]).unwrap();
        for &(n1, n2) in &[(1u64, 1u64), (100, 300), (10_000, 10)] {
            let n = RegularizationIndex::new(n1, n2).unwrap();
            for i in 0..200 {
                let t = i as f64 * 0.0137;
                for y in [-2.0, -0.3, -1e-4, -0.0, 0.0, 2e-5, 0.5, 3.0] {
                    let a = rhs(&params, &gait, n, t, y);
                    let b = chain_rhs(&spec, &[n1, n2], t, y).unwrap();
                    assert_eq!(a.to_bits(), b.to_bits(), "t={t} y={y}");
                }
            }
        }
    }

    #[test]
    fn equilibrium_and_frictionless_rhs() {
        let c = GaitProgram::constant(1.0).unwrap();
        let spec = ChainSpec::new(vec![1.0, 2.0, 3.0], vec![0.2, 0.3, 0.4], vec![c.clone(), c]).unwrap();
        assert_eq!(chain_rhs(&spec, &[50, 50, 50], 1.7, 0.0).unwrap(), 0.0);

        let (l1, l2) = (sine(0.2, 0.0), sine(0.1, 1.0));
        let spec = ChainSpec::new(vec![1.0, 2.0, 3.0], vec![0.0; 3], vec![l1.clone(), l2.clone()]).unwrap();
        for i in 0..50 {
            let t = i as f64 * 0.031;
            let (a1, a2) = (l1.eval(t).l_ddot, l2.eval(t).l_ddot);
            // L̈2 = ℓ̈1, L̈3 = ℓ̈1 + ℓ̈2
            let expected = -(2.0 * a1 + 3.0 * (a1 + a2)) / 6.0;
            let got = chain_rhs(&spec, &[7, 7, 7], t, 0.4).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn two_body_integration_is_identical() {
        let params = PhysicalParams::new(1.0, 1.0, 0.1, 0.3).unwrap();
        let gait = sine(0.25, 0.0);
        let spec = ChainSpec::new(vec![1.0, 1.0], vec![0.1, 0.3], vec![gait.clone()]).unwrap();
        let ic = InitialConditions::new(0.05, 0.0).unwrap();
        let cfg = SolverConfig::default();
        let n = RegularizationIndex::new(400, 800).unwrap();
        let a = integrate(&params, &gait, &ic, n, 2.0, &cfg).unwrap();
        let b = chain_integrate(&spec, &ic, &[400, 800], 2.0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn three_body_invariants() {
        let spec = ChainSpec::new(
            vec![1.0, 1.5, 0.5],
            vec![0.1, 0.3, 0.2],
            vec![sine(0.2, 0.0), sine(0.15, 1.2)],
        )
        .unwrap();
        let ic = InitialConditions::at_rest();
        let cfg = SolverConfig::default();
        let run = chain_integrate(&spec, &ic, &[500, 500, 500], 3.0, &cfg).unwrap();
        assert_eq!(run.impulses.len(), 3);
        assert_eq!(run.impulses[0][0], 0.0);
        assert_eq!(run.impulses[1][0], 0.0);
        let off = spec.offsets(0.0);
        assert_eq!(run.impulses[2][0], -(1.5 * off.l_dot[1] + 0.5 * off.l_dot[2]));
        assert!(run.linear_residual <= cfg.linear_tolerance(run.max_abs_y()));
        for (i, f) in spec.frictions().iter().enumerate() {
            let k = &run.impulses[i];
            for j in 1..k.len() {
                let dt = run.grid[j] - run.grid[j - 1];
                assert!((k[j] - k[j - 1]).abs() <= f * dt + 1e-12);
            }
        }
    }

    #[test]
    fn generalized_cauchy_bound_on_three_bodies() {
        let spec = ChainSpec::new(
            vec![1.0, 1.0, 1.0],
            vec![0.1, 0.3, 0.2],
            vec![sine(0.25, 0.0), sine(0.25, 0.7)],
        )
        .unwrap();
        let ic = InitialConditions::at_rest();
        let cfg = SolverConfig::default();
        let runs = chain_schedule(&spec, &ic, 2.0, &cfg, 100, 3).unwrap();
        for w in runs.windows(2) {
            let bound = cauchy_bound_multi(spec.frictions(), &w[0].indices, &w[1].indices, 2.0);
            let sup = sup_difference(&w[0].y, &w[1].y);
            assert!(sup * sup <= bound + 1e-6, "{sup} vs {bound}");
        }
    }

    #[test]
    fn refine_stops_on_the_bound() {
        let spec = ChainSpec::new(
            vec![1.0, 1.0, 1.0],
            vec![0.1, 0.1, 0.1],
            vec![sine(0.25, 0.0), sine(0.25, 0.0)],
        )
        .unwrap();
        let out = chain_refine(&spec, &InitialConditions::at_rest(), 1.0, &SolverConfig::default(), 100, 0.01, 8)
            .unwrap();
        // bound(n, 2n) = 3 · 0.01 · (1/n + 1/(2n)) = 0.045/n drops below 1e-4
        // first for n = 800
        assert_eq!(out.certificate.finest, vec![1600, 1600, 1600]);
        assert_eq!(out.runs.len(), 5);
        assert!(out.certificate.theoretical_bound <= 1e-4);
    }
}

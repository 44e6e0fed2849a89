//! Checks that a trajectory solves the limit system: the linear impulse
//! relation `M y + k1 + k2 = -m2 ℓ̇` and the two variational inequalities
//!
//! ```text
//! ∫ₛᵗ (z - y) dk1       + ∫ₛᵗ φ1(y) dr       <= ∫ₛᵗ φ1(z) dr
//! ∫ₛᵗ (z - y - ℓ̇) dk2   + ∫ₛᵗ φ2(y + ℓ̇) dr   <= ∫ₛᵗ φ2(z) dr
//! ```
//!
//! for continuous test functions `z`. Integrals against `dk` are midpoint
//! Stieltjes sums over the sample grid, integrals in time are trapezoidal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{check_grid, GaitProgram, ModelError, PhysicalParams};
use crate::moreau_yosida::FrictionPotential;
use crate::oracle::EventTrajectory;
use crate::penalized::PenalizedTrajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ViError {
    #[error(transparent)]
    Grid(#[from] ModelError),
    #[error("sample counts differ: {left} vs {right}")]
    GridMismatch { left: usize, right: usize },
    #[error("window [{s}, {t}] is not inside the trajectory grid")]
    Window { s: f64, t: f64 },
    #[error("trajectories do not overlap in time")]
    Disjoint,
    #[error("expected two impulse channels, found {0}")]
    Channels(usize),
}

/// Which solver produced a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Penalized { indices: Vec<u64> },
    Oracle,
    External(String),
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Penalized { indices } => {
                let n: Vec<String> = indices.iter().map(u64::to_string).collect();
                write!(f, "penalized n=({})", n.join(","))
            }
            Provenance::Oracle => f.write_str("event-driven"),
            Provenance::External(s) => f.write_str(s),
        }
    }
}

/// Sampled `(y, k1, k2)` on a common monotone grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub y: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub provenance: Provenance,
}

impl Trajectory {
    pub fn new(
        grid: Vec<f64>,
        y: Vec<f64>,
        k1: Vec<f64>,
        k2: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, ViError> {
        check_grid(&grid)?;
        for len in [y.len(), k1.len(), k2.len()] {
            if len != grid.len() {
                return Err(ViError::GridMismatch {
                    left: grid.len(),
                    right: len,
                });
            }
        }
        Ok(Self {
            grid,
            y,
            k1,
            k2,
            provenance,
        })
    }

    pub fn from_penalized(run: &PenalizedTrajectory) -> Result<Self, ViError> {
        if run.impulses.len() != 2 {
            return Err(ViError::Channels(run.impulses.len()));
        }
        Self::new(
            run.grid.clone(),
            run.y.clone(),
            run.k1().to_vec(),
            run.k2().to_vec(),
            Provenance::Penalized {
                indices: run.indices.clone(),
            },
        )
    }

    pub fn from_events(run: &EventTrajectory) -> Self {
        Self {
            grid: run.grid.clone(),
            y: run.y.clone(),
            k1: run.k1.clone(),
            k2: run.k2.clone(),
            provenance: Provenance::Oracle,
        }
    }

    /// Velocity of body 2, `y + ℓ̇`, at every sample.
    pub fn body2_velocity(&self, gait: &GaitProgram) -> Vec<f64> {
        self.grid
            .iter()
            .zip(&self.y)
            .map(|(&t, &y)| y + gait.eval(t).l_dot)
            .collect()
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// Index of the grid point at time `t`, if `t` is one up to rounding.
    fn index_of(&self, t: f64) -> Option<usize> {
        let j = self.grid.partition_point(|&g| g < t);
        let scale = 1e-9 * (self.grid[self.grid.len() - 1] - self.grid[0]).max(1.0);
        [j.checked_sub(1), Some(j)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.grid.len())
            .find(|&i| (self.grid[i] - t).abs() <= scale)
    }

    fn window(&self, s: f64, t: f64) -> Result<(usize, usize), ViError> {
        match (self.index_of(s), self.index_of(t)) {
            (Some(a), Some(b)) if a <= b => Ok((a, b)),
            _ => Err(ViError::Window { s, t }),
        }
    }
}

/// Max over the grid of `|M y + k1 + k2 + m2 ℓ̇|`.
pub fn check_linear_relation(traj: &Trajectory, params: &PhysicalParams, gait: &GaitProgram) -> f64 {
    let m = params.total_mass();
    (0..traj.grid.len())
        .map(|j| {
            let l_dot = gait.eval(traj.grid[j]).l_dot;
            (m * traj.y[j] + traj.k1[j] + traj.k2[j] + params.m2() * l_dot).abs()
        })
        .fold(0.0, f64::max)
}

/// Midpoint Stieltjes sum `Σ ½(v_j + v_{j+1})(k_{j+1} - k_j)`.
pub fn stieltjes(values: &[f64], k: &[f64]) -> Result<f64, ViError> {
    if values.len() != k.len() {
        return Err(ViError::GridMismatch {
            left: values.len(),
            right: k.len(),
        });
    }
    Ok(stieltjes_range(values, k, 0, values.len().saturating_sub(1)))
}

fn stieltjes_range(values: &[f64], k: &[f64], a: usize, b: usize) -> f64 {
    (a..b)
        .map(|j| 0.5 * (values[j] + values[j + 1]) * (k[j + 1] - k[j]))
        .sum()
}

/// The discretized inequality residual on samples `a..=b`:
/// `∫(z - v) dk + ∫φ(v) - ∫φ(z)`, non-positive for a solution.
fn residual_on(
    grid: &[f64],
    v: &[f64],
    k: &[f64],
    z: &[f64],
    phi: FrictionPotential,
    a: usize,
    b: usize,
) -> f64 {
    let mut pairing = 0.0;
    let mut energy = 0.0;
    for j in a..b {
        let d0 = z[j] - v[j];
        let d1 = z[j + 1] - v[j + 1];
        pairing += 0.5 * (d0 + d1) * (k[j + 1] - k[j]);
        let dt = 0.5 * (grid[j + 1] - grid[j]);
        energy += dt * (phi.value(v[j]) + phi.value(v[j + 1]));
        energy -= dt * (phi.value(z[j]) + phi.value(z[j + 1]));
    }
    pairing + energy
}

fn check_samples(traj: &Trajectory, z: &[f64]) -> Result<(), ViError> {
    if z.len() != traj.grid.len() {
        return Err(ViError::GridMismatch {
            left: traj.grid.len(),
            right: z.len(),
        });
    }
    Ok(())
}

/// Residual of the first inequality for the test function `z` sampled on
/// the trajectory grid, over the window `[s, t]` (grid times).
pub fn vi_residual_1(
    traj: &Trajectory,
    params: &PhysicalParams,
    z: &[f64],
    s: f64,
    t: f64,
) -> Result<f64, ViError> {
    check_samples(traj, z)?;
    let (a, b) = traj.window(s, t)?;
    let phi = FrictionPotential::new(params.f1());
    Ok(residual_on(&traj.grid, &traj.y, &traj.k1, z, phi, a, b))
}

/// Residual of the second inequality; the body-2 velocity `y + ℓ̇` takes the
/// place of `y`.
pub fn vi_residual_2(
    traj: &Trajectory,
    params: &PhysicalParams,
    gait: &GaitProgram,
    z: &[f64],
    s: f64,
    t: f64,
) -> Result<f64, ViError> {
    check_samples(traj, z)?;
    let (a, b) = traj.window(s, t)?;
    let w = traj.body2_velocity(gait);
    let phi = FrictionPotential::new(params.f2());
    Ok(residual_on(&traj.grid, &w, &traj.k2, z, phi, a, b))
}

/// A named test function sampled on a trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: String,
    pub values: Vec<f64>,
    /// Whether this is the equality case `z = velocity`.
    pub equality: bool,
}

/// A finite family of test functions for one inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionFamily {
    pub members: Vec<TestFunction>,
    /// All members satisfy `|z| <= bound`.
    pub bound: f64,
}

impl TestFunctionFamily {
    /// Constants on a value grid, the velocity itself, zero, the velocity
    /// plus smooth bumps, and random piecewise-linear functions.
    ///
    /// `velocity` is `y` for the first inequality and `y + ℓ̇` for the second;
    /// `bound` is `2 (max|y| + max|ℓ̇| + 1)`.
    pub fn standard(grid: &[f64], velocity: &[f64], bound: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut members = Vec::new();
        let levels = 10;
        for i in 0..=levels {
            let c = -bound + 2.0 * bound * i as f64 / levels as f64;
            members.push(TestFunction {
                name: format!("const({c:.3})"),
                values: vec![c; grid.len()],
                equality: false,
            });
        }
        members.push(TestFunction {
            name: "velocity".into(),
            values: velocity.to_vec(),
            equality: true,
        });
        members.push(TestFunction {
            name: "zero".into(),
            values: vec![0.0; grid.len()],
            equality: false,
        });

        let (t0, t1) = (grid[0], grid[grid.len() - 1]);
        let span = (t1 - t0).max(f64::MIN_POSITIVE);
        for i in 0..8 {
            let center = rng.gen_range(t0..=t1);
            let width = span * rng.gen_range(0.01..0.2);
            let height = bound * rng.gen_range(-0.5..0.5);
            let values = grid
                .iter()
                .zip(velocity)
                .map(|(&t, &v)| {
                    let u = (t - center) / width;
                    let bump = if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
                    (v + height * bump).clamp(-bound, bound)
                })
                .collect();
            members.push(TestFunction {
                name: format!("bump{i}"),
                values,
                equality: false,
            });
        }

        for i in 0..8 {
            let knots = rng.gen_range(3..40usize);
            let heights: Vec<f64> = (0..=knots).map(|_| rng.gen_range(-bound..=bound)).collect();
            let values = grid
                .iter()
                .map(|&t| {
                    let u = (t - t0) / span * knots as f64;
                    let j = (u.floor() as usize).min(knots - 1);
                    let r = u - j as f64;
                    heights[j] + r * (heights[j + 1] - heights[j])
                })
                .collect();
            members.push(TestFunction {
                name: format!("pl{i}"),
                values,
                equality: false,
            });
        }
        Self { members, bound }
    }
}

/// The windows `(0,T)`, `(0,T/2)`, `(T/2,T)` followed by `count` seeded
/// random windows, as pairs of grid indices.
pub fn sample_windows(grid: &[f64], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let last = grid.len() - 1;
    let mid = grid.partition_point(|&t| t < 0.5 * (grid[0] + grid[last])).min(last);
    let mut out = vec![(0, last), (0, mid), (mid, last)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for _ in 0..count {
        let a = rng.gen_range(0..=last);
        let b = rng.gen_range(0..=last);
        out.push((a.min(b), a.max(b)));
    }
    out
}

/// Sup-norm differences `(y, k1 + k2, k1)` between two trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniquenessGap {
    pub y: f64,
    pub k_sum: f64,
    pub k1: f64,
}

/// Compares two trajectories on the grid of `a` where it overlaps `b`,
/// interpolating `b` linearly when the grids differ.
pub fn uniqueness_compare(a: &Trajectory, b: &Trajectory) -> Result<UniquenessGap, ViError> {
    let (b0, b1) = (b.grid[0], b.grid[b.grid.len() - 1]);
    let mut gap = UniquenessGap {
        y: 0.0,
        k_sum: 0.0,
        k1: 0.0,
    };
    let same_grid = a.grid == b.grid;
    let mut any = false;
    for (j, &t) in a.grid.iter().enumerate() {
        if t < b0 || t > b1 {
            continue;
        }
        any = true;
        let (y, k1, k2) = if same_grid {
            (b.y[j], b.k1[j], b.k2[j])
        } else {
            let i = b.grid.partition_point(|&g| g < t);
            if i < b.grid.len() && b.grid[i] == t {
                (b.y[i], b.k1[i], b.k2[i])
            } else {
                let r = (t - b.grid[i - 1]) / (b.grid[i] - b.grid[i - 1]);
                let lerp = |v: &[f64]| v[i - 1] + r * (v[i] - v[i - 1]);
                (lerp(&b.y), lerp(&b.k1), lerp(&b.k2))
            }
        };
        gap.y = gap.y.max((a.y[j] - y).abs());
        gap.k_sum = gap.k_sum.max((a.k1[j] + a.k2[j] - k1 - k2).abs());
        gap.k1 = gap.k1.max((a.k1[j] - k1).abs());
    }
    if !any {
        return Err(ViError::Disjoint);
    }
    Ok(gap)
}

/// Tolerances and sampling of a verification sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random windows in addition to the three canonical ones.
    pub windows: usize,
    /// Velocity accuracy of the trajectory (Cauchy certificate).
    pub epsilon: f64,
    /// `C` in the inequality tolerance `C f (t - s)(ε + h max|v̇|)`, where `v`
    /// is the velocity the inequality is written for.
    pub vi_factor: f64,
    /// Linear relation tolerance relative to `max(1, max|y|)`.
    pub linear_rel: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            windows: 100,
            epsilon: 0.0,
            vi_factor: 2.0,
            linear_rel: 1e-6,
        }
    }
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub window: (f64, f64),
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Test function attaining the residual, for inequality checks.
    pub witness: Option<String>,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<16} [{:>10.6}, {:>10.6}]  residual {:>12.5e}  tol {:>11.4e}  {}",
            self.name,
            self.window.0,
            self.window.1,
            self.residual,
            self.tolerance,
            if self.pass { "pass" } else { "FAIL" }
        )?;
        if let Some(w) = &self.witness {
            write!(f, "  ({w})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub lines: Vec<CheckLine>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckLine> {
        self.lines.iter().filter(|l| !l.pass)
    }

    /// The failing line with the largest excess over its tolerance, or,
    /// when everything passed, the line closest to its tolerance.
    pub fn worst(&self) -> Option<&CheckLine> {
        let excess = |l: &&CheckLine| l.residual - l.tolerance;
        if let Some(l) = self.failures().max_by(|a, b| excess(a).total_cmp(&excess(b))) {
            return Some(l);
        }
        let ratio = |l: &&CheckLine| {
            if l.tolerance > 0.0 {
                l.residual / l.tolerance
            } else {
                f64::NEG_INFINITY
            }
        };
        self.lines
            .iter()
            .max_by(|a, b| ratio(a).total_cmp(&ratio(b)))
    }

    /// `name,s,t,residual,tolerance,pass,witness` rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("name,s,t,residual,tolerance,pass,witness\n");
        for l in &self.lines {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}\n",
                l.name,
                l.window.0,
                l.window.1,
                l.residual,
                l.tolerance,
                l.pass,
                l.witness.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

impl std::fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "{} checks, {} failed: {}",
            self.lines.len(),
            failed,
            if failed == 0 { "PASS" } else { "FAIL" }
        )
    }
}

/// Largest `|ẏ|` estimated by finite differences on the grid.
fn max_rate(grid: &[f64], v: &[f64]) -> f64 {
    (1..grid.len())
        .map(|j| ((v[j] - v[j - 1]) / (grid[j] - grid[j - 1])).abs())
        .fold(0.0, f64::max)
}

fn max_step(grid: &[f64]) -> f64 {
    grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Runs every check on `traj`: linear relation, `k1(0) = 0`, Lipschitz
/// bounds of the impulses, exactness of the equality test functions, and the
/// two inequalities over the full family and all windows.
pub fn verify(
    traj: &Trajectory,
    params: &PhysicalParams,
    gait: &GaitProgram,
    opts: &VerifyOptions,
) -> VerificationReport {
    let grid = &traj.grid;
    let (t0, t1) = (grid[0], grid[grid.len() - 1]);
    let mut lines = Vec::new();

    let lin_tol = opts.linear_rel * traj.max_abs_y().max(1.0);
    let lin = check_linear_relation(traj, params, gait);
    lines.push(CheckLine {
        name: "linear_relation".into(),
        window: (t0, t1),
        residual: lin,
        tolerance: lin_tol,
        pass: lin <= lin_tol,
        witness: None,
    });
    let k10 = traj.k1[0].abs();
    lines.push(CheckLine {
        name: "k1_initial".into(),
        window: (t0, t0),
        residual: k10,
        tolerance: 0.0,
        pass: k10 == 0.0,
        witness: None,
    });
    for (name, k, f) in [("lipschitz_k1", &traj.k1, params.f1()), ("lipschitz_k2", &traj.k2, params.f2())] {
        let excess = (1..grid.len())
            .map(|j| (k[j] - k[j - 1]).abs() - f * (grid[j] - grid[j - 1]))
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = lin_tol;
        lines.push(CheckLine {
            name: name.into(),
            window: (t0, t1),
            residual: excess,
            tolerance: tol,
            pass: excess <= tol,
            witness: None,
        });
    }

    let w = traj.body2_velocity(gait);
    let l_dot_max = grid.iter().map(|&t| gait.eval(t).l_dot.abs()).fold(0.0, f64::max);
    let bound = 2.0 * (traj.max_abs_y() + l_dot_max + 1.0);
    let h = max_step(grid);
    let windows = sample_windows(grid, opts.windows, opts.seed);
    let channels = [
        ("vi1", &traj.y, &traj.k1, FrictionPotential::new(params.f1()), opts.seed),
        ("vi2", &w, &traj.k2, FrictionPotential::new(params.f2()), opts.seed.wrapping_add(1)),
    ];
    for (name, v, k, phi, seed) in channels {
        let family = TestFunctionFamily::standard(grid, v, bound, seed);
        let rate = max_rate(grid, v);
        let per_window: Vec<(f64, f64, String, f64)> = windows
            .par_iter()
            .map(|&(a, b)| {
                let mut worst = (f64::NEG_INFINITY, String::new());
                let mut equality: f64 = 0.0;
                for m in &family.members {
                    let r = residual_on(grid, v, k, &m.values, phi, a, b);
                    if m.equality {
                        equality = equality.max(r.abs());
                    }
                    if r > worst.0 {
                        worst = (r, m.name.clone());
                    }
                }
                // the last term absorbs rounding in sums of size f (t - s) bound
                let tol = phi.magnitude()
                    * (grid[b] - grid[a])
                    * (opts.vi_factor * (opts.epsilon + h * rate) + 1e-12 * bound);
                (worst.0, tol, worst.1, equality)
            })
            .collect();
        let mut eq_worst: f64 = 0.0;
        for (&(a, b), (r, tol, witness, eq)) in windows.iter().zip(per_window) {
            eq_worst = eq_worst.max(eq);
            lines.push(CheckLine {
                name: name.into(),
                window: (grid[a], grid[b]),
                residual: r,
                tolerance: tol,
                pass: r <= tol,
                witness: Some(witness),
            });
        }
        lines.push(CheckLine {
            name: format!("{name}_equality"),
            window: (t0, t1),
            residual: eq_worst,
            tolerance: 0.0,
            pass: eq_worst == 0.0,
            witness: Some("velocity".into()),
        });
    }
    VerificationReport { lines }
}

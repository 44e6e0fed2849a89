//! Event-driven stick-slip solver built directly on Coulomb's law.
//!
//! Between events each body is either slipping, with friction force `f σ`,
//! or stuck, with a constraint force inside `[-f, f]`. In every regime the
//! velocity of body 1 is then a function of time alone:
//!
//! * both slipping: `y = y_a - m2 (ℓ̇ - ℓ̇_a)/M - (f1 σ1 + f2 σ2)(t - t_a)/M`
//! * body 1 stuck: `y = 0`
//! * body 2 stuck: `y = -ℓ̇`
//!
//! so segments are evaluated in closed form and the only numerical work is
//! locating the events, by scanning the switching functions and bisecting.

use crate::model::{ContactState, GaitProgram, InitialConditions, PhysicalParams, Regime};
use crate::model::{check_grid, ModelError, DEFAULT_STICK_BAND};
use crate::penalized::output_grid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("invalid oracle setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("event accumulation near t = {t} after {events} events")]
    ZenoGuard { t: f64, events: usize },
    #[error("no consistent contact regime at t = {t}")]
    Inconsistent { t: f64 },
    #[error("gait has no period")]
    NonPeriodic,
    #[error("trajectory spans {span} but two periods of {period} are needed")]
    TooShort { span: f64, period: f64 },
    #[error(transparent)]
    Grid(#[from] ModelError),
}

/// Settings of the event-driven solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub output_grid: f64,
    /// Spacing at which switching functions are sampled between events.
    pub scan_step: f64,
    /// Event time tolerance, relative to the horizon. Events are bisected to
    /// machine precision; this sets how far past an event the next regime
    /// is probed.
    pub event_time_tol: f64,
    pub v_stick: f64,
    /// `|ℓ̈|` below which both bodies may stick together.
    pub accel_tol: f64,
    pub max_events: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            output_grid: 1e-3,
            scan_step: 1e-3,
            event_time_tol: 1e-10,
            v_stick: DEFAULT_STICK_BAND,
            accel_tol: 1e-12,
            max_events: 1_000_000,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let positive = [
            ("output_grid", self.output_grid),
            ("scan_step", self.scan_step),
            ("event_time_tol", self.event_time_tol),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(OracleError::InvalidConfig {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        for (field, v) in [("v_stick", self.v_stick), ("accel_tol", self.accel_tol)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(OracleError::InvalidConfig {
                    field,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        if self.max_events == 0 {
            return Err(OracleError::InvalidConfig {
                field: "max_events",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// A regime transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub before: Regime,
    pub after: Regime,
}

impl Event {
    pub fn description(&self) -> String {
        let mut parts = Vec::new();
        if self.before.body1 != self.after.body1 {
            parts.push(format!("body1 {} -> {}", self.before.body1, self.after.body1));
        }
        if self.before.body2 != self.after.body2 {
            parts.push(format!("body2 {} -> {}", self.before.body2, self.after.body2));
        }
        if parts.is_empty() {
            "regime re-entered".to_string()
        } else {
            parts.join("; ")
        }
    }
}

/// Output of [`simulate_events`], sampled on the uniform output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrajectory {
    pub grid: Vec<f64>,
    pub y: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    /// Friction forces `F1`, `F2` (slip value or constraint force).
    pub forces1: Vec<f64>,
    pub forces2: Vec<f64>,
    pub regimes: Vec<Regime>,
    pub events: Vec<Event>,
    /// Largest `|F_i| - f_i` seen on a stuck body; `<= 0` means the stick
    /// forces stayed admissible.
    pub max_stick_excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Slip { s1: f64, s2: f64 },
    Stick1 { s2: f64 },
    Stick2 { s1: f64 },
    Both,
}

impl Mode {
    fn regime(self) -> Regime {
        use ContactState::*;
        match self {
            Mode::Slip { s1, s2 } => Regime::new(
                ContactState::from_sign(s1),
                ContactState::from_sign(s2),
                s1,
                s2,
            ),
            Mode::Stick1 { s2 } => Regime::new(Stick, ContactState::from_sign(s2), 0.0, s2),
            Mode::Stick2 { s1 } => Regime::new(ContactState::from_sign(s1), Stick, s1, 0.0),
            Mode::Both => Regime::new(Stick, Stick, 0.0, 0.0),
        }
    }

    fn slip1(self) -> Option<f64> {
        match self {
            Mode::Slip { s1, .. } | Mode::Stick2 { s1 } => Some(s1),
            _ => None,
        }
    }

    fn slip2(self) -> Option<f64> {
        match self {
            Mode::Slip { s2, .. } | Mode::Stick1 { s2 } => Some(s2),
            _ => None,
        }
    }
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

/// Friction forces and acceleration `ẏ` of a mode at an instant.
fn dynamics(p: &PhysicalParams, mode: Mode, l_ddot: f64) -> (f64, f64, f64) {
    let (m1, m2, f1, f2) = (p.m1(), p.m2(), p.f1(), p.f2());
    match mode {
        Mode::Slip { s1, s2 } => {
            let (a, b) = (f1 * s1, f2 * s2);
            (a, b, (-(m2 * l_ddot) - a - b) / p.total_mass())
        }
        Mode::Stick1 { s2 } => (-(m2 * l_ddot) - f2 * s2, f2 * s2, 0.0),
        Mode::Stick2 { s1 } => (f1 * s1, m1 * l_ddot - f1 * s1, -l_ddot),
        Mode::Both => {
            if f1 >= f2 {
                (-(m2 * l_ddot), 0.0, 0.0)
            } else {
                (0.0, -(m2 * l_ddot), 0.0)
            }
        }
    }
}

/// Whether `mode` can hold at an instant where bodies flagged `rest` have
/// zero velocity and the gait acceleration is `l_ddot`.
fn consistent(p: &PhysicalParams, mode: Mode, rest: (bool, bool), l_ddot: f64, a_tol: f64) -> bool {
    let (f1_force, f2_force, acc) = dynamics(p, mode, l_ddot);
    let ok1 = match mode.slip1() {
        Some(s1) => !rest.0 || s1 * acc > 0.0,
        None => f1_force.abs() <= p.f1(),
    };
    let ok2 = match mode.slip2() {
        Some(s2) => !rest.1 || s2 * (acc + l_ddot) > 0.0,
        None => f2_force.abs() <= p.f2(),
    };
    let ok_both = mode != Mode::Both || l_ddot.abs() <= a_tol;
    ok1 && ok2 && ok_both
}

/// Candidate modes in priority order, given which bodies are at rest and
/// the velocity signs of the others.
fn candidates(rest: (bool, bool), v1: f64, v2: f64) -> Vec<Mode> {
    let dirs1: Vec<f64> = if rest.0 { vec![1.0, -1.0] } else { vec![sign(v1)] };
    let dirs2: Vec<f64> = if rest.1 { vec![1.0, -1.0] } else { vec![sign(v2)] };
    let mut out = Vec::new();
    if rest.0 && rest.1 {
        out.push(Mode::Both);
    }
    if rest.0 {
        out.extend(dirs2.iter().map(|&s2| Mode::Stick1 { s2 }));
    }
    if rest.1 {
        out.extend(dirs1.iter().map(|&s1| Mode::Stick2 { s1 }));
    }
    for &s1 in &dirs1 {
        for &s2 in &dirs2 {
            out.push(Mode::Slip { s1, s2 });
        }
    }
    out
}

/// Instantaneous stick/slip classification from the Coulomb law.
///
/// A body with velocity inside the sticking band is stuck if the constraint
/// force that keeps it there is admissible, and otherwise breaks away in the
/// direction of its acceleration. Both bodies can stick together only while
/// the gait does not accelerate.
pub fn classify_regime(
    params: &PhysicalParams,
    y: f64,
    l_dot: f64,
    l_ddot: f64,
    v_stick: f64,
) -> Regime {
    let v1 = y;
    let v2 = y + l_dot;
    let rest = (v1.abs() <= v_stick, v2.abs() <= v_stick);
    candidates(rest, v1, v2)
        .into_iter()
        .find(|&m| consistent(params, m, rest, l_ddot, 0.0))
        .map(Mode::regime)
        // degenerate ties (zero net force on a frictionless body at rest)
        .unwrap_or_else(|| Regime::new(ContactState::Stick, ContactState::Stick, 0.0, 0.0))
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    y0: f64,
    k10: f64,
    k20: f64,
    l_dot0: f64,
    mode: Mode,
}

struct Sample {
    y: f64,
    k1: f64,
    k2: f64,
    f1: f64,
    f2: f64,
    l_dot: f64,
    l_ddot: f64,
}

impl Segment {
    fn at(&self, p: &PhysicalParams, gait: &GaitProgram, t: f64) -> Sample {
        let g = gait.eval(t);
        let dt = t - self.t0;
        let dl = g.l_dot - self.l_dot0;
        let (m1, m2, f1, f2) = (p.m1(), p.m2(), p.f1(), p.f2());
        let (y, k1, k2) = match self.mode {
            Mode::Slip { s1, s2 } => (
                self.y0 - m2 * dl / p.total_mass() - (f1 * s1 + f2 * s2) * dt / p.total_mass(),
                self.k10 + f1 * s1 * dt,
                self.k20 + f2 * s2 * dt,
            ),
            Mode::Stick1 { s2 } => (
                0.0,
                self.k10 - m2 * dl - f2 * s2 * dt,
                self.k20 + f2 * s2 * dt,
            ),
            Mode::Stick2 { s1 } => (
                -g.l_dot,
                self.k10 + f1 * s1 * dt,
                self.k20 + m1 * dl - f1 * s1 * dt,
            ),
            Mode::Both => {
                if f1 >= f2 {
                    (0.0, self.k10 - m2 * dl, self.k20)
                } else {
                    (0.0, self.k10, self.k20 - m2 * dl)
                }
            }
        };
        let (fa, fb, _) = dynamics(p, self.mode, g.l_ddot);
        Sample {
            y,
            k1,
            k2,
            f1: fa,
            f2: fb,
            l_dot: g.l_dot,
            l_ddot: g.l_ddot,
        }
    }
}

/// Which switching condition ended a segment.
#[derive(Debug, Clone, Copy, Default)]
struct Violations {
    v1: bool,
    v2: bool,
    margin: bool,
}

impl Violations {
    fn any(&self) -> bool {
        self.v1 || self.v2 || self.margin
    }
}

struct Switching<'a> {
    p: &'a PhysicalParams,
    gait: &'a GaitProgram,
    seg: Segment,
    armed1: bool,
    armed2: bool,
    a_tol: f64,
    v_stick: f64,
}

impl Switching<'_> {
    fn check(&self, t: f64) -> Violations {
        let s = self.seg.at(self.p, self.gait, t);
        let mut out = Violations::default();
        match self.seg.mode.slip1() {
            Some(s1) => out.v1 = self.armed1 && s1 * s.y <= 0.0,
            None => out.margin |= s.f1.abs() > self.p.f1(),
        }
        match self.seg.mode.slip2() {
            Some(s2) => out.v2 = self.armed2 && s2 * (s.y + s.l_dot) <= 0.0,
            None => out.margin |= s.f2.abs() > self.p.f2(),
        }
        if self.seg.mode == Mode::Both {
            out.margin |= s.l_ddot.abs() > self.a_tol || s.l_dot.abs() > self.v_stick;
        }
        out
    }

    // velocity channels of bodies that left rest at the segment start only
    // count once they have visibly separated from zero
    fn arm(&mut self, t: f64) {
        let s = self.seg.at(self.p, self.gait, t);
        if let Some(s1) = self.seg.mode.slip1() {
            self.armed1 |= s1 * s.y > 0.0;
        }
        if let Some(s2) = self.seg.mode.slip2() {
            self.armed2 |= s2 * (s.y + s.l_dot) > 0.0;
        }
    }
}

/// Integrates the two-body Coulomb dynamics by events on `[0, horizon]`.
pub fn simulate_events(
    params: &PhysicalParams,
    gait: &GaitProgram,
    ic: &InitialConditions,
    horizon: f64,
    cfg: &OracleConfig,
) -> Result<EventTrajectory, OracleError> {
    cfg.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(OracleError::InvalidConfig {
            field: "horizon",
            reason: format!("must be finite and > 0, got {horizon}"),
        });
    }
    let grid = output_grid(horizon, cfg.output_grid);
    let tol = cfg.event_time_tol * horizon;
    let probe = 10.0 * tol;

    let g0 = gait.eval(0.0);
    let c2 = -params.total_mass() * ic.y0 - params.m2() * g0.l_dot;
    let mut state = (0.0, ic.y0, 0.0, c2);
    let rest0 = (
        ic.y0.abs() <= cfg.v_stick,
        (ic.y0 + g0.l_dot).abs() <= cfg.v_stick,
    );
    let mut seg = start_segment(params, gait, state, rest0, probe, horizon, cfg)?;

    let mut out = EventTrajectory {
        grid: Vec::with_capacity(grid.len()),
        y: Vec::with_capacity(grid.len()),
        k1: Vec::with_capacity(grid.len()),
        k2: Vec::with_capacity(grid.len()),
        forces1: Vec::with_capacity(grid.len()),
        forces2: Vec::with_capacity(grid.len()),
        regimes: Vec::with_capacity(grid.len()),
        events: Vec::new(),
        max_stick_excess: f64::NEG_INFINITY,
    };
    let mut next = 0;
    let mut stalled = 0usize;

    loop {
        let (t_end, hit) = find_event(params, gait, seg, horizon, probe, cfg);
        while next < grid.len() && grid[next] <= t_end {
            record(&mut out, params, gait, &seg, grid[next]);
            next += 1;
        }
        let Some(hit) = hit else { break };

        let s = seg.at(params, gait, t_end);
        let mut y = s.y;
        if hit.v1 {
            y = 0.0;
        }
        if hit.v2 {
            y = -s.l_dot;
        }
        let rest = (
            hit.v1 || y.abs() <= cfg.v_stick || seg.mode.slip1().is_none(),
            hit.v2 || (y + s.l_dot).abs() <= cfg.v_stick || seg.mode.slip2().is_none(),
        );
        state = (t_end, y, s.k1, s.k2);
        let before = seg.mode.regime();
        seg = start_segment(params, gait, state, rest, probe, horizon, cfg)?;
        out.events.push(Event {
            t: t_end,
            before,
            after: seg.mode.regime(),
        });

        if t_end - out.events.get(out.events.len().wrapping_sub(2)).map_or(0.0, |e| e.t) <= probe {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if out.events.len() > cfg.max_events || stalled > 64 {
            return Err(OracleError::ZenoGuard {
                t: t_end,
                events: out.events.len(),
            });
        }
    }
    Ok(out)
}

fn record(
    out: &mut EventTrajectory,
    params: &PhysicalParams,
    gait: &GaitProgram,
    seg: &Segment,
    t: f64,
) {
    let s = seg.at(params, gait, t);
    if seg.mode.slip1().is_none() {
        out.max_stick_excess = out.max_stick_excess.max(s.f1.abs() - params.f1());
    }
    if seg.mode.slip2().is_none() {
        out.max_stick_excess = out.max_stick_excess.max(s.f2.abs() - params.f2());
    }
    out.grid.push(t);
    out.y.push(s.y);
    out.k1.push(s.k1);
    out.k2.push(s.k2);
    out.forces1.push(s.f1);
    out.forces2.push(s.f2);
    out.regimes.push(seg.mode.regime());
}

/// Picks the mode that holds just after `state`, probing the gait a short
/// time ahead so that switching conditions that are exactly marginal at the
/// event resolve the way they are about to go.
fn start_segment(
    params: &PhysicalParams,
    gait: &GaitProgram,
    state: (f64, f64, f64, f64),
    rest: (bool, bool),
    probe: f64,
    horizon: f64,
    cfg: &OracleConfig,
) -> Result<Segment, OracleError> {
    let (t, y, k1, k2) = state;
    let g = gait.eval(t);
    let cands = candidates(rest, y, y + g.l_dot);
    let mut delta = probe;
    let mut chosen = None;
    for _ in 0..4 {
        let tp = (t + delta).min(horizon.max(t + delta));
        let l_ddot = gait.eval(tp).l_ddot;
        chosen = cands
            .iter()
            .copied()
            .find(|&m| consistent(params, m, rest, l_ddot, cfg.accel_tol));
        if chosen.is_some() {
            break;
        }
        delta *= 0.01;
    }
    let mode = chosen
        .or_else(|| {
            cands
                .iter()
                .copied()
                .find(|&m| consistent(params, m, rest, g.l_ddot, cfg.accel_tol))
        })
        .ok_or(OracleError::Inconsistent { t })?;
    let y0 = match mode {
        Mode::Stick1 { .. } | Mode::Both => 0.0,
        Mode::Stick2 { .. } => -g.l_dot,
        Mode::Slip { .. } => y,
    };
    Ok(Segment {
        t0: t,
        y0,
        k10: k1,
        k20: k2,
        l_dot0: g.l_dot,
        mode,
    })
}

/// Scans forward from the segment start; returns the end time and, if the
/// segment ended before the horizon, which switching conditions fired.
fn find_event(
    params: &PhysicalParams,
    gait: &GaitProgram,
    seg: Segment,
    horizon: f64,
    probe: f64,
    cfg: &OracleConfig,
) -> (f64, Option<Violations>) {
    let mut sw = Switching {
        p: params,
        gait,
        seg,
        armed1: false,
        armed2: false,
        a_tol: cfg.accel_tol,
        v_stick: cfg.v_stick,
    };
    let mut a = (seg.t0 + probe).min(horizon);
    sw.arm(a);
    let first = sw.check(a);
    if first.any() {
        return (a, Some(first));
    }
    let mut j = 1.0;
    while a < horizon {
        let b = (seg.t0 + j * cfg.scan_step).min(horizon);
        j += 1.0;
        if b <= a {
            continue;
        }
        let vb = sw.check(b);
        if !vb.any() {
            a = b;
            sw.arm(a);
            continue;
        }
        // bisect to adjacent floats: the velocity snapped to zero at the
        // event then differs from the closed form by rounding only
        let (mut lo, mut hi, mut hit) = (a, b, vb);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let vm = sw.check(mid);
            if vm.any() {
                hi = mid;
                hit = vm;
            } else {
                lo = mid;
            }
        }
        return (hi, Some(hit));
    }
    (horizon, None)
}

/// Net displacement of body 1 over one gait period, measured on the last
/// full period of the trajectory after discarding the first as transient.
///
/// `y` is integrated as a piecewise-linear function of time. A constant gait
/// has every period; half the trajectory span is used.
pub fn net_displacement_per_period(
    grid: &[f64],
    y: &[f64],
    gait: &GaitProgram,
) -> Result<f64, OracleError> {
    check_grid(grid)?;
    if grid.len() != y.len() {
        return Err(ModelError::LengthMismatch {
            grid: grid.len(),
            values: y.len(),
        }
        .into());
    }
    let t0 = grid[0];
    let span = grid[grid.len() - 1] - t0;
    let period = match gait.period() {
        Some(p) => p,
        None if gait.is_constant() => span / 2.0,
        None => return Err(OracleError::NonPeriodic),
    };
    // periods are counted from the trajectory start
    let cycles = ((span / period) * (1.0 + 1e-12)).floor();
    if !(cycles >= 2.0) {
        return Err(OracleError::TooShort { span, period });
    }
    let end = (t0 + cycles * period).min(grid[grid.len() - 1]);
    let start = t0 + (cycles - 1.0) * period;
    Ok(displacement(grid, y, end) - displacement(grid, y, start))
}

/// `∫ y` from the grid start to `t` with linear interpolation between samples.
fn displacement(grid: &[f64], y: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for j in 1..grid.len() {
        let (a, b) = (grid[j - 1], grid[j]);
        if t >= b {
            acc += 0.5 * (b - a) * (y[j - 1] + y[j]);
        } else {
            if t > a {
                let yt = y[j - 1] + (y[j] - y[j - 1]) * (t - a) / (b - a);
                acc += 0.5 * (t - a) * (y[j - 1] + yt);
            }
            break;
        }
    }
    acc
}

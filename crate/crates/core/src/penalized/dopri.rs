//! Dormand-Prince 5(4) stepping for the augmented state `[y, k_1, .., k_p]`.
//!
//! The impulse channels `k_i` are integrated as extra state components with
//! the same Runge-Kutta weights as `y`, so the linear relation between them
//! is preserved up to the quadrature error of `ℓ̈` alone.

use super::{FrictionSystem, SolverConfig, SolverError, StepStats};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th-order weights equal row 7 (FSAL); error weights are b - b*.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Samples of the augmented state on the output grid.
pub(crate) struct Samples {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: StepStats,
}

fn derivative<S: FrictionSystem + ?Sized>(sys: &S, t: f64, x: &[f64], out: &mut [f64]) {
    let acc = sys.evaluate(t, x[0], &mut out[1..]);
    out[0] = acc;
}

/// Uniform output grid `0, dt, 2dt, .., horizon` (last point exactly `horizon`).
pub(crate) fn output_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
    grid.push(horizon);
    grid
}

pub(crate) fn integrate<S: FrictionSystem + ?Sized>(
    sys: &S,
    x0: Vec<f64>,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<Samples, SolverError> {
    let dim = x0.len();
    let grid = output_grid(horizon, cfg.output_grid);
    let mut breaks = sys.breakpoints(0.0, horizon).into_iter().peekable();

    let mut h_cap = cfg.h_max;
    if cfg.stiffness_guard > 0.0 {
        h_cap = h_cap.min(cfg.stiffness_guard / sys.max_index() as f64);
    }
    let h_min = 1e-13 * horizon.max(1.0);

    let mut states = Vec::with_capacity(grid.len());
    states.push(x0.clone());
    let mut stats = StepStats::default();

    let mut t = 0.0;
    let mut x = x0;
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; dim]);
    let mut stage = vec![0.0; dim];
    let mut x_new = vec![0.0; dim];
    derivative(sys, t, &x, &mut k[0]);
    stats.evaluations += 1;
    let mut h = h_cap.min(cfg.output_grid);
    let mut next_out = 1;

    while next_out < grid.len() {
        while breaks.peek().is_some_and(|&b| b <= t + h_min) {
            breaks.next();
        }
        let mut target = grid[next_out];
        let mut at_break = None;
        if let Some(&b) = breaks.peek() {
            // a breakpoint that rounds onto a grid time is that grid time
            if b < target - h_min {
                target = b;
            }
            if (b - target).abs() <= h_min {
                at_break = Some(b.min(target));
            }
        }
        h = h.min(h_cap);
        // stretch by up to 10% rather than leave a sliver before the target
        let remaining = target - t;
        let lands = 1.1 * h >= remaining;
        let step = if lands { remaining } else { h };
        if step < h_min {
            return Err(SolverError::StepUnderflow { t, h: step });
        }
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(SolverError::StepBudget {
                t,
                steps: cfg.max_steps,
            });
        }

        for i in 0..dim {
            stage[i] = x[i] + step * A21 * k[0][i];
        }
        let (head, tail) = k.split_at_mut(1);
        derivative(sys, t + C2 * step, &stage, &mut tail[0]);
        for i in 0..dim {
            stage[i] = x[i] + step * (A31 * head[0][i] + A32 * tail[0][i]);
        }
        derivative(sys, t + C3 * step, &stage, &mut tail[1]);
        for i in 0..dim {
            stage[i] = x[i] + step * (A41 * head[0][i] + A42 * tail[0][i] + A43 * tail[1][i]);
        }
        derivative(sys, t + C4 * step, &stage, &mut tail[2]);
        for i in 0..dim {
            stage[i] = x[i]
                + step
                    * (A51 * head[0][i] + A52 * tail[0][i] + A53 * tail[1][i] + A54 * tail[2][i]);
        }
        derivative(sys, t + C5 * step, &stage, &mut tail[3]);
        for i in 0..dim {
            stage[i] = x[i]
                + step
                    * (A61 * head[0][i]
                        + A62 * tail[0][i]
                        + A63 * tail[1][i]
                        + A64 * tail[2][i]
                        + A65 * tail[3][i]);
        }
        let t_new = if lands { target } else { t + step };
        // the forcing jumps at a breakpoint: close the step with its left limit
        let t_end = match at_break {
            Some(b) if lands => f64::from_bits(b.to_bits() - 1),
            _ => t_new,
        };
        derivative(sys, t_end, &stage, &mut tail[4]);
        for i in 0..dim {
            x_new[i] = x[i]
                + step
                    * (A71 * head[0][i]
                        + A73 * tail[1][i]
                        + A74 * tail[2][i]
                        + A75 * tail[3][i]
                        + A76 * tail[4][i]);
        }
        derivative(sys, t_end, &x_new, &mut tail[5]);
        stats.evaluations += 6;

        let mut err: f64 = 0.0;
        for i in 0..dim {
            let e = step
                * (E1 * head[0][i]
                    + E3 * tail[1][i]
                    + E4 * tail[2][i]
                    + E5 * tail[3][i]
                    + E6 * tail[4][i]
                    + E7 * tail[5][i]);
            let sc = cfg.atol + cfg.rtol * x[i].abs().max(x_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if !x_new.iter().all(|v| v.is_finite()) || !err.is_finite() {
            if step <= h_min * 10.0 {
                return Err(SolverError::NonFinite { t });
            }
            stats.rejected += 1;
            h = step * MIN_FACTOR;
            continue;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            t = t_new;
            std::mem::swap(&mut x, &mut x_new);
            k.swap(0, 6);
            if t_end != t_new {
                derivative(sys, t, &x, &mut k[0]);
                stats.evaluations += 1;
            }
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            // a step shortened to land on the grid says nothing about the
            // natural step, keep the proposal
            h = if lands { h.max(step * factor) } else { step * factor };
            if lands && t == grid[next_out] {
                states.push(x.clone());
                next_out += 1;
            }
        } else {
            stats.rejected += 1;
            h = step * (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
        }
    }

    Ok(Samples {
        grid,
        states,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // y' = -λ y with one passive channel k' = y
    struct Decay {
        lambda: f64,
    }

    impl FrictionSystem for Decay {
        fn channels(&self) -> usize {
            1
        }
        fn total_mass(&self) -> f64 {
            1.0
        }
        fn max_index(&self) -> u64 {
            1
        }
        fn evaluate(&self, _t: f64, y: f64, forces: &mut [f64]) -> f64 {
            forces[0] = y;
            -self.lambda * y
        }
        fn initial_impulses(&self, _y0: f64) -> Vec<f64> {
            vec![0.0]
        }
        fn linear_residual(&self, _t: f64, y: f64, k: &[f64]) -> f64 {
            // y + λ k = y0 = 1
            y + self.lambda * k[0] - 1.0
        }
        fn breakpoints(&self, _t0: f64, _t1: f64) -> Vec<f64> {
            Vec::new()
        }
    }

    #[test]
    fn grid_ends_on_horizon() {
        let g = output_grid(1.0, 0.1);
        assert_eq!(g.len(), 11);
        assert_eq!(*g.last().unwrap(), 1.0);
        let g = output_grid(1.05, 0.1);
        assert_eq!(g.len(), 12);
        assert_eq!(*g.last().unwrap(), 1.05);
    }

    #[test]
    fn exponential_decay_to_tolerance() {
        let sys = Decay { lambda: 3.0 };
        let cfg = SolverConfig {
            output_grid: 0.05,
            ..SolverConfig::default()
        };
        let out = integrate(&sys, vec![1.0, 0.0], 2.0, &cfg).unwrap();
        for (t, x) in out.grid.iter().zip(&out.states) {
            assert!((x[0] - (-3.0 * t).exp()).abs() < 1e-8, "t={t}");
            assert!(sys.linear_residual(*t, x[0], &x[1..]).abs() < 1e-12);
        }
        assert!(out.stats.accepted > 0);
    }

    // y' = y², blows up at t = 1
    struct BlowUp;

    impl FrictionSystem for BlowUp {
        fn channels(&self) -> usize {
            1
        }
        fn total_mass(&self) -> f64 {
            1.0
        }
        fn max_index(&self) -> u64 {
            1
        }
        fn evaluate(&self, _t: f64, y: f64, forces: &mut [f64]) -> f64 {
            forces[0] = 0.0;
            y * y
        }
        fn initial_impulses(&self, _y0: f64) -> Vec<f64> {
            vec![0.0]
        }
        fn linear_residual(&self, _t: f64, _y: f64, _k: &[f64]) -> f64 {
            0.0
        }
        fn breakpoints(&self, _t0: f64, _t1: f64) -> Vec<f64> {
            Vec::new()
        }
    }

    #[test]
    fn underflow_reports_time() {
        let cfg = SolverConfig {
            stiffness_guard: 0.0,
            ..SolverConfig::default()
        };
        match integrate(&BlowUp, vec![1.0, 0.0], 2.0, &cfg) {
            Err(SolverError::StepUnderflow { t, .. }) | Err(SolverError::NonFinite { t }) => {
                assert!((0.9..=1.01).contains(&t), "t = {t}")
            }
            Err(e) => panic!("unexpected error {e:?}"),
            Ok(_) => panic!("expected failure"),
        }
    }

    #[test]
    fn step_budget_is_reported() {
        let sys = Decay { lambda: 1.0 };
        let cfg = SolverConfig {
            max_steps: 3,
            output_grid: 0.001,
            ..SolverConfig::default()
        };
        assert!(matches!(
            integrate(&sys, vec![1.0, 0.0], 1.0, &cfg),
            Err(SolverError::StepBudget { .. })
        ));
    }
}

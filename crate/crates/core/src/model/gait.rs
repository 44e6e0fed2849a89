//! Prescribed linkage length `ℓ(t)` with analytic first and second derivatives.

use thiserror::Error;

/// Relative tolerance used for continuity and periodicity checks at knots.
pub const KNOT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("invalid gait parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample times must be strictly increasing (index {index})")]
    NonMonotoneSamples { index: usize },
    #[error("gait does not close over one period: {quantity} mismatch {mismatch:e}")]
    NotPeriodic {
        quantity: &'static str,
        mismatch: f64,
    },
    #[error("C{order} continuity violated at knot {knot} (relative mismatch {mismatch:e})")]
    Discontinuous {
        order: u8,
        knot: usize,
        mismatch: f64,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> GaitError {
    GaitError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

fn finite(field: &'static str, v: f64) -> Result<f64, GaitError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be finite, got {v}")))
    }
}

fn rel_mismatch(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(a.abs()).max(b.abs()).max(1.0)
}

/// Value, rate and acceleration of the linkage at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitSample {
    pub l: f64,
    pub l_dot: f64,
    pub l_ddot: f64,
}

/// One constant-acceleration piece of a piecewise parabolic gait.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolicSegment {
    pub duration: f64,
    pub acceleration: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Constant {
        l0: f64,
    },
    Sinusoid {
        l0: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    Parabolic {
        period: f64,
        // knot start times, values, rates and accelerations of each segment
        starts: Vec<f64>,
        values: Vec<f64>,
        rates: Vec<f64>,
        accels: Vec<f64>,
    },
    Spline {
        knots: Vec<f64>,
        values: Vec<f64>,
        second: Vec<f64>,
        periodic: bool,
    },
}

/// A prescribed linkage program `ℓ(t)`.
///
/// Constant, sinusoidal and tabulated-spline gaits are C². Piecewise
/// parabolic gaits (piecewise constant acceleration) are only C¹; their
/// construction checks value and rate continuity, including across the
/// periodic wrap, and [`GaitProgram::breakpoints`] reports where `ℓ̈` jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitProgram {
    shape: Shape,
}

impl GaitProgram {
    pub fn constant(l0: f64) -> Result<Self, GaitError> {
        Ok(Self {
            shape: Shape::Constant {
                l0: finite("l0", l0)?,
            },
        })
    }

    /// `ℓ(t) = l0 + amplitude·sin(omega·t + phase)`.
    pub fn sinusoid(l0: f64, amplitude: f64, omega: f64, phase: f64) -> Result<Self, GaitError> {
        finite("l0", l0)?;
        finite("amplitude", amplitude)?;
        finite("phase", phase)?;
        if !(omega.is_finite() && omega > 0.0) {
            return Err(invalid("omega", format!("must be finite and > 0, got {omega}")));
        }
        Ok(Self {
            shape: Shape::Sinusoid {
                l0,
                amplitude,
                omega,
                phase,
            },
        })
    }

    /// Periodic gait made of constant-acceleration pieces, starting from
    /// `ℓ(0) = l0`, `ℓ̇(0) = v0`. Rejected unless both value and rate return
    /// to their initial values at the end of the period.
    pub fn piecewise_parabolic(
        l0: f64,
        v0: f64,
        segments: &[ParabolicSegment],
    ) -> Result<Self, GaitError> {
        finite("l0", l0)?;
        finite("v0", v0)?;
        if segments.is_empty() {
            return Err(GaitError::TooFewSamples { needed: 1, got: 0 });
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut values = Vec::with_capacity(segments.len());
        let mut rates = Vec::with_capacity(segments.len());
        let mut accels = Vec::with_capacity(segments.len());
        let (mut t, mut l, mut v) = (0.0, l0, v0);
        let mut scale_v = v0.abs();
        for seg in segments {
            if !(seg.duration.is_finite() && seg.duration > 0.0) {
                return Err(invalid("duration", format!("must be > 0, got {}", seg.duration)));
            }
            finite("acceleration", seg.acceleration)?;
            starts.push(t);
            values.push(l);
            rates.push(v);
            accels.push(seg.acceleration);
            let d = seg.duration;
            l += v * d + 0.5 * seg.acceleration * d * d;
            v += seg.acceleration * d;
            t += d;
            scale_v = scale_v.max(v.abs()).max((seg.acceleration * d).abs());
        }
        let period = t;
        let dv = rel_mismatch(v, v0, scale_v);
        if dv > KNOT_TOLERANCE {
            return Err(GaitError::NotPeriodic {
                quantity: "rate",
                mismatch: dv,
            });
        }
        let dl = rel_mismatch(l, l0, scale_v * period);
        if dl > KNOT_TOLERANCE {
            return Err(GaitError::NotPeriodic {
                quantity: "value",
                mismatch: dl,
            });
        }
        Ok(Self {
            shape: Shape::Parabolic {
                period,
                starts,
                values,
                rates,
                accels,
            },
        })
    }

    /// Clamped cubic spline through `(times[i], values[i])` with end slopes
    /// `slope_start`, `slope_end`. Outside the sample range the first or last
    /// cubic piece is continued.
    pub fn clamped_spline(
        times: &[f64],
        values: &[f64],
        slope_start: f64,
        slope_end: f64,
    ) -> Result<Self, GaitError> {
        check_samples(times, values, 2)?;
        finite("slope_start", slope_start)?;
        finite("slope_end", slope_end)?;
        let n = times.len() - 1;
        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n).map(|i| (values[i + 1] - values[i]) / h[i]).collect();

        let mut sub = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut sup = vec![0.0; n + 1];
        let mut rhs = vec![0.0; n + 1];
        diag[0] = 2.0 * h[0];
        sup[0] = h[0];
        rhs[0] = 6.0 * (d[0] - slope_start);
        for i in 1..n {
            sub[i] = h[i - 1];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            sup[i] = h[i];
            rhs[i] = 6.0 * (d[i] - d[i - 1]);
        }
        sub[n] = h[n - 1];
        diag[n] = 2.0 * h[n - 1];
        rhs[n] = 6.0 * (slope_end - d[n - 1]);
        let second = solve_tridiagonal(&sub, &diag, &sup, &rhs);

        let gait = Self {
            shape: Shape::Spline {
                knots: times.to_vec(),
                values: values.to_vec(),
                second,
                periodic: false,
            },
        };
        let scale = d.iter().fold(slope_start.abs().max(slope_end.abs()), |a, b| a.max(b.abs()));
        let start = gait.spline_piece(0, times[0]).l_dot;
        let m = rel_mismatch(start, slope_start, scale);
        if m > KNOT_TOLERANCE {
            return Err(GaitError::Discontinuous {
                order: 1,
                knot: 0,
                mismatch: m,
            });
        }
        let end = gait.spline_piece(n - 1, times[n]).l_dot;
        let m = rel_mismatch(end, slope_end, scale);
        if m > KNOT_TOLERANCE {
            return Err(GaitError::Discontinuous {
                order: 1,
                knot: n,
                mismatch: m,
            });
        }
        gait.check_spline_knots(scale)?;
        Ok(gait)
    }

    /// Periodic cubic spline; the last sample closes the period and must
    /// repeat the first value. C² across the wrap.
    pub fn periodic_spline(times: &[f64], values: &[f64]) -> Result<Self, GaitError> {
        check_samples(times, values, 4)?;
        let n = times.len() - 1;
        let vscale = values.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let m = rel_mismatch(values[n], values[0], vscale);
        if m > KNOT_TOLERANCE {
            return Err(GaitError::NotPeriodic {
                quantity: "value",
                mismatch: m,
            });
        }
        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n).map(|i| (values[i + 1] - values[i]) / h[i]).collect();
        // unknowns M_0..M_{n-1}, M_n = M_0
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let hp = if i == 0 { h[n - 1] } else { h[i - 1] };
            let dp = if i == 0 { d[n - 1] } else { d[i - 1] };
            sub[i] = hp;
            diag[i] = 2.0 * (hp + h[i]);
            sup[i] = h[i];
            rhs[i] = 6.0 * (d[i] - dp);
        }
        let mut second = solve_cyclic_tridiagonal(&sub, &diag, &sup, &rhs);
        second.push(second[0]);

        let mut vals = values.to_vec();
        vals[n] = values[0];
        let gait = Self {
            shape: Shape::Spline {
                knots: times.to_vec(),
                values: vals,
                second,
                periodic: true,
            },
        };
        let scale = d.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        gait.check_spline_knots(scale)?;
        let a = gait.spline_piece(0, times[0]);
        let b = gait.spline_piece(n - 1, times[n]);
        let m = rel_mismatch(a.l_dot, b.l_dot, scale);
        if m > KNOT_TOLERANCE {
            return Err(GaitError::Discontinuous {
                order: 1,
                knot: n,
                mismatch: m,
            });
        }
        let m = rel_mismatch(a.l_ddot, b.l_ddot, scale);
        if m > KNOT_TOLERANCE {
            return Err(GaitError::Discontinuous {
                order: 2,
                knot: n,
                mismatch: m,
            });
        }
        Ok(gait)
    }

    /// Evaluates `(ℓ, ℓ̇, ℓ̈)` at time `t`.
    pub fn eval(&self, t: f64) -> GaitSample {
        match &self.shape {
            Shape::Constant { l0 } => GaitSample {
                l: *l0,
                l_dot: 0.0,
                l_ddot: 0.0,
            },
            Shape::Sinusoid {
                l0,
                amplitude,
                omega,
                phase,
            } => {
                let (s, c) = (omega * t + phase).sin_cos();
                GaitSample {
                    l: l0 + amplitude * s,
                    l_dot: amplitude * omega * c,
                    l_ddot: -amplitude * omega * omega * s,
                }
            }
            Shape::Parabolic {
                period,
                starts,
                values,
                rates,
                accels,
            } => {
                let tau = t.rem_euclid(*period);
                let i = starts.partition_point(|&s| s <= tau).saturating_sub(1);
                let dt = tau - starts[i];
                GaitSample {
                    l: values[i] + rates[i] * dt + 0.5 * accels[i] * dt * dt,
                    l_dot: rates[i] + accels[i] * dt,
                    l_ddot: accels[i],
                }
            }
            Shape::Spline {
                knots, periodic, ..
            } => {
                let n = knots.len() - 1;
                let tau = if *periodic {
                    knots[0] + (t - knots[0]).rem_euclid(knots[n] - knots[0])
                } else {
                    t
                };
                let i = knots.partition_point(|&s| s <= tau).saturating_sub(1).min(n - 1);
                self.spline_piece(i, tau)
            }
        }
    }

    /// Period of the gait, if it is periodic. Constant gaits report `None`.
    pub fn period(&self) -> Option<f64> {
        match &self.shape {
            Shape::Constant { .. } => None,
            Shape::Sinusoid { omega, .. } => Some(2.0 * std::f64::consts::PI / omega),
            Shape::Parabolic { period, .. } => Some(*period),
            Shape::Spline {
                knots, periodic, ..
            } => periodic.then(|| knots[knots.len() - 1] - knots[0]),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.shape, Shape::Constant { .. })
    }

    /// Whether `ℓ̈` is continuous everywhere.
    pub fn is_c2(&self) -> bool {
        !matches!(self.shape, Shape::Parabolic { .. })
    }

    /// Times in `(t0, t1)` where `ℓ̈` may jump. Empty for C² gaits.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let Shape::Parabolic { period, starts, .. } = &self.shape else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut cycle = (t0 / period).floor();
        loop {
            let base = cycle * period;
            if base >= t1 {
                break;
            }
            for &s in starts {
                let tb = base + s;
                if tb > t0 && tb < t1 {
                    out.push(tb);
                }
            }
            cycle += 1.0;
        }
        out
    }

    fn spline_piece(&self, i: usize, t: f64) -> GaitSample {
        let Shape::Spline {
            knots,
            values,
            second,
            ..
        } = &self.shape
        else {
            unreachable!("spline_piece on non-spline gait")
        };
        let h = knots[i + 1] - knots[i];
        let a = knots[i + 1] - t;
        let b = t - knots[i];
        let (mi, mj) = (second[i], second[i + 1]);
        let ci = values[i] / h - mi * h / 6.0;
        let cj = values[i + 1] / h - mj * h / 6.0;
        GaitSample {
            l: mi * a * a * a / (6.0 * h) + mj * b * b * b / (6.0 * h) + ci * a + cj * b,
            l_dot: -mi * a * a / (2.0 * h) + mj * b * b / (2.0 * h) - ci + cj,
            l_ddot: mi * a / h + mj * b / h,
        }
    }

    fn check_spline_knots(&self, scale: f64) -> Result<(), GaitError> {
        let Shape::Spline {
            knots, second, ..
        } = &self.shape
        else {
            return Ok(());
        };
        let cscale = second.iter().fold(scale, |a, b| a.max(b.abs()));
        for k in 1..knots.len() - 1 {
            let left = self.spline_piece(k - 1, knots[k]);
            let right = self.spline_piece(k, knots[k]);
            let m0 = rel_mismatch(left.l, right.l, scale);
            let m1 = rel_mismatch(left.l_dot, right.l_dot, scale);
            let m2 = rel_mismatch(left.l_ddot, right.l_ddot, cscale);
            for (order, m) in [(0u8, m0), (1, m1), (2, m2)] {
                if !(m <= KNOT_TOLERANCE) {
                    return Err(GaitError::Discontinuous {
                        order,
                        knot: k,
                        mismatch: m,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_samples(times: &[f64], values: &[f64], needed: usize) -> Result<(), GaitError> {
    if times.len() != values.len() {
        return Err(invalid(
            "values",
            format!("{} times but {} values", times.len(), values.len()),
        ));
    }
    if times.len() < needed {
        return Err(GaitError::TooFewSamples {
            needed,
            got: times.len(),
        });
    }
    for (i, (&t, &v)) in times.iter().zip(values).enumerate() {
        finite("times", t)?;
        finite("values", v)?;
        if i > 0 && !(t > times[i - 1]) {
            return Err(GaitError::NonMonotoneSamples { index: i });
        }
    }
    Ok(())
}

// Thomas algorithm; the system is diagonally dominant for spline problems.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

// Cyclic system: sub[0] couples row 0 to the last unknown, sup[n-1] couples
// the last row to unknown 0. Sherman-Morrison on top of the Thomas solve.
fn solve_cyclic_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let alpha = sup[n - 1];
    let beta = sub[0];
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= alpha * beta / gamma;
    let mut a = sub.to_vec();
    a[0] = 0.0;
    let mut c = sup.to_vec();
    c[n - 1] = 0.0;
    let x = solve_tridiagonal(&a, &b, &c, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(&a, &b, &c, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

//! Moreau-Yosida regularization of the dry-friction potential `φ(y) = f|y|`.
//!
//! For an index `n ≥ 1` the envelope
//!
//! ```text
//! φ_n(y) = inf_{y'} { n/2 (y - y')² + φ(y') }
//!        = n y²/2          if n|y| ≤ f
//!        = f|y| - f²/2n    otherwise
//! ```
//!
//! is C¹ with derivative `φ_n'(y) = clamp(n y, -f, f)`. The resolvent
//! `J_n(ξ) = ξ - φ_n'(ξ)/n` satisfies `φ_n'(ξ) ∈ ∂φ(J_n(ξ))`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("regularization index must be >= 1, got {0}")]
    Zero(u64),
}

/// The convex potential `φ(y) = f|y|` of one body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionPotential {
    f: f64,
}

impl FrictionPotential {
    /// Panics if `f` is negative or not finite; use [`Self::try_new`] for input data.
    pub fn new(f: f64) -> Self {
        Self::try_new(f).expect("friction magnitude must be finite and non-negative")
    }

    pub fn try_new(f: f64) -> Option<Self> {
        (f.is_finite() && f >= 0.0).then_some(Self { f })
    }

    pub fn magnitude(&self) -> f64 {
        self.f
    }

    /// `φ(y) = f|y|`.
    pub fn value(&self, y: f64) -> f64 {
        self.f * y.abs()
    }

    /// The regularized envelope `φ_n(y)`, evaluated from its infimal
    /// convolution definition: `n y²/2` inside the band `n|y| ≤ f`,
    /// `f|y| - f²/(2n)` outside. Continuous, C¹, with derivative [`Self::gradient`].
    pub fn envelope(&self, n: u64, y: f64) -> f64 {
        let nf = n as f64;
        if nf * y.abs() <= self.f {
            0.5 * nf * y * y
        } else {
            self.f * (y.abs() - 0.5 * self.f / nf)
        }
    }

    /// `φ_n'(y) = clamp(n y, -f, f)`: projection of `n y` onto `[-f, f]`.
    pub fn gradient(&self, n: u64, y: f64) -> f64 {
        (n as f64 * y).clamp(-self.f, self.f)
    }

    /// `J_n(ξ) = ξ - φ_n'(ξ)/n`, i.e. soft thresholding of `ξ` at `f/n`.
    ///
    /// Evaluated on the same branch as [`Self::gradient`]: an unsaturated
    /// gradient gives exactly 0, so `φ_n'(ξ) ∈ ∂φ(J_n(ξ))` holds without
    /// rounding slack.
    pub fn resolvent(&self, n: u64, xi: f64) -> f64 {
        let g = self.gradient(n, xi);
        if g.abs() < self.f {
            return 0.0;
        }
        let shrunk = (xi.abs() - self.f / n as f64).max(0.0);
        if shrunk == 0.0 {
            0.0
        } else {
            shrunk.copysign(xi)
        }
    }

    /// `∂φ(y)`, with velocities inside `±v_stick` treated as zero.
    pub fn subdifferential(&self, y: f64, v_stick: f64) -> Interval {
        if y.abs() > v_stick {
            let s = self.f * y.signum();
            Interval { lo: s, hi: s }
        } else {
            Interval {
                lo: -self.f,
                hi: self.f,
            }
        }
    }

    /// Margin of the two-index monotonicity estimate
    ///
    /// ```text
    /// -(y1 - y2)(φ_n'(y1) - φ_r'(y2)) ≤ f² (1/n + 1/r)
    /// ```
    ///
    /// returned as `f²(1/n + 1/r) + (y1 - y2)(φ_n'(y1) - φ_r'(y2))`, which is
    /// never negative.
    pub fn lemma_margin(&self, y1: f64, y2: f64, n: u64, r: u64) -> f64 {
        let bound = self.f * self.f * (1.0 / n as f64 + 1.0 / r as f64);
        bound + (y1 - y2) * (self.gradient(n, y1) - self.gradient(r, y2))
    }

    /// Whether `g ∈ ∂φ(j)` holds with exact zero tests: `g = f·sign(j)` for
    /// `j ≠ 0`, `|g| ≤ f` for `j = 0`.
    pub fn inclusion_holds(&self, g: f64, j: f64) -> bool {
        if j == 0.0 {
            g.abs() <= self.f
        } else {
            g == self.f * j.signum()
        }
    }
}

/// A closed interval `[lo, hi]`; degenerate when `lo == hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi
    }
}

/// The pair `(n1, n2)` of penalization indices.
///
/// Ordered by `min(n1, n2)`; refinement drives that minimum to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegularizationIndex {
    pub n1: u64,
    pub n2: u64,
}

impl RegularizationIndex {
    pub fn new(n1: u64, n2: u64) -> Result<Self, IndexError> {
        if n1 == 0 {
            return Err(IndexError::Zero(n1));
        }
        if n2 == 0 {
            return Err(IndexError::Zero(n2));
        }
        Ok(Self { n1, n2 })
    }

    pub fn uniform(n: u64) -> Result<Self, IndexError> {
        Self::new(n, n)
    }

    pub fn min(&self) -> u64 {
        self.n1.min(self.n2)
    }

    pub fn max(&self) -> u64 {
        self.n1.max(self.n2)
    }

    /// Both indices multiplied by `2^k`.
    pub fn doubled(&self, k: u32) -> Self {
        Self {
            n1: self.n1 << k,
            n2: self.n2 << k,
        }
    }

    pub fn as_vec(&self) -> Vec<u64> {
        vec![self.n1, self.n2]
    }
}

impl PartialOrd for RegularizationIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(
            self.min()
                .cmp(&other.min())
                .then(self.max().cmp(&other.max())),
        )
    }
}

impl std::fmt::Display for RegularizationIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.n1, self.n2)
    }
}

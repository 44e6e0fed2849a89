//! Scenario files: one TOML document per run, validated in full before any
//! solver starts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crawler_core::chain::{ChainError, ChainSpec};
use crawler_core::model::{GaitError, ModelError, ParabolicSegment};
use crawler_core::oracle::{OracleConfig, OracleError};
use crawler_core::penalized::{SolverConfig, SolverError};
use crawler_core::vi::VerifyOptions;
use crawler_core::{GaitProgram, InitialConditions, PhysicalParams};

/// A configuration problem, tied to the dotted key that caused it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error in `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub horizon: f64,
    pub params: Option<ParamsSection>,
    pub gait: Option<GaitSpec>,
    pub chain: Option<ChainSection>,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub refinement: RefinementSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub m1: f64,
    pub m2: f64,
    pub f1: f64,
    pub f2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub duration: f64,
    pub acceleration: f64,
}

/// Linkage length program. `period` of a sinusoid sets `ω = 2π / period`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaitSpec {
    Constant {
        l0: f64,
    },
    Sinusoid {
        l0: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    Parabolic {
        l0: f64,
        #[serde(default)]
        v0: f64,
        segments: Vec<SegmentSpec>,
    },
    ClampedSpline {
        times: Vec<f64>,
        values: Vec<f64>,
        slope_start: f64,
        slope_end: f64,
    },
    PeriodicSpline {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl GaitSpec {
    pub fn build(&self, section: &str) -> Result<GaitProgram, ConfigError> {
        let g = match self {
            GaitSpec::Constant { l0 } => GaitProgram::constant(*l0),
            GaitSpec::Sinusoid {
                l0,
                amplitude,
                period,
                phase,
            } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(ConfigError::new(
                        format!("{section}.period"),
                        format!("must be finite and > 0, got {period}"),
                    ));
                }
                GaitProgram::sinusoid(*l0, *amplitude, 2.0 * PI / period, *phase)
            }
            GaitSpec::Parabolic { l0, v0, segments } => {
                let segs: Vec<ParabolicSegment> = segments
                    .iter()
                    .map(|s| ParabolicSegment {
                        duration: s.duration,
                        acceleration: s.acceleration,
                    })
                    .collect();
                GaitProgram::piecewise_parabolic(*l0, *v0, &segs)
            }
            GaitSpec::ClampedSpline {
                times,
                values,
                slope_start,
                slope_end,
            } => GaitProgram::clamped_spline(times, values, *slope_start, *slope_end),
            GaitSpec::PeriodicSpline { times, values } => GaitProgram::periodic_spline(times, values),
        };
        g.map_err(|e| gait_error(section, e))
    }
}

fn gait_error(section: &str, e: GaitError) -> ConfigError {
    match e {
        GaitError::InvalidParameter { field, reason } => ConfigError::new(format!("{section}.{field}"), reason),
        other => ConfigError::new(section, other.to_string()),
    }
}

fn model_error(section: &str, e: ModelError) -> ConfigError {
    match e {
        ModelError::InvalidParameter { field, reason } => ConfigError::new(format!("{section}.{field}"), reason),
        other => ConfigError::new(section, other.to_string()),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub masses: Vec<f64>,
    pub frictions: Vec<f64>,
    pub links: Vec<GaitSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub y0: f64,
    #[serde(default)]
    pub x10: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub h_max: Option<f64>,
    pub output_grid: Option<f64>,
    pub stiffness_guard: Option<f64>,
    pub max_steps: Option<usize>,
}

/// A single index applied to every channel, or one per channel.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum IndexSpec {
    Uniform(u64),
    PerChannel(Vec<u64>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSection {
    pub n0: Option<IndexSpec>,
    pub epsilon: Option<f64>,
    pub k_max: Option<u32>,
    /// Doublings in a convergence table.
    pub doublings: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Defaults to the solver output grid so both solvers share samples.
    pub output_grid: Option<f64>,
    pub scan_step: Option<f64>,
    pub event_time_tol: Option<f64>,
    pub v_stick: Option<f64>,
    pub accel_tol: Option<f64>,
    pub max_events: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub seed: Option<u64>,
    pub windows: Option<usize>,
    /// Defaults to the refinement target.
    pub epsilon: Option<f64>,
    pub vi_factor: Option<f64>,
    pub linear_rel: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Largest accepted `sup |y_pen - y_oracle|`.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub plots: bool,
}

#[derive(Debug, Clone)]
pub enum System {
    TwoBody {
        params: PhysicalParams,
        gait: GaitProgram,
    },
    Chain(ChainSpec),
}

impl System {
    pub fn frictions(&self) -> Vec<f64> {
        match self {
            System::TwoBody { params, .. } => vec![params.f1(), params.f2()],
            System::Chain(spec) => spec.frictions().to_vec(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            System::TwoBody { .. } => 2,
            System::Chain(spec) => spec.bodies(),
        }
    }

    /// The link between bodies 1 and 2.
    pub fn first_link(&self) -> &GaitProgram {
        match self {
            System::TwoBody { gait, .. } => gait,
            System::Chain(spec) => &spec.links()[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub n0: Vec<u64>,
    pub epsilon: f64,
    pub k_max: u32,
    pub doublings: u32,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: System,
    pub ic: InitialConditions,
    pub horizon: f64,
    pub solver: SolverConfig,
    pub refinement: Refinement,
    pub oracle: OracleConfig,
    pub verify: VerifyOptions,
    pub compare_tolerance: f64,
    pub output_dir: Option<PathBuf>,
    pub plots: bool,
}

pub const DEFAULT_N0: u64 = 100;
pub const DEFAULT_EPSILON: f64 = 0.02;
pub const DEFAULT_K_MAX: u32 = 8;
pub const DEFAULT_DOUBLINGS: u32 = 6;
pub const DEFAULT_COMPARE_TOLERANCE: f64 = 1e-2;

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::new(field, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::new(field, format!("must be finite and >= 0, got {v}")))
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // toml reports the offending key in the message; keep it as the field
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            ConfigError::new(field, e.to_string().trim().to_string())
        })
    }

    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        let horizon = positive("horizon", self.horizon)?;
        let system = match (&self.params, &self.gait, &self.chain) {
            (Some(p), Some(g), None) => System::TwoBody {
                params: PhysicalParams::new(p.m1, p.m2, p.f1, p.f2).map_err(|e| model_error("params", e))?,
                gait: g.build("gait")?,
            },
            (None, None, Some(c)) => {
                let links = c
                    .links
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g.build(&format!("chain.links[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                let spec = ChainSpec::new(c.masses.clone(), c.frictions.clone(), links).map_err(|e| match e {
                    ChainError::Model(m) => model_error("chain", m),
                    other => ConfigError::new("chain", other.to_string()),
                })?;
                System::Chain(spec)
            }
            (_, _, Some(_)) => {
                return Err(ConfigError::new(
                    "chain",
                    "a chain scenario cannot also set [params] or [gait]",
                ))
            }
            (None, _, None) => return Err(ConfigError::new("params", "missing section")),
            (Some(_), None, None) => return Err(ConfigError::new("gait", "missing section")),
        };
        let ic = InitialConditions::new(self.initial.y0, self.initial.x10).map_err(|e| model_error("initial", e))?;

        let d = SolverConfig::default();
        let s = &self.solver;
        let solver = SolverConfig {
            rtol: s.rtol.unwrap_or(d.rtol),
            atol: s.atol.unwrap_or(d.atol),
            h_max: s.h_max.unwrap_or(d.h_max),
            output_grid: s.output_grid.unwrap_or(d.output_grid),
            stiffness_guard: s.stiffness_guard.unwrap_or(d.stiffness_guard),
            max_steps: s.max_steps.unwrap_or(d.max_steps),
        };
        solver.validate().map_err(|e| match e {
            SolverError::InvalidConfig { field, reason } => ConfigError::new(format!("solver.{field}"), reason),
            other => ConfigError::new("solver", other.to_string()),
        })?;

        let r = &self.refinement;
        let channels = system.channels();
        let n0 = match &r.n0 {
            None => vec![DEFAULT_N0; channels],
            Some(IndexSpec::Uniform(n)) => vec![*n; channels],
            Some(IndexSpec::PerChannel(v)) => {
                if v.len() != channels {
                    return Err(ConfigError::new(
                        "refinement.n0",
                        format!("expected {channels} indices, got {}", v.len()),
                    ));
                }
                if matches!(system, System::Chain(_)) && v.iter().any(|&n| n != v[0]) {
                    return Err(ConfigError::new("refinement.n0", "chains refine a single uniform index"));
                }
                v.clone()
            }
        };
        if n0.contains(&0) {
            return Err(ConfigError::new("refinement.n0", "indices must be >= 1"));
        }
        let k_max = r.k_max.unwrap_or(DEFAULT_K_MAX);
        let doublings = r.doublings.unwrap_or(DEFAULT_DOUBLINGS);
        // n0·2^k has to stay representable
        let top = n0.iter().copied().max().unwrap_or(1);
        for (field, k) in [("refinement.k_max", k_max), ("refinement.doublings", doublings)] {
            if k > top.leading_zeros() {
                return Err(ConfigError::new(field, format!("{k} doublings overflow the index")));
            }
        }
        if doublings == 0 {
            return Err(ConfigError::new("refinement.doublings", "must be >= 1"));
        }
        let refinement = Refinement {
            n0,
            epsilon: positive("refinement.epsilon", r.epsilon.unwrap_or(DEFAULT_EPSILON))?,
            k_max,
            doublings,
        };

        let od = OracleConfig::default();
        let o = &self.oracle;
        let oracle = OracleConfig {
            output_grid: o.output_grid.unwrap_or(solver.output_grid),
            scan_step: o.scan_step.unwrap_or(od.scan_step),
            event_time_tol: o.event_time_tol.unwrap_or(od.event_time_tol),
            v_stick: o.v_stick.unwrap_or(od.v_stick),
            accel_tol: o.accel_tol.unwrap_or(od.accel_tol),
            max_events: o.max_events.unwrap_or(od.max_events),
        };
        oracle.validate().map_err(|e| match e {
            OracleError::InvalidConfig { field, reason } => ConfigError::new(format!("oracle.{field}"), reason),
            other => ConfigError::new("oracle", other.to_string()),
        })?;

        let vd = VerifyOptions::default();
        let v = &self.verify;
        let verify = VerifyOptions {
            seed: v.seed.unwrap_or(vd.seed),
            windows: v.windows.unwrap_or(vd.windows),
            epsilon: non_negative("verify.epsilon", v.epsilon.unwrap_or(refinement.epsilon))?,
            vi_factor: positive("verify.vi_factor", v.vi_factor.unwrap_or(vd.vi_factor))?,
            linear_rel: positive("verify.linear_rel", v.linear_rel.unwrap_or(vd.linear_rel))?,
        };

        Ok(Scenario {
            system,
            ic,
            horizon,
            solver,
            refinement,
            oracle,
            verify,
            compare_tolerance: positive(
                "compare.tolerance",
                self.compare.tolerance.unwrap_or(DEFAULT_COMPARE_TOLERANCE),
            )?,
            output_dir: self.output.dir.clone(),
            plots: self.output.plots,
        })
    }
}

/// Reads, parses and validates a scenario file.
pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
    ScenarioFile::parse(&text)?.validate()
}

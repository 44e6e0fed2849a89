//! The five subcommands. Each validates, runs, writes its files, and maps
//! failures onto [`CliError`].

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crawler_core::chain::{chain_refine, chain_rhs, chain_schedule, ChainError, ChainSpec, ChainSystem};
use crawler_core::model::{contact_force, reconstruct_positions, ContactState};
use crawler_core::oracle::{net_displacement_per_period, simulate_events, EventTrajectory, OracleError};
use crawler_core::penalized::{
    refine, run_schedule, schedule_pairs, FrictionSystem, PenalizedTrajectory, RefineError, RefineOutcome,
    RefineSettings,
};
use crawler_core::vi::{self, CheckLine, Provenance, Trajectory, VerificationReport, VerifyOptions};
use crawler_core::{FrictionPotential, GaitProgram, PhysicalParams, RegularizationIndex};

use crate::config::{ConfigError, Scenario, System};
use crate::plot::{line_plot, regime_bands, Band, Series};
use crate::table::TrajectoryTable;
use crate::CliError;

pub struct Context {
    pub out_dir: PathBuf,
    pub plots: bool,
    pub quiet: bool,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        // a closed pipe (`crawler ... | head`) is not an error
        if !self.quiet {
            let _ = writeln!(std::io::stdout().lock(), "{}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", self.out_dir.display())))?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

fn two_body_only(scn: &Scenario) -> Result<(&PhysicalParams, &GaitProgram), CliError> {
    match &scn.system {
        System::TwoBody { params, gait } => Ok((params, gait)),
        System::Chain(_) => Err(ConfigError {
            field: "chain".into(),
            reason: "the event-driven solver and the comparison handle two bodies only".into(),
        }
        .into()),
    }
}

/// State of a penalized channel: stuck while `n v` is inside the band `[-f, f]`.
fn penalized_state(f: f64, n: u64, v: f64) -> ContactState {
    if (n as f64 * v).abs() < f {
        ContactState::Stick
    } else {
        ContactState::from_sign(v)
    }
}

/// Builds the CSV table of a penalized run, recomputing forces from the
/// regularized gradients.
pub fn penalized_table(scn: &Scenario, run: &PenalizedTrajectory) -> Result<TrajectoryTable, CliError> {
    let pos = reconstruct_positions(&run.grid, &run.y, scn.ic.x10, scn.system.first_link()).map_err(solver_err)?;
    let len = run.grid.len();
    let mut t = TrajectoryTable {
        t: run.grid.clone(),
        y: run.y.clone(),
        x1: pos.x1,
        x2: pos.x2,
        k: run.impulses.clone(),
        f1: Vec::with_capacity(len),
        f2: Vec::with_capacity(len),
        g2: Vec::with_capacity(len),
        regime1: Vec::with_capacity(len),
        regime2: Vec::with_capacity(len),
    };
    let (n1, n2) = (run.indices[0], run.indices[1]);
    for (&time, &y) in run.grid.iter().zip(&run.y) {
        let (f1, f2, v2, g2) = match &scn.system {
            System::TwoBody { params, gait } => {
                let s = gait.eval(time);
                let v2 = y + s.l_dot;
                let a = FrictionPotential::new(params.f1()).gradient(n1, y);
                let b = FrictionPotential::new(params.f2()).gradient(n2, v2);
                ((params.f1(), a), (params.f2(), b), v2, contact_force(params, s.l_ddot, a, b))
            }
            System::Chain(spec) => {
                let v2 = y + spec.offsets(time).l_dot[1];
                let (c1, c2) = (spec.frictions()[0], spec.frictions()[1]);
                let a = FrictionPotential::new(c1).gradient(n1, y);
                let b = FrictionPotential::new(c2).gradient(n2, v2);
                let y_dot = chain_rhs(spec, &run.indices, time, y).map_err(solver_err)?;
                // force of the first link on the rest of the chain
                ((c1, a), (c2, b), v2, -(spec.masses()[0] * y_dot + a))
            }
        };
        t.f1.push(f1.1);
        t.f2.push(f2.1);
        t.g2.push(g2);
        t.regime1.push(penalized_state(f1.0, n1, y));
        t.regime2.push(penalized_state(f2.0, n2, v2));
    }
    Ok(t)
}

pub fn event_table(scn: &Scenario, tr: &EventTrajectory) -> Result<TrajectoryTable, CliError> {
    let (params, gait) = two_body_only(scn)?;
    let pos = reconstruct_positions(&tr.grid, &tr.y, scn.ic.x10, gait).map_err(solver_err)?;
    let g2 = tr
        .grid
        .iter()
        .zip(tr.forces1.iter().zip(&tr.forces2))
        .map(|(&t, (&a, &b))| contact_force(params, gait.eval(t).l_ddot, a, b))
        .collect();
    Ok(TrajectoryTable {
        t: tr.grid.clone(),
        y: tr.y.clone(),
        x1: pos.x1,
        x2: pos.x2,
        k: vec![tr.k1.clone(), tr.k2.clone()],
        f1: tr.forces1.clone(),
        f2: tr.forces2.clone(),
        g2,
        regime1: tr.regimes.iter().map(|r| r.body1).collect(),
        regime2: tr.regimes.iter().map(|r| r.body2).collect(),
    })
}

/// Refinement of either system. A spent budget is not an error here; the
/// caller decides from `certificate.converged`.
fn run_refine(scn: &Scenario) -> Result<RefineOutcome, CliError> {
    let r = &scn.refinement;
    let result = match &scn.system {
        System::TwoBody { params, gait } => {
            let settings = RefineSettings {
                n0: RegularizationIndex::new(r.n0[0], r.n0[1]).map_err(solver_err)?,
                epsilon: r.epsilon,
                k_max: r.k_max,
            };
            refine(params, gait, &scn.ic, scn.horizon, &scn.solver, &settings)
        }
        System::Chain(spec) => {
            match chain_refine(spec, &scn.ic, scn.horizon, &scn.solver, r.n0[0], r.epsilon, r.k_max) {
                Ok(o) => Ok(o),
                Err(ChainError::Refine(e)) => Err(e),
                Err(e) => return Err(solver_err(e)),
            }
        }
    };
    match result {
        Ok(o) => Ok(o),
        Err(RefineError::BudgetExhausted(o)) => Ok(*o),
        Err(e) => Err(solver_err(e)),
    }
}

fn certificate_text(o: &RefineOutcome) -> String {
    let c = &o.certificate;
    let limit = o.limit();
    let mut s = String::new();
    let _ = writeln!(s, "certificate: finest index {:?} after {} runs", c.finest, o.runs.len());
    let _ = writeln!(s, "  target epsilon          {:.3e}", c.epsilon);
    let _ = writeln!(s, "  Cauchy bound B          {:.6e}  (sup|y - y_limit| <= sqrt(B) = {:.6e})", c.theoretical_bound, c.velocity_bound());
    let _ = writeln!(s, "  measured sup, last pair {:.6e}", c.measured_sup);
    let _ = writeln!(s, "  linear relation residual {:.3e}", limit.linear_residual);
    let _ = write!(s, "  converged: {}", c.converged);
    s
}

fn emit_plots(ctx: &Context, prefix: &str, table: &TrajectoryTable) -> Result<(), CliError> {
    if !ctx.plots {
        return Ok(());
    }
    let y = line_plot("velocity of body 1", "t", "y", &[Series { label: "y".into(), x: &table.t, y: &table.y }]);
    ctx.write(&format!("{prefix}_y.svg"), &y)?;
    let x1 = line_plot("position of body 1", "t", "x1", &[Series { label: "x1".into(), x: &table.t, y: &table.x1 }]);
    ctx.write(&format!("{prefix}_x1.svg"), &x1)?;
    let series: Vec<Series> = table
        .k
        .iter()
        .enumerate()
        .map(|(i, k)| Series { label: format!("k{}", i + 1), x: &table.t, y: k })
        .collect();
    ctx.write(&format!("{prefix}_k.svg"), &line_plot("friction impulses", "t", "k", &series))?;
    let bands = regime_bands(
        "contact regimes",
        &[
            Band { label: "body1".into(), t: &table.t, states: &table.regime1 },
            Band { label: "body2".into(), t: &table.t, states: &table.regime2 },
        ],
    );
    ctx.write(&format!("{prefix}_regimes.svg"), &bands)?;
    Ok(())
}

pub fn simulate(scn: &Scenario, ctx: &Context) -> Result<(), CliError> {
    let outcome = run_refine(scn)?;
    let table = penalized_table(scn, outcome.limit())?;
    let path = ctx.write("trajectory.csv", &table.to_csv())?;
    emit_plots(ctx, "trajectory", &table)?;
    ctx.say(certificate_text(&outcome));
    ctx.say(format!("wrote {}", path.display()));
    let c = &outcome.certificate;
    if !c.converged {
        return Err(CliError::Solver(format!(
            "refinement budget exhausted at index {:?}: bound {:e} above epsilon^2 = {:e}",
            c.finest,
            c.theoretical_bound,
            c.epsilon * c.epsilon
        )));
    }
    Ok(())
}

fn events_csv(tr: &EventTrajectory) -> String {
    let mut out = String::from("t,body1_before,body2_before,body1_after,body2_after,description\n");
    for e in &tr.events {
        let _ = writeln!(
            out,
            "{:.16e},{},{},{},{},{}",
            e.t,
            e.before.body1,
            e.before.body2,
            e.after.body1,
            e.after.body2,
            e.description().replace(',', ";")
        );
    }
    out
}

fn run_oracle(scn: &Scenario) -> Result<EventTrajectory, CliError> {
    let (params, gait) = two_body_only(scn)?;
    simulate_events(params, gait, &scn.ic, scn.horizon, &scn.oracle).map_err(|e| match e {
        OracleError::InvalidConfig { field, reason } => ConfigError {
            field: format!("oracle.{field}"),
            reason,
        }
        .into(),
        other => solver_err(other),
    })
}

pub fn oracle(scn: &Scenario, ctx: &Context) -> Result<(), CliError> {
    let (params, gait) = two_body_only(scn)?;
    let tr = run_oracle(scn)?;
    let table = event_table(scn, &tr)?;
    let path = ctx.write("oracle.csv", &table.to_csv())?;
    let events = ctx.write("oracle_events.csv", &events_csv(&tr))?;
    emit_plots(ctx, "oracle", &table)?;
    let lin = vi::check_linear_relation(&Trajectory::from_events(&tr), params, gait);
    ctx.say(format!(
        "event-driven run: {} events, linear relation residual {lin:.3e}, max stick force excess {:.3e}",
        tr.events.len(),
        tr.max_stick_excess
    ));
    ctx.say(format!("wrote {}", path.display()));
    ctx.say(format!("wrote {}", events.display()));
    Ok(())
}

fn join(idx: &[u64]) -> String {
    idx.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

pub fn converge(scn: &Scenario, ctx: &Context) -> Result<(), CliError> {
    let r = &scn.refinement;
    let runs = match &scn.system {
        System::TwoBody { params, gait } => {
            let n0 = RegularizationIndex::new(r.n0[0], r.n0[1]).map_err(solver_err)?;
            run_schedule(params, gait, &scn.ic, scn.horizon, &scn.solver, n0, r.doublings).map_err(solver_err)?
        }
        System::Chain(spec) => {
            chain_schedule(spec, &scn.ic, scn.horizon, &scn.solver, r.n0[0], r.doublings).map_err(solver_err)?
        }
    };
    let pairs = schedule_pairs(&scn.system.frictions(), &runs, scn.horizon, &scn.solver);
    let mut csv = String::from("n,r,bound,measured_sup2,slack,pass\n");
    let mut text = format!("{:>18} {:>18} {:>13} {:>13} {:>10}  pass\n", "n", "r", "bound", "measured²", "slack");
    for p in &pairs {
        let sup2 = p.measured_sup * p.measured_sup;
        let _ = writeln!(
            csv,
            "{},{},{:.16e},{:.16e},{:.16e},{}",
            join(&p.coarse),
            join(&p.fine),
            p.bound,
            sup2,
            p.slack,
            p.pass
        );
        let _ = writeln!(
            text,
            "{:>18} {:>18} {:>13.6e} {:>13.6e} {:>10.3e}  {}",
            join(&p.coarse),
            join(&p.fine),
            p.bound,
            sup2,
            p.slack,
            p.pass
        );
    }
    let path = ctx.write("converge.csv", &csv)?;
    ctx.say(text.trim_end());
    ctx.say(format!("wrote {}", path.display()));
    let failed: Vec<String> = pairs
        .iter()
        .filter(|p| !p.pass)
        .map(|p| format!("{} vs {}", join(&p.coarse), join(&p.fine)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("Cauchy bound exceeded for {}", failed.join(", "))))
    }
}

/// Impulse relation, `k1(0) = 0` and Lipschitz checks of a chain trajectory.
fn chain_report(spec: &ChainSpec, table: &TrajectoryTable, opts: &VerifyOptions) -> VerificationReport {
    let ones = vec![1; spec.bodies()];
    let sys = ChainSystem { spec, n: &ones };
    let (t0, t1) = (table.t[0], table.t[table.len() - 1]);
    let max_y = table.y.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let tol = opts.linear_rel * max_y.max(1.0);
    let mut k_row = vec![0.0; table.channels()];
    let mut lin: f64 = 0.0;
    for j in 0..table.len() {
        for (slot, k) in k_row.iter_mut().zip(&table.k) {
            *slot = k[j];
        }
        lin = lin.max(sys.linear_residual(table.t[j], table.y[j], &k_row).abs());
    }
    let line = |name: String, window: (f64, f64), residual: f64, tolerance: f64, pass: bool| CheckLine {
        name,
        window,
        residual,
        tolerance,
        pass,
        witness: None,
    };
    let mut lines = vec![
        line("linear_relation".into(), (t0, t1), lin, tol, lin <= tol),
        line("k1_initial".into(), (t0, t0), table.k[0][0].abs(), 0.0, table.k[0][0] == 0.0),
    ];
    for (i, (k, &f)) in table.k.iter().zip(spec.frictions()).enumerate() {
        let excess = (1..table.len())
            .map(|j| (k[j] - k[j - 1]).abs() - f * (table.t[j] - table.t[j - 1]))
            .fold(f64::NEG_INFINITY, f64::max);
        lines.push(line(format!("lipschitz_k{}", i + 1), (t0, t1), excess, tol, excess <= tol));
    }
    VerificationReport { lines }
}

pub fn verify(scn: &Scenario, trajectory: &Path, ctx: &Context) -> Result<(), CliError> {
    let text = std::fs::read_to_string(trajectory)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", trajectory.display())))?;
    let table = TrajectoryTable::from_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", trajectory.display())))?;
    if table.channels() != scn.system.channels() {
        return Err(CliError::Input(format!(
            "{} has {} impulse channels, the scenario has {}",
            trajectory.display(),
            table.channels(),
            scn.system.channels()
        )));
    }
    let report = match &scn.system {
        System::TwoBody { params, gait } => {
            let traj = Trajectory::new(
                table.t.clone(),
                table.y.clone(),
                table.k[0].clone(),
                table.k[1].clone(),
                Provenance::External(trajectory.display().to_string()),
            )
            .map_err(|e| CliError::Input(format!("{}: {e}", trajectory.display())))?;
            vi::verify(&traj, params, gait, &scn.verify)
        }
        System::Chain(spec) => chain_report(spec, &table, &scn.verify),
    };
    let path = ctx.write("verify_summary.csv", &report.summary_csv())?;
    ctx.say(report.to_string());
    ctx.say(format!("wrote {}", path.display()));
    if report.passed() {
        return Ok(());
    }
    let worst = report.worst().expect("a failed report has lines");
    let mut names: Vec<&str> = report.failures().map(|l| l.name.as_str()).collect();
    names.dedup();
    Err(CliError::Check(format!(
        "{} of {} checks failed ({}); worst: {} on [{}, {}], residual {:e} > tolerance {:e}",
        report.failures().count(),
        report.lines.len(),
        names.join(", "),
        worst.name,
        worst.window.0,
        worst.window.1,
        worst.residual,
        worst.tolerance
    )))
}

/// Drift per period, or `None` when the gait or span does not allow one.
fn drift(grid: &[f64], y: &[f64], gait: &GaitProgram) -> Option<f64> {
    net_displacement_per_period(grid, y, gait).ok()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.16e}"))
}

pub fn compare(scn: &Scenario, ctx: &Context) -> Result<(), CliError> {
    let (_, gait) = two_body_only(scn)?;
    let outcome = run_refine(scn)?;
    let tr = run_oracle(scn)?;
    let limit = outcome.limit();
    let pen = Trajectory::from_penalized(limit).map_err(solver_err)?;
    let gap = vi::uniqueness_compare(&pen, &Trajectory::from_events(&tr)).map_err(solver_err)?;
    let d_pen = drift(&limit.grid, &limit.y, gait);
    let d_or = drift(&tr.grid, &tr.y, gait);
    let rel = match (d_pen, d_or) {
        (Some(a), Some(b)) if b != 0.0 => Some((a - b).abs() / b.abs()),
        _ => None,
    };
    let rows: [(&str, String); 10] = [
        ("finest_index", join(&outcome.certificate.finest)),
        ("certificate_bound", format!("{:.16e}", outcome.certificate.velocity_bound())),
        ("converged", outcome.certificate.converged.to_string()),
        ("sup_dy", format!("{:.16e}", gap.y)),
        ("sup_dk1", format!("{:.16e}", gap.k1)),
        ("sup_dk_sum", format!("{:.16e}", gap.k_sum)),
        ("drift_penalized", opt(d_pen)),
        ("drift_oracle", opt(d_or)),
        ("drift_relative_gap", opt(rel)),
        ("events", tr.events.len().to_string()),
    ];
    let mut csv = String::from("metric,value\n");
    for (k, v) in &rows {
        let _ = writeln!(csv, "{k},{v}");
    }
    let path = ctx.write("compare.csv", &csv)?;
    if ctx.plots {
        let a = penalized_table(scn, limit)?;
        let b = event_table(scn, &tr)?;
        let plots = [
            ("compare_y.svg", "velocity of body 1", "y", &a.y, &b.y),
            ("compare_x1.svg", "position of body 1", "x1", &a.x1, &b.x1),
        ];
        for (name, title, label, va, vb) in plots {
            let svg = line_plot(
                title,
                "t",
                label,
                &[
                    Series { label: format!("{label} (penalized)"), x: &a.t, y: va },
                    Series { label: format!("{label} (event-driven)"), x: &b.t, y: vb },
                ],
            );
            ctx.write(name, &svg)?;
        }
        let ks = [
            Series { label: "k1 (penalized)".into(), x: &a.t, y: &a.k[0] },
            Series { label: "k1 (event-driven)".into(), x: &b.t, y: &b.k[0] },
            Series { label: "k2 (penalized)".into(), x: &a.t, y: &a.k[1] },
            Series { label: "k2 (event-driven)".into(), x: &b.t, y: &b.k[1] },
        ];
        ctx.write("compare_k.svg", &line_plot("friction impulses", "t", "k", &ks))?;
        let bands = regime_bands(
            "contact regimes",
            &[
                Band { label: "body1 pen".into(), t: &a.t, states: &a.regime1 },
                Band { label: "body1 event".into(), t: &b.t, states: &b.regime1 },
                Band { label: "body2 pen".into(), t: &a.t, states: &a.regime2 },
                Band { label: "body2 event".into(), t: &b.t, states: &b.regime2 },
            ],
        );
        ctx.write("compare_regimes.svg", &bands)?;
    }
    let mut text = String::new();
    for (k, v) in &rows {
        let _ = writeln!(text, "{k:<20} {v}");
    }
    ctx.say(text.trim_end());
    ctx.say(format!("wrote {}", path.display()));
    if gap.y > scn.compare_tolerance {
        return Err(CliError::Check(format!(
            "solvers differ by sup|dy| = {:e}, above the tolerance {:e}",
            gap.y, scn.compare_tolerance
        )));
    }
    if !outcome.certificate.converged {
        return Err(CliError::Solver("refinement budget exhausted before the target accuracy".into()));
    }
    Ok(())
}

//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows without `--nocapture`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crawler_core::chain::{chain_integrate, chain_schedule, ChainSpec};
use crawler_core::oracle::{net_displacement_per_period, simulate_events, OracleConfig};
use crawler_core::penalized::{
    cauchy_bound, cauchy_bound_multi, integrate, refine, run_schedule, sup_difference,
    PenalizedTrajectory, RefineError, RefineOutcome, RefineSettings, SolverConfig,
};
use crawler_core::vi::{uniqueness_compare, verify, Trajectory, VerifyOptions};
use crawler_core::{FrictionPotential, GaitProgram, InitialConditions, PhysicalParams, RegularizationIndex};

const T: f64 = 5.0;

fn benchmark() -> (PhysicalParams, GaitProgram) {
    (
        PhysicalParams::new(1.0, 1.0, 0.1, 0.3).unwrap(),
        GaitProgram::sinusoid(1.0, 0.25, 2.0 * PI, 0.0).unwrap(),
    )
}

fn idx(n: u64) -> RegularizationIndex {
    RegularizationIndex::uniform(n).unwrap()
}

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    let line = format!(
        "acceptance {:>2} {} {}: {}\n",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.name,
        o.detail
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn linear_ok(run: &PenalizedTrajectory) -> (bool, f64, f64) {
    let tol = 1e-6 * run.max_abs_y().max(1.0);
    (run.linear_residual <= tol, run.linear_residual, tol)
}

fn settle(r: Result<RefineOutcome, RefineError>) -> RefineOutcome {
    match r {
        Ok(o) => o,
        Err(RefineError::BudgetExhausted(o)) => *o,
        Err(e) => panic!("refine failed: {e}"),
    }
}

#[test]
fn acceptance_suite() {
    let suite_start = Instant::now();
    let (params, gait) = benchmark();
    let ic = InitialConditions::at_rest();
    let cfg = SolverConfig::default();
    let mut outcomes = Vec::new();

    // 1. Cauchy bound along n0 = 100 doubled 6 times
    let start = Instant::now();
    let schedule = run_schedule(&params, &gait, &ic, T, &cfg, idx(100), 6).unwrap();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut pass1 = schedule.len() == 7;
    for w in schedule.windows(2) {
        let bound = cauchy_bound(
            params.f1(),
            params.f2(),
            w[0].index().unwrap(),
            w[1].index().unwrap(),
            T,
        );
        let sup = sup_difference(&w[0].y, &w[1].y);
        worst = worst.max(sup * sup - bound);
        pass1 &= sup * sup <= bound + 1e-6;
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcomes.push(Outcome {
        id: 1,
        name: "cauchy bound",
        pass: pass1 && elapsed <= 60.0,
        detail: format!(
            "6 adjacent pairs, max(sup² - bound) = {worst:.3e} <= 1e-6, schedule time {elapsed:.2}s"
        ),
    });

    // 3's limit, 5's runs and 4's oracle are shared below
    let oracle = simulate_events(&params, &gait, &ic, T, &OracleConfig::default()).unwrap();
    let run_1e4 = integrate(&params, &gait, &ic, idx(10_000), T, &cfg).unwrap();
    let settings = |n0| RefineSettings {
        n0: idx(n0),
        epsilon: 0.02,
        k_max: 8,
    };
    let ref_a = settle(refine(&params, &gait, &ic, T, &cfg, &settings(100)));
    let ref_b = settle(refine(&params, &gait, &ic, T, &cfg, &settings(150)));

    // 2. linear relation on every solver output
    let mut lin_worst: f64 = 0.0;
    let mut pass2 = true;
    let mut outputs: Vec<&PenalizedTrajectory> = schedule.iter().collect();
    outputs.push(&run_1e4);
    outputs.extend(ref_a.runs.iter());
    outputs.extend(ref_b.runs.iter());
    for run in &outputs {
        let (ok, r, tol) = linear_ok(run);
        pass2 &= ok;
        lin_worst = lin_worst.max(r / tol);
    }
    let oracle_traj = Trajectory::from_events(&oracle);
    let oracle_lin = crawler_core::vi::check_linear_relation(&oracle_traj, &params, &gait);
    let oracle_tol = 1e-6 * oracle_traj.max_abs_y().max(1.0);
    pass2 &= oracle_lin <= oracle_tol;
    outcomes.push(Outcome {
        id: 2,
        name: "linear relation",
        pass: pass2,
        detail: format!(
            "{} penalized runs, worst residual/tol = {lin_worst:.3e}; event-driven residual {oracle_lin:.3e}",
            outputs.len()
        ),
    });

    // 3. variational inequalities on the limit of the schedule
    let limit = schedule.last().unwrap();
    let pair_bound = cauchy_bound(
        params.f1(),
        params.f2(),
        schedule[5].index().unwrap(),
        limit.index().unwrap(),
        T,
    );
    let epsilon = pair_bound.sqrt();
    let opts = VerifyOptions {
        epsilon,
        ..VerifyOptions::default()
    };
    let limit_traj = Trajectory::from_penalized(limit).unwrap();
    let vi_report = verify(&limit_traj, &params, &gait, &opts);
    let eq_exact = vi_report
        .lines
        .iter()
        .filter(|l| l.name.ends_with("_equality"))
        .all(|l| l.residual == 0.0);
    // calibration case: frictionless closed form, where both inequalities
    // hold with equality and the tolerance collapses to zero
    let free = PhysicalParams::new(1.0, 1.0, 0.0, 0.0).unwrap();
    let free_run = integrate(&free, &gait, &ic, idx(100), T, &cfg).unwrap();
    let free_report = verify(
        &Trajectory::from_penalized(&free_run).unwrap(),
        &free,
        &gait,
        &opts,
    );
    let free_zero = free_report
        .lines
        .iter()
        .filter(|l| l.name.starts_with("vi"))
        .all(|l| l.residual == 0.0 && l.tolerance == 0.0);
    let windows = vi_report.lines.iter().filter(|l| l.name == "vi1").count();
    let worst_vi = vi_report
        .lines
        .iter()
        .filter(|l| l.name == "vi1" || l.name == "vi2")
        .map(|l| l.residual / l.tolerance)
        .fold(f64::NEG_INFINITY, f64::max);
    outcomes.push(Outcome {
        id: 3,
        name: "variational inequalities",
        pass: vi_report.passed() && eq_exact && free_zero && windows == 103,
        detail: format!(
            "{} checks over {windows} windows, worst residual/vi_tol = {worst_vi:.3e}, equality residuals exactly 0: {eq_exact}, frictionless calibration exact: {free_zero}",
            vi_report.lines.len()
        ),
    });

    // 4. event-driven cross-check
    let sups: Vec<f64> = schedule.iter().map(|r| sup_difference(&r.y, &oracle.y)).collect();
    let monotone = sups.windows(2).all(|w| w[1] <= w[0]);
    let sup_1e4 = sup_difference(&run_1e4.y, &oracle.y);
    outcomes.push(Outcome {
        id: 4,
        name: "oracle cross-check",
        pass: monotone && sup_1e4 <= 1e-2,
        detail: format!(
            "sup|y_pen - y_oracle| along schedule {:?}, non-increasing: {monotone}; at n=1e4: {sup_1e4:.3e}",
            sups.iter().map(|s| format!("{s:.2e}")).collect::<Vec<_>>()
        ),
    });

    // 5. uniqueness across two schedules
    let cert = |o: &RefineOutcome| o.certificate.theoretical_bound.sqrt();
    let (ca, cb) = (cert(&ref_a), cert(&ref_b));
    let gap = uniqueness_compare(
        &Trajectory::from_penalized(ref_a.limit()).unwrap(),
        &Trajectory::from_penalized(ref_b.limit()).unwrap(),
    )
    .unwrap();
    let y_tol = ca + cb + 1e-6;
    let k_tol = params.total_mass() * (ca + cb) + 1e-6;
    outcomes.push(Outcome {
        id: 5,
        name: "uniqueness",
        pass: ref_a.certificate.converged
            && ref_b.certificate.converged
            && gap.y <= y_tol
            && gap.k_sum <= k_tol
            && gap.k1 <= k_tol,
        detail: format!(
            "limits n={:?} vs n={:?}: sup|Δy| {:.3e} <= {y_tol:.3e}, sup|Δ(k1+k2)| {:.3e}, sup|Δk1| {:.3e} <= {k_tol:.3e}",
            ref_a.certificate.finest, ref_b.certificate.finest, gap.y, gap.k_sum, gap.k1
        ),
    });

    // 6. envelope difference margin
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..100_000 {
        let f = rng.gen_range(0.0..5.0);
        let n = 10f64.powf(rng.gen_range(0.0..6.0)) as u64 + 1;
        let r = 10f64.powf(rng.gen_range(0.0..6.0)) as u64 + 1;
        // mix velocities inside the smoothing bands with large ones
        let scale = if rng.gen_bool(0.5) { f / n.min(r) as f64 } else { 2.0 };
        let y1 = rng.gen_range(-2.0..2.0) * scale;
        let y2 = rng.gen_range(-2.0..2.0) * scale;
        let m = FrictionPotential::new(f).lemma_margin(y1, y2, n, r);
        min_margin = min_margin.min(m);
        if !(m >= 0.0) {
            violations += 1;
        }
    }
    outcomes.push(Outcome {
        id: 6,
        name: "lemma margin",
        pass: violations == 0,
        detail: format!("100000 samples, {violations} violations, min margin {min_margin:.3e}"),
    });

    // 7. resolvent inclusion
    let mut rng = ChaCha8Rng::seed_from_u64(4048);
    let mut failures = 0;
    let mut branches = [0usize; 2];
    for _ in 0..100_000 {
        let f = rng.gen_range(0.0..5.0);
        let n = 10f64.powf(rng.gen_range(0.0..6.0)) as u64 + 1;
        let scale = if rng.gen_bool(0.5) { f / n as f64 } else { 3.0 };
        let xi = rng.gen_range(-2.0..2.0) * scale;
        let phi = FrictionPotential::new(f);
        let g = phi.gradient(n, xi);
        let j = phi.resolvent(n, xi);
        branches[(j != 0.0) as usize] += 1;
        if !phi.inclusion_holds(g, j) {
            failures += 1;
        }
    }
    outcomes.push(Outcome {
        id: 7,
        name: "resolvent inclusion",
        pass: failures == 0 && branches[0] > 0 && branches[1] > 0,
        detail: format!(
            "100000 samples ({} in the stick branch, {} in the slip branch), {failures} failures",
            branches[0], branches[1]
        ),
    });

    // 8. locomotion: symmetric gait with equal frictions, then the benchmark
    let sym = PhysicalParams::new(1.0, 1.0, 0.3, 0.3).unwrap();
    let sym_gait = GaitProgram::sinusoid(1.0, 0.25, 2.0 * PI, FRAC_PI_2).unwrap();
    let sym_or = simulate_events(&sym, &sym_gait, &ic, T, &OracleConfig::default()).unwrap();
    let sym_pen = integrate(&sym, &sym_gait, &ic, idx(10_000), T, &cfg).unwrap();
    let d_sym_or = net_displacement_per_period(&sym_or.grid, &sym_or.y, &sym_gait).unwrap();
    let d_sym_pen = net_displacement_per_period(&sym_pen.grid, &sym_pen.y, &sym_gait).unwrap();
    let d_or = net_displacement_per_period(&oracle.grid, &oracle.y, &gait).unwrap();
    let d_pen = net_displacement_per_period(&run_1e4.grid, &run_1e4.y, &gait).unwrap();
    let rel = (d_pen - d_or).abs() / d_or.abs();
    outcomes.push(Outcome {
        id: 8,
        name: "locomotion symmetry",
        pass: d_sym_or.abs() <= 1e-6
            && d_sym_pen.abs() <= 1e-6
            && d_or.abs() > 1e-3
            && d_or.signum() == d_pen.signum()
            && rel <= 0.05,
        detail: format!(
            "f1=f2 drift {d_sym_or:.2e} (events) / {d_sym_pen:.2e} (penalized); benchmark drift {d_or:.6e} vs {d_pen:.6e}, relative gap {rel:.2e}"
        ),
    });

    // 9. frictionless closed form
    let free_gait = GaitProgram::sinusoid(1.0, 0.5, 2.0 * PI, 0.0).unwrap();
    let free_ic = InitialConditions::new(0.2, 0.0).unwrap();
    let tol9 = 10.0 * (cfg.atol + cfg.rtol);
    let l0 = free_gait.eval(0.0).l_dot;
    let exact = |t: f64| 0.2 - (free_gait.eval(t).l_dot - l0) / 2.0;
    let pen = integrate(&free, &free_gait, &free_ic, idx(1000), T, &cfg).unwrap();
    let ev = simulate_events(&free, &free_gait, &free_ic, T, &OracleConfig::default()).unwrap();
    let err = |grid: &[f64], y: &[f64]| {
        grid.iter()
            .zip(y)
            .map(|(&t, &v)| (v - exact(t)).abs())
            .fold(0.0, f64::max)
    };
    let (e_pen, e_ev) = (err(&pen.grid, &pen.y), err(&ev.grid, &ev.y));
    outcomes.push(Outcome {
        id: 9,
        name: "frictionless closed form",
        pass: e_pen <= tol9 && e_ev <= tol9,
        detail: format!("max error penalized {e_pen:.2e}, event-driven {e_ev:.2e}, tolerance {tol9:.2e}"),
    });

    // 10. chain reduction and the generalized bound
    let two = ChainSpec::new(vec![1.0, 1.0], vec![0.1, 0.3], vec![gait.clone()]).unwrap();
    let as_chain = chain_integrate(&two, &ic, &[800, 800], T, &cfg).unwrap();
    let direct = integrate(&params, &gait, &ic, idx(800), T, &cfg).unwrap();
    let identical = as_chain == direct;
    let three = ChainSpec::new(
        vec![1.0, 1.0, 1.0],
        vec![0.1, 0.2, 0.4],
        vec![gait.clone(), gait.clone()],
    )
    .unwrap();
    let chain_runs = chain_schedule(&three, &ic, T, &cfg, 100, 5).unwrap();
    let mut chain_worst: f64 = f64::NEG_INFINITY;
    let mut pass10 = identical;
    for w in chain_runs.windows(2) {
        let bound = cauchy_bound_multi(three.frictions(), &w[0].indices, &w[1].indices, T);
        let sup = sup_difference(&w[0].y, &w[1].y);
        chain_worst = chain_worst.max(sup * sup - bound);
        pass10 &= sup * sup <= bound + 1e-6;
    }
    for run in &chain_runs {
        pass10 &= linear_ok(run).0;
    }
    outcomes.push(Outcome {
        id: 10,
        name: "chain reduction",
        pass: pass10,
        detail: format!(
            "p=2 chain identical to two-body: {identical}; p=3 schedule 100..3200, max(sup² - bound) = {chain_worst:.3e}"
        ),
    });

    for o in &outcomes {
        report(o);
    }
    let total = suite_start.elapsed().as_secs_f64();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    std::io::stderr()
        .write_all(format!("acceptance: {passed}/{} passed in {total:.2}s\n", outcomes.len()).as_bytes())
        .unwrap();
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

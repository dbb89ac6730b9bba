//! Acceptance suite. One PASS/FAIL line per criterion; nonzero exit if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saddle_core::dynamics::{hitting_time, simulate, InvariantReport, SimulationOptions};
use saddle_core::experiment::{compare_instance, ExperimentConfig, GridSpec, InstanceSource};
use saddle_core::lcp::QpOptions;
use saddle_core::limit_process::solve_limit_lcp;
use saddle_core::linalg::symmetric_eigen_range;
use saddle_core::problem::{generate_direct, generate_rejection, Initialization};
use saddle_core::{
    compute_path, convergence_time_s_star, enumerate_fixed_points, solve_lcp, solve_lcp_bruteforce,
    solve_qp_nonneg, ProblemInstance,
};

const INVARIANT_SLACK: f64 = 1e-10;
const SWEEP: [f64; 3] = [1e-6, 1e-12, 1e-20];

type Check = Result<(bool, String), String>;

/// Invariant reports from every simulation run by the suite.
#[derive(Default)]
struct Ledger {
    reports: Vec<(String, InvariantReport)>,
}

impl Ledger {
    fn record(&mut self, label: String, report: InvariantReport) {
        self.reports.push((label, report));
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn separable() -> ProblemInstance {
    ProblemInstance::from_parts(DMatrix::identity(2, 2), DVector::from_vec(vec![2.0, 1.0])).unwrap()
}

/// Gaussian data with n = 5, d = 4, conditioned on the sign assumptions.
fn four_feature_instance() -> Result<ProblemInstance, String> {
    let data = generate_rejection(5, 4, 2024, 10_000_000).map_err(err)?;
    ProblemInstance::from_data(data).map_err(err)
}

/// Exact logistic solution of the decoupled flow with `M = diag(m)`.
fn logistic(m_ii: f64, r_i: f64, theta0: f64, t: f64) -> f64 {
    let target = r_i / m_ii;
    target / (1.0 + (target / theta0 - 1.0) * (-r_i * t).exp())
}

fn criterion_1(ledger: &mut Ledger) -> Check {
    let inst = separable();
    let k = DVector::from_element(2, 1.0);
    let path = compute_path(&inst, &k).map_err(err)?;
    let bp_ok = path.breakpoints.len() == 2
        && (path.breakpoints[0] - 0.5).abs() <= 1e-9
        && (path.breakpoints[1] - 1.0).abs() <= 1e-9
        && (path.s_star - 1.0).abs() <= 1e-9;

    let grid: Vec<f64> = (0..=90)
        .map(|i| 0.6 + 0.01 * i as f64)
        .filter(|&s| s <= 0.9 + 1e-12 || s >= 1.1 - 1e-12)
        .collect();
    let s_max = *grid.last().unwrap();
    let opts = SimulationOptions::default();
    let mut errors = Vec::new();
    let mut closed_form = Vec::new();
    for &eps in &SWEEP {
        let init = Initialization::uniform(2, eps).map_err(err)?;
        let traj = simulate(&inst, &init, s_max, &grid, &opts).map_err(err)?;
        ledger.record(format!("separable eps={eps:e}"), traj.invariant_report());
        let mut sup = 0.0_f64;
        let mut exact_sup = 0.0_f64;
        for p in traj.samples() {
            let star = path.theta_star(p.s).map_err(err)?;
            for i in 0..2 {
                sup = sup.max((p.theta[i] - star[i]).abs());
                let exact = logistic(1.0, inst.r()[i], eps, p.t);
                exact_sup = exact_sup.max((exact - star[i]).abs());
            }
        }
        errors.push(sup);
        closed_form.push(exact_sup);
    }
    let at_12 = errors[1];
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let pass = bp_ok && at_12 <= 0.05 && monotone;
    Ok((
        pass,
        format!(
            "breakpoints={:?} s*={:.12} ok={bp_ok}; sup err at 1e-12 = {at_12:.4e} (tol 5e-2, closed-form {:.4e}); \
             errors over {SWEEP:?} = {} monotone={monotone}",
            path.breakpoints, path.s_star, closed_form[1], sci(&errors)
        ),
    ))
}

fn sweep_config(epsilons: Vec<f64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        InstanceSource::File {
            path: "in-memory".into(),
        },
        epsilons,
    );
    cfg.grid = GridSpec {
        points: 300,
        s_min_factor: 0.1,
        s_max_factor: 1.5,
    };
    cfg
}

fn record_compare(ledger: &mut Ledger, tag: &str, run: &saddle_core::experiment::CompareRun) {
    for row in &run.report.rows {
        ledger.record(format!("{tag} eps={:e}", row.epsilon), row.invariants);
    }
}

fn criterion_2(ledger: &mut Ledger) -> Check {
    let mut lines = Vec::new();
    let mut pass = true;
    for (tag, inst) in [("separable", separable()), ("n5d4", four_feature_instance()?)] {
        let run = compare_instance(&inst, &sweep_config(SWEEP.to_vec())).map_err(err)?;
        record_compare(ledger, tag, &run);
        let errs: Vec<f64> = run.report.rows.iter().map(|r| r.average_sup_error).collect();
        let ok = run.report.average_errors_decreasing == Some(true);
        pass &= ok;
        lines.push(format!("{tag}: {} monotone={ok}", sci(&errs)));
    }
    Ok((pass, lines.join("; ")))
}

fn criterion_3() -> Check {
    let opts = SimulationOptions::default();
    let eps = 1e-20;
    let mut pass = true;
    let mut lines = Vec::new();
    for (d, seed) in [(2usize, 11u64), (3, 12), (4, 13), (5, 14), (5, 15)] {
        let (inst, _) = generate_direct(d, seed, 0.2).map_err(err)?;
        let k = DVector::from_element(d, 1.0);
        let s_star = convergence_time_s_star(&inst, &k).map_err(err)?;
        let target_min = inst.minimizer().map_err(err)?.min();
        let init = Initialization::uniform(d, eps).map_err(err)?;
        let cap = 2.0 * s_star + 1.0;
        let h1 = hitting_time(&inst, &init, 0.1 * target_min, cap, &opts).map_err(err)?;
        let h5 = hitting_time(&inst, &init, 0.5 * target_min, cap, &opts).map_err(err)?;
        let rel_star = (h1.ratio - s_star).abs() / s_star;
        let rel_eta = (h1.ratio - h5.ratio).abs() / h1.ratio;
        let ok = rel_star <= 0.10 && rel_eta <= 0.05;
        pass &= ok;
        lines.push(format!(
            "d={d}: s*={s_star:.4} ratio={:.4} rel={rel_star:.3} eta-rel={rel_eta:.3}",
            h1.ratio
        ));
    }
    Ok((pass, lines.join("; ")))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let qp = QpOptions::default();
    let mut worst = 0.0_f64;
    let mut support_mismatch = 0;
    for _ in 0..200 {
        let d = rng.random_range(1..=8);
        let m = common::random_k_matrix(&mut rng, d);
        let q = common::random_q(&mut rng, d);
        let a = solve_lcp(&q, &m).map_err(err)?;
        let b = solve_lcp_bruteforce(&q, &m).map_err(err)?;
        let c = solve_qp_nonneg(&q, &m, qp).map_err(err)?;
        if a.support != b.support || a.support != c.support() {
            support_mismatch += 1;
        }
        for i in 0..d {
            worst = worst.max((a.z[i] - b.z[i]).abs()).max((a.z[i] - c.theta[i]).abs());
        }
    }
    Ok((
        support_mismatch == 0 && worst <= 1e-8,
        format!("support mismatches={support_mismatch}, max value gap={worst:.2e} (tol 1e-8)"),
    ))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let m = common::random_k_matrix(&mut rng, d);
        let q1 = common::random_q(&mut rng, d);
        let q2 = DVector::from_fn(d, |i, _| q1[i] + rng.random_range(0.0..1.0));
        let z1 = solve_lcp(&q1, &m).map_err(err)?.z;
        let z2 = solve_lcp(&q2, &m).map_err(err)?.z;
        for i in 0..d {
            worst = worst.max(z2[i] - z1[i]);
        }
    }
    Ok((
        worst <= 1e-10,
        format!("max (z2 - z1)_i = {worst:.2e} (must be <= 1e-10)"),
    ))
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_residual = 0.0_f64;
    let mut min_active = f64::INFINITY;
    let mut count_ok = true;
    for _ in 0..50 {
        let d = rng.random_range(1..=6);
        let inst = common::random_instance(&mut rng, d);
        let fps = enumerate_fixed_points(&inst).map_err(err)?;
        count_ok &= fps.len() == 1 << d;
        for fp in &fps {
            worst_residual = worst_residual.max(fp.residual);
            for i in fp.support.iter() {
                min_active = min_active.min(fp.theta[i]);
            }
        }
    }
    Ok((
        count_ok && worst_residual <= 1e-10 && min_active > 0.0,
        format!("all 2^d present={count_ok}, max residual={worst_residual:.2e}, min active coordinate={min_active:.3e}"),
    ))
}

fn criterion_7(ledger: &Ledger) -> Check {
    let mut worst = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0_f64);
    let mut failing = Vec::new();
    for (label, r) in &ledger.reports {
        worst.0 = worst.0.max(r.max_coordinate_decrease);
        worst.1 = worst.1.max(r.max_loss_increase);
        worst.2 = worst.2.max(r.max_region_violation);
        if !r.holds(INVARIANT_SLACK) {
            failing.push(label.clone());
        }
    }
    Ok((
        failing.is_empty() && !ledger.reports.is_empty(),
        format!(
            "{} simulations; worst coordinate decrease={:.2e}, loss increase={:.2e}, region violation={:.2e}; failing={failing:?}",
            ledger.reports.len(),
            worst.0,
            worst.1,
            worst.2
        ),
    ))
}

fn criterion_8(ledger: &mut Ledger) -> Check {
    let inst = four_feature_instance()?;
    let run = compare_instance(&inst, &sweep_config(vec![1e-8, 1e-20])).map_err(err)?;
    record_compare(ledger, "n5d4", &run);
    let rep = &run.report;
    let pass = rep.state_errors_decreasing == Some(true) && rep.loss_errors_decreasing == Some(true);
    let fmt = |f: fn(&saddle_core::experiment::CompareRow) -> f64| {
        rep.rows.iter().map(f).collect::<Vec<_>>()
    };
    Ok((
        pass,
        format!(
            "breakpoints={:.4?}; state errors (1e-8, 1e-20)={}; loss errors={}",
            rep.breakpoints,
            sci(&fmt(|r| r.state_sup_error)),
            sci(&fmt(|r| r.loss_sup_error))
        ),
    ))
}

fn criterion_9() -> Check {
    let shapes = [(3usize, 2usize), (4, 2), (6, 2), (4, 3), (6, 3)];
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    for i in 0..500u64 {
        let (n, d) = shapes[i as usize % shapes.len()];
        let data = generate_rejection(n, d, 9_000 + i, 10_000_000).map_err(err)?;
        let inst = ProblemInstance::from_data(data).map_err(err)?;
        let (lo, _) = symmetric_eigen_range(inst.m());
        worst = worst.min(lo);
        if lo.is_nan() || lo <= 0.0 {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("500 instances, exceptions={bad}, min lambda_min={worst:.3e}")))
}

fn criterion_10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut instances = vec![four_feature_instance()?];
    for d in [3, 5, 8] {
        instances.push(common::random_instance(&mut rng, d));
    }
    let mut worst_z = 0.0_f64;
    let mut worst_s = 0.0_f64;
    for inst in &instances {
        let d = inst.d();
        let k = DVector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
        let path = compute_path(inst, &k).map_err(err)?;
        let s_star = convergence_time_s_star(inst, &k).map_err(err)?;
        let last = path.breakpoints.last().copied().unwrap_or(f64::NAN);
        worst_s = worst_s.max((last - s_star).abs() / s_star);
        for _ in 0..100 {
            let s = rng.random_range(1e-3..1.5) * s_star;
            let z_path = path.z_at(s).map_err(err)?;
            let z_lcp = solve_limit_lcp(inst, &k, s).map_err(err)?.z_vec();
            worst_z = worst_z.max((z_path - z_lcp).amax());
        }
    }
    Ok((
        worst_z <= 1e-9 && worst_s <= 1e-9,
        format!("max |z_path - z_lcp|={worst_z:.2e}, max rel |s_q - s*|={worst_s:.2e}"),
    ))
}

fn main() -> ExitCode {
    let mut ledger = Ledger::default();
    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    macro_rules! run {
        ($id:expr, $name:expr, $e:expr) => {{
            let t = Instant::now();
            let r = $e;
            results.push(($id, $name, r, t.elapsed().as_secs_f64()));
        }};
    }
    run!(1, "separable oracle", criterion_1(&mut ledger));
    run!(2, "running average vs regularization path", criterion_2(&mut ledger));
    run!(3, "hitting time ratio", criterion_3());
    run!(4, "LCP route equivalence", criterion_4());
    run!(5, "LCP antitonicity", criterion_5());
    run!(6, "fixed point enumeration", criterion_6());
    run!(8, "staircase sharpening (n=5, d=4)", criterion_8(&mut ledger));
    run!(7, "dynamics invariants", criterion_7(&ledger));
    run!(9, "positive definiteness under sign assumptions", criterion_9());
    run!(10, "path consistency", criterion_10());
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, result, secs) in &results {
        let (pass, detail) = match result {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} [{}] {name} ({secs:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

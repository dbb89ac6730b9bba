use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::output::{epsilon_tag, indexed, write_json, CsvTable};
use super::{strictly_decreasing, ExperimentConfig, ExperimentError, Result};
use crate::dynamics::{hitting_time, simulate, DynamicsError, InvariantReport};
use crate::limit_process::{compute_path, LimitPath};
use crate::problem::ProblemInstance;

/// One grid point of a simulated-vs-limit profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSample {
    pub s: f64,
    /// Within the exclusion radius of a breakpoint.
    pub excluded: bool,
    pub theta: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub loss: f64,
    pub loss_star: f64,
    pub average: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareProfile {
    pub epsilon: f64,
    pub samples: Vec<ProfileSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub epsilon: f64,
    pub log_inv_epsilon: f64,
    /// `sup ‖θ(s) − θ*^(I(s))‖∞` over non-excluded grid points.
    pub state_sup_error: f64,
    /// `sup |f(θ(s)) − f(θ*^(I(s)))|` over non-excluded grid points.
    pub loss_sup_error: f64,
    /// `sup ‖avg(s) − μ(s)‖∞` over all grid points with `s > 0`.
    pub average_sup_error: f64,
    pub grid_points: usize,
    pub excluded_points: usize,
    /// `τ_η / log(1/ε)`, `None` if the ball was not reached.
    pub hitting_ratio: Option<f64>,
    pub hitting_relative_error: Option<f64>,
    pub invariants: InvariantReport,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub d: usize,
    pub s_star: f64,
    pub breakpoints: Vec<f64>,
    pub exclusion_radius: f64,
    pub excluded_windows: Vec<(f64, f64)>,
    pub eta: f64,
    /// Sorted by decreasing ε.
    pub rows: Vec<CompareRow>,
    pub state_errors_decreasing: Option<bool>,
    pub loss_errors_decreasing: Option<bool>,
    pub average_errors_decreasing: Option<bool>,
    pub hitting_errors_decreasing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRun {
    pub report: ComparisonReport,
    pub path: LimitPath,
    pub profiles: Vec<CompareProfile>,
}

fn sup_inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Context<'a> {
    instance: &'a ProblemInstance,
    config: &'a ExperimentConfig,
    path: &'a LimitPath,
    grid: &'a [f64],
    radius: f64,
    eta: f64,
}

fn compare_one(ctx: &Context<'_>, epsilon: f64) -> Result<(CompareRow, CompareProfile)> {
    let instance = ctx.instance;
    let d = instance.d();
    let init = ctx.config.initialization(d, epsilon)?;
    let options = ctx.config.simulation_options();
    let s_max = *ctx.grid.last().expect("validated grid is nonempty");
    let traj = simulate(instance, &init, s_max, ctx.grid, &options)?;

    let mut state = 0.0_f64;
    let mut loss_err = 0.0_f64;
    let mut avg = 0.0_f64;
    let mut excluded_points = 0;
    let mut samples = Vec::with_capacity(ctx.grid.len());
    for p in traj.samples().iter().filter(|p| p.s > 0.0) {
        let seg = ctx.path.segment_at(p.s)?;
        let theta_star = &seg.fixed_point.theta;
        let mu: Vec<f64> = seg.z_at(p.s).iter().map(|z| z / p.s).collect();
        let loss = instance.loss(&p.theta_vec())?.value;
        let loss_star = instance.loss(&DVector::from_column_slice(theta_star))?.value;
        let average = p.average();
        let excluded = ctx.path.distance_to_breakpoint(p.s) < ctx.radius;
        if excluded {
            excluded_points += 1;
        } else {
            state = state.max(sup_inf_norm_diff(&p.theta, theta_star));
            loss_err = loss_err.max((loss - loss_star).abs());
        }
        avg = avg.max(sup_inf_norm_diff(&average, &mu));
        samples.push(ProfileSample {
            s: p.s,
            excluded,
            theta: p.theta.clone(),
            theta_star: theta_star.clone(),
            loss,
            loss_star,
            average,
            mu,
        });
    }

    let s_cap = 2.0 * ctx.path.s_star + 1.0;
    let (hitting_ratio, hitting_relative_error) = match hitting_time(instance, &init, ctx.eta, s_cap, &options) {
        Ok(h) => (
            Some(h.ratio),
            Some((h.ratio - ctx.path.s_star).abs() / ctx.path.s_star),
        ),
        Err(DynamicsError::NotReached { .. }) => (None, None),
        Err(e) => return Err(e.into()),
    };

    let row = CompareRow {
        epsilon,
        log_inv_epsilon: init.log_inv_epsilon(),
        state_sup_error: state,
        loss_sup_error: loss_err,
        average_sup_error: avg,
        grid_points: samples.len(),
        excluded_points,
        hitting_ratio,
        hitting_relative_error,
        invariants: traj.invariant_report(),
        accepted_steps: traj.stats().accepted,
        rejected_steps: traj.stats().rejected,
    };
    Ok((row, CompareProfile { epsilon, samples }))
}

fn assemble(
    d: usize,
    path: &LimitPath,
    radius: f64,
    eta: f64,
    rows: Vec<CompareRow>,
) -> ComparisonReport {
    let col = |f: fn(&CompareRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let hitting: Option<Vec<f64>> = rows.iter().map(|r| r.hitting_relative_error).collect();
    ComparisonReport {
        d,
        s_star: path.s_star,
        breakpoints: path.breakpoints.clone(),
        exclusion_radius: radius,
        excluded_windows: path.breakpoints.iter().map(|&b| (b - radius, b + radius)).collect(),
        eta,
        state_errors_decreasing: strictly_decreasing(&col(|r| r.state_sup_error)),
        loss_errors_decreasing: strictly_decreasing(&col(|r| r.loss_sup_error)),
        average_errors_decreasing: strictly_decreasing(&col(|r| r.average_sup_error)),
        hitting_errors_decreasing: hitting.and_then(|h| strictly_decreasing(&h)),
        rows,
    }
}

/// Simulates every ε in the config on the given instance and compares against the limit path.
///
/// On failure of any ε the rows that did complete are returned inside
/// [`ExperimentError::Partial`].
pub fn compare_instance(instance: &ProblemInstance, config: &ExperimentConfig) -> Result<CompareRun> {
    config.validate()?;
    let d = instance.d();
    let k = config.k_vector(d)?;
    let path = compute_path(instance, &k)?;
    let grid = config.grid.grid(path.s_star);
    let target = instance.minimizer()?;
    let ctx = Context {
        instance,
        config,
        path: &path,
        grid: &grid,
        radius: config.exclusion_fraction * path.s_star,
        eta: config.eta_fraction * target.min(),
    };
    let epsilons = config.sorted_epsilons();
    let results: Vec<_> = epsilons.par_iter().map(|&e| compare_one(&ctx, e)).collect();

    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok((row, profile)) => {
                rows.push(row);
                profiles.push(profile);
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let report = assemble(d, &path, ctx.radius, ctx.eta, rows);
    if let Some(source) = failure {
        return Err(ExperimentError::Partial {
            completed: Box::new(report),
            source: Box::new(source),
        });
    }
    Ok(CompareRun {
        report,
        path,
        profiles,
    })
}

/// Loads the configured instance and runs [`compare_instance`].
pub fn run_compare(config: &ExperimentConfig) -> Result<CompareRun> {
    let loaded = config.instance.load()?;
    compare_instance(&loaded.instance, config)
}

impl ComparisonReport {
    pub fn rows_table(&self) -> CsvTable {
        let header = [
            "epsilon",
            "log_inv_epsilon",
            "state_sup_error",
            "loss_sup_error",
            "average_sup_error",
            "hitting_reached",
            "hitting_ratio",
            "hitting_relative_error",
            "max_coordinate_decrease",
            "max_loss_increase",
        ]
        .map(String::from)
        .to_vec();
        let mut t = CsvTable::new("compare", header);
        for r in &self.rows {
            t.push(vec![
                r.epsilon,
                r.log_inv_epsilon,
                r.state_sup_error,
                r.loss_sup_error,
                r.average_sup_error,
                if r.hitting_ratio.is_some() { 1.0 } else { 0.0 },
                r.hitting_ratio.unwrap_or(0.0),
                r.hitting_relative_error.unwrap_or(0.0),
                r.invariants.max_coordinate_decrease,
                r.invariants.max_loss_increase,
            ]);
        }
        t
    }

    /// Writes `compare.json` and `compare.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let json = dir.join("compare.json");
        let csv = dir.join("compare.csv");
        write_json(&json, self)?;
        self.rows_table().write(&csv)?;
        Ok(vec![json, csv])
    }
}

impl CompareProfile {
    pub fn table(&self) -> CsvTable {
        let d = self.samples.first().map_or(0, |p| p.theta.len());
        let header = ["s".to_string(), "excluded".to_string()]
            .into_iter()
            .chain(indexed("theta", d))
            .chain(indexed("theta_star", d))
            .chain(["loss".to_string(), "loss_star".to_string()])
            .chain(indexed("avg", d))
            .chain(indexed("mu", d))
            .collect();
        let mut t = CsvTable::new("profile", header);
        for p in &self.samples {
            let mut row = vec![p.s, if p.excluded { 1.0 } else { 0.0 }];
            row.extend_from_slice(&p.theta);
            row.extend_from_slice(&p.theta_star);
            row.push(p.loss);
            row.push(p.loss_star);
            row.extend_from_slice(&p.average);
            row.extend_from_slice(&p.mu);
            t.push(row);
        }
        t
    }
}

impl CompareRun {
    /// Report files plus one `profile_eps_<ε>.csv` per ε.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = self.report.write(dir)?;
        for p in &self.profiles {
            let path = dir.join(format!("profile_eps_{}.csv", epsilon_tag(p.epsilon)));
            p.table().write(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}

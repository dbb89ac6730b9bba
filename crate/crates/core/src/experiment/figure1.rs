use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use super::output::{epsilon_tag, trajectory_table, write_json, CsvTable};
use super::{ExperimentConfig, ExperimentError, Result};
use crate::dynamics::{simulate, uniform_grid};
use crate::fixed_points::{enumerate_fixed_points, vector_field};
use crate::limit_process::convergence_time_s_star;
use crate::problem::ProblemInstance;

/// Side length of the vector-field lattice.
pub const FIELD_RESOLUTION: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Output {
    pub s_star: f64,
    pub vector_field: PathBuf,
    pub fixed_points: PathBuf,
    pub trajectories: Vec<PathBuf>,
    pub epsilons: Vec<f64>,
    /// `‖θ(2 s*) − M⁻¹r‖₂` per ε.
    pub final_distances: Vec<f64>,
}

/// Vector field, the four fixed points and one trajectory per ε, for `d = 2` only.
pub fn run_figure1(instance: &ProblemInstance, config: &ExperimentConfig, dir: &Path) -> Result<Figure1Output> {
    config.validate()?;
    let d = instance.d();
    if d != 2 {
        return Err(ExperimentError::DimensionMismatch { expected: 2, found: d });
    }
    let fps = enumerate_fixed_points(instance)?;
    let target = instance.minimizer()?;

    let mut bounds = [0.0_f64; 2];
    for fp in &fps {
        for (b, t) in bounds.iter_mut().zip(&fp.theta) {
            *b = b.max(*t);
        }
    }
    let mut field = CsvTable::new(
        "vector_field",
        ["theta_1", "theta_2", "dtheta_1", "dtheta_2"].map(String::from).to_vec(),
    );
    let n = FIELD_RESOLUTION;
    for i in 0..n {
        for j in 0..n {
            let p = DVector::from_vec(vec![
                1.25 * bounds[0] * i as f64 / (n - 1) as f64,
                1.25 * bounds[1] * j as f64 / (n - 1) as f64,
            ]);
            let v = vector_field(instance, &p);
            field.push(vec![p[0], p[1], v[0], v[1]]);
        }
    }
    let field_path = dir.join("vector_field.csv");
    field.write(&field_path)?;

    let mut fixed = CsvTable::new(
        "fixed_points",
        ["support_size", "in_1", "in_2", "theta_1", "theta_2", "is_minimizer"]
            .map(String::from)
            .to_vec(),
    );
    for fp in &fps {
        let flag = |i| if fp.support.contains(i) { 1.0 } else { 0.0 };
        fixed.push(vec![
            fp.support.len() as f64,
            flag(0),
            flag(1),
            fp.theta[0],
            fp.theta[1],
            if fp.support.len() == d { 1.0 } else { 0.0 },
        ]);
    }
    let fixed_path = dir.join("fixed_points.csv");
    fixed.write(&fixed_path)?;

    let k = config.k_vector(d)?;
    let s_star = convergence_time_s_star(instance, &k)?;
    let s_max = 2.0 * s_star;
    let grid = uniform_grid(s_max, config.grid.points.max(2));
    let options = config.simulation_options();
    let epsilons = config.sorted_epsilons();
    let mut trajectories = Vec::new();
    let mut final_distances = Vec::new();
    for &eps in &epsilons {
        let init = config.initialization(d, eps)?;
        let traj = simulate(instance, &init, s_max, &grid, &options)?;
        let path = dir.join(format!("trajectory_eps_{}.csv", epsilon_tag(eps)));
        trajectory_table(&traj)?.write(&path)?;
        trajectories.push(path);
        let last = traj.samples().last().expect("grid is nonempty");
        final_distances.push((last.theta_vec() - &target).norm());
    }
    let out = Figure1Output {
        s_star,
        vector_field: field_path,
        fixed_points: fixed_path,
        trajectories,
        epsilons,
        final_distances,
    };
    write_json(&dir.join("figure1.json"), &out)?;
    Ok(out)
}

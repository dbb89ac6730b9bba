use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::output::{write_json, CsvTable};
use super::{strictly_decreasing, ExperimentConfig, Result};
use crate::dynamics::{hitting_time, DynamicsError};
use crate::limit_process::convergence_time_s_star;
use crate::problem::ProblemInstance;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingRow {
    pub epsilon: f64,
    pub log_inv_epsilon: f64,
    pub reached: bool,
    pub tau: Option<f64>,
    /// `τ_η / log(1/ε)`.
    pub ratio: Option<f64>,
    /// `|ratio − s*| / s*`.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingTable {
    pub s_star: f64,
    pub eta: f64,
    pub eta_fraction: f64,
    pub s_cap: f64,
    /// Sorted by decreasing ε.
    pub rows: Vec<HittingRow>,
    pub relative_errors_decreasing: Option<bool>,
}

/// Hitting time of the `η`-ball around `M⁻¹r` for every configured ε.
pub fn hitting_instance(instance: &ProblemInstance, config: &ExperimentConfig) -> Result<HittingTable> {
    config.validate()?;
    let d = instance.d();
    let k = config.k_vector(d)?;
    let s_star = convergence_time_s_star(instance, &k)?;
    let eta = config.eta_fraction * instance.minimizer()?.min();
    let s_cap = config.grid.s_max_factor.max(2.0) * s_star + 1.0;
    let options = config.simulation_options();
    let rows = config
        .sorted_epsilons()
        .par_iter()
        .map(|&epsilon| -> Result<HittingRow> {
            let init = config.initialization(d, epsilon)?;
            let log_inv_epsilon = init.log_inv_epsilon();
            match hitting_time(instance, &init, eta, s_cap, &options) {
                Ok(h) => Ok(HittingRow {
                    epsilon,
                    log_inv_epsilon,
                    reached: true,
                    tau: Some(h.tau),
                    ratio: Some(h.ratio),
                    relative_error: Some((h.ratio - s_star).abs() / s_star),
                }),
                Err(DynamicsError::NotReached { .. }) => Ok(HittingRow {
                    epsilon,
                    log_inv_epsilon,
                    reached: false,
                    tau: None,
                    ratio: None,
                    relative_error: None,
                }),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let errors: Option<Vec<f64>> = rows.iter().map(|r| r.relative_error).collect();
    Ok(HittingTable {
        s_star,
        eta,
        eta_fraction: config.eta_fraction,
        s_cap,
        relative_errors_decreasing: errors.and_then(|e| strictly_decreasing(&e)),
        rows,
    })
}

pub fn run_hitting(config: &ExperimentConfig) -> Result<HittingTable> {
    let loaded = config.instance.load()?;
    hitting_instance(&loaded.instance, config)
}

impl HittingTable {
    pub fn table(&self) -> CsvTable {
        let header = ["epsilon", "log_inv_epsilon", "reached", "tau", "ratio", "s_star", "relative_error"]
            .map(String::from)
            .to_vec();
        let mut t = CsvTable::new("hitting_time", header);
        for r in &self.rows {
            t.push(vec![
                r.epsilon,
                r.log_inv_epsilon,
                if r.reached { 1.0 } else { 0.0 },
                r.tau.unwrap_or(0.0),
                r.ratio.unwrap_or(0.0),
                self.s_star,
                r.relative_error.unwrap_or(0.0),
            ]);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("hitting_time.json"), self)?;
        self.table().write(&dir.join("hitting_time.csv"))
    }
}

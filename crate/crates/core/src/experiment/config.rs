use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::dynamics::SimulationOptions;
use crate::problem::{
    generate_direct, generate_rejection, Initialization, InstanceFile, InstanceMeta, ProblemInstance,
};

fn default_max_attempts() -> u64 {
    10_000_000
}

/// Where the instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    File {
        path: PathBuf,
    },
    Rejection {
        n: usize,
        d: usize,
        seed: u64,
        #[serde(default = "default_max_attempts")]
        max_attempts: u64,
    },
    Direct {
        d: usize,
        seed: u64,
        offdiag_scale: f64,
    },
}

/// Sample grid on `[s_min_factor · s*, s_max_factor · s*]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub points: usize,
    pub s_min_factor: f64,
    pub s_max_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 400,
            s_min_factor: 0.1,
            s_max_factor: 1.5,
        }
    }
}

impl GridSpec {
    pub fn grid(&self, s_star: f64) -> Vec<f64> {
        let lo = self.s_min_factor * s_star;
        let hi = self.s_max_factor * s_star;
        match self.points {
            0 => Vec::new(),
            1 => vec![hi],
            n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

fn default_tol() -> f64 {
    1e-9
}

fn default_exclusion() -> f64 {
    0.05
}

fn default_eta_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub epsilons: Vec<f64>,
    /// Defaults to all ones.
    #[serde(default, rename = "C", alias = "c")]
    pub c: Option<Vec<f64>>,
    /// Defaults to all ones.
    #[serde(default)]
    pub k: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Breakpoint exclusion radius as a fraction of `s*`.
    #[serde(default = "default_exclusion")]
    pub exclusion_fraction: f64,
    /// `η = eta_fraction · min_j (M⁻¹r)_j`.
    #[serde(default = "default_eta_fraction")]
    pub eta_fraction: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A resolved instance with the metadata to serialize it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedInstance {
    pub instance: ProblemInstance,
    pub meta: InstanceMeta,
}

impl InstanceSource {
    pub fn load(&self) -> Result<LoadedInstance> {
        match self {
            InstanceSource::File { path } => {
                let file = read_instance_file(path)?;
                Ok(LoadedInstance {
                    instance: file.to_instance()?,
                    meta: file.meta,
                })
            }
            &InstanceSource::Rejection {
                n,
                d,
                seed,
                max_attempts,
            } => {
                let data = generate_rejection(n, d, seed, max_attempts)?;
                Ok(LoadedInstance {
                    instance: ProblemInstance::from_data(data)?,
                    meta: InstanceMeta {
                        seed: Some(seed),
                        generator: "rejection".into(),
                        n: Some(n),
                        d,
                    },
                })
            }
            &InstanceSource::Direct {
                d,
                seed,
                offdiag_scale,
            } => {
                let (instance, _) = generate_direct(d, seed, offdiag_scale)?;
                Ok(LoadedInstance {
                    instance,
                    meta: InstanceMeta {
                        seed: Some(seed),
                        generator: "direct".into(),
                        n: Some(d),
                        d,
                    },
                })
            }
        }
    }
}

pub fn read_instance_file(path: &Path) -> Result<InstanceFile> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl ExperimentConfig {
    /// Minimal config: unit `C` and `k`, default grid and tolerances.
    pub fn new(instance: InstanceSource, epsilons: Vec<f64>) -> Self {
        ExperimentConfig {
            instance,
            epsilons,
            c: None,
            k: None,
            grid: GridSpec::default(),
            tol: default_tol(),
            exclusion_fraction: default_exclusion(),
            eta_fraction: default_eta_fraction(),
            output_dir: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(ExperimentError::Config("epsilon list is empty".into()));
        }
        for (i, &e) in self.epsilons.iter().enumerate() {
            if !(e > 0.0 && e < 1.0) {
                return Err(ExperimentError::Config(format!("epsilon {e} not in (0, 1)")));
            }
            if self.epsilons[..i].contains(&e) {
                return Err(ExperimentError::Config(format!("epsilon {e} listed twice")));
            }
        }
        if self.grid.points == 0 {
            return Err(ExperimentError::Config("grid must have at least one point".into()));
        }
        if !(self.grid.s_min_factor >= 0.0 && self.grid.s_max_factor > self.grid.s_min_factor) {
            return Err(ExperimentError::Config(
                "grid needs 0 <= s_min_factor < s_max_factor".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(ExperimentError::Config("tol must be positive".into()));
        }
        if !(self.exclusion_fraction >= 0.0) {
            return Err(ExperimentError::Config("exclusion_fraction must be nonnegative".into()));
        }
        if !(self.eta_fraction > 0.0 && self.eta_fraction < 1.0) {
            return Err(ExperimentError::Config("eta_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn vector_or_ones(v: &Option<Vec<f64>>, d: usize, name: &str) -> Result<DVector<f64>> {
        match v {
            None => Ok(DVector::from_element(d, 1.0)),
            Some(v) if v.len() == d => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(ExperimentError::Config(format!(
                "{name} has length {}, instance dimension is {d}",
                v.len()
            ))),
        }
    }

    pub fn k_vector(&self, d: usize) -> Result<DVector<f64>> {
        Self::vector_or_ones(&self.k, d, "k")
    }

    pub fn c_vector(&self, d: usize) -> Result<DVector<f64>> {
        Self::vector_or_ones(&self.c, d, "C")
    }

    pub fn initialization(&self, d: usize, epsilon: f64) -> Result<Initialization> {
        Ok(Initialization::new(self.c_vector(d)?, self.k_vector(d)?, epsilon)?)
    }

    pub fn simulation_options(&self) -> SimulationOptions {
        SimulationOptions::with_tol(self.tol)
    }

    /// Epsilons sorted in decreasing order.
    pub fn sorted_epsilons(&self) -> Vec<f64> {
        let mut eps = self.epsilons.clone();
        eps.sort_by(|a, b| b.total_cmp(a));
        eps
    }
}

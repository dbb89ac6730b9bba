//! CSV/JSON writers. Every file is written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{ExperimentError, Result};
use crate::dynamics::Trajectory;
use crate::limit_process::LimitPath;

pub const SCHEMA_VERSION: u32 = 1;

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(name: impl Into<String>, header: Vec<String>) -> Self {
        CsvTable {
            name: name.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Serialized bytes, led by a `# schema:` comment line. Fails on any non-finite cell.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "# schema: {} v{}", self.name, SCHEMA_VERSION).expect("write to Vec");
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(&self.header)?;
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(ExperimentError::NonFiniteOutput(format!(
                    "{}: row {i}, column {}",
                    self.name, self.header[j]
                )));
            }
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.into_inner()
            .map_err(|e| ExperimentError::NonFiniteOutput(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| ExperimentError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| ExperimentError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| ExperimentError::io(path, e))?;
    tmp.persist(path).map_err(|e| ExperimentError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn indexed(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}_{i}"))
}

/// Columns `s, t, theta_1..d, w_1..d, loss, avg_1..d` over the trajectory samples.
pub fn trajectory_table(trajectory: &Trajectory) -> Result<CsvTable> {
    let d = trajectory.instance().d();
    let header = ["s".to_string(), "t".to_string()]
        .into_iter()
        .chain(indexed("theta", d))
        .chain(indexed("w", d))
        .chain(std::iter::once("loss".to_string()))
        .chain(indexed("avg", d))
        .collect();
    let mut table = CsvTable::new("trajectory", header);
    for p in trajectory.samples() {
        let loss = trajectory.instance().loss(&p.theta_vec())?.value;
        let mut row = Vec::with_capacity(3 * d + 3);
        row.push(p.s);
        row.push(p.t);
        row.extend_from_slice(&p.theta);
        row.extend_from_slice(&p.w);
        row.push(loss);
        row.extend(p.average());
        table.push(row);
    }
    Ok(table)
}

/// Columns `s, mu_1..d, theta_star_1..d`; `theta_star` takes the right-continuous value.
pub fn limit_path_table(path: &LimitPath, grid: &[f64]) -> Result<CsvTable> {
    let d = path.k.len();
    let header = std::iter::once("s".to_string())
        .chain(indexed("mu", d))
        .chain(indexed("theta_star", d))
        .collect();
    let mut table = CsvTable::new("limit_path", header);
    for &s in grid.iter().filter(|&&s| s > 0.0) {
        let seg = path.segment_at(s)?;
        let mut row = Vec::with_capacity(2 * d + 1);
        row.push(s);
        row.extend(seg.z_at(s).iter().map(|z| z / s));
        row.extend_from_slice(&seg.fixed_point.theta);
        table.push(row);
    }
    Ok(table)
}

/// Stable file-name fragment for an ε value, e.g. `1e-8`.
pub fn epsilon_tag(epsilon: f64) -> String {
    format!("{epsilon:e}")
}

//! Named field sets stored with each run, and run-to-run comparison.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use phasefield::field::{Field, Grid};
use phasefield::train::{mse_values, r2_values};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentId;
use crate::error::CliError;

pub const FIELDS_FILE: &str = "fields.json";

/// Rows of nodal values keyed by set name (`prediction`, `oracle`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSets {
    pub experiment: ExperimentId,
    pub grid: Grid,
    pub sets: BTreeMap<String, Vec<Vec<f64>>>,
}

impl FieldSets {
    pub fn new(experiment: ExperimentId, grid: Grid) -> Self {
        Self {
            experiment,
            grid,
            sets: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, fields: &[Field]) {
        self.sets.insert(
            name.to_string(),
            fields.iter().map(|f| f.values().to_vec()).collect(),
        );
    }

    pub fn insert_rows(&mut self, name: &str, rows: &ndarray::Array2<f64>) {
        self.sets.insert(
            name.to_string(),
            rows.rows().into_iter().map(|r| r.to_vec()).collect(),
        );
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join(FIELDS_FILE), serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(FIELDS_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    fn set(&self, name: &str) -> Result<&Vec<Vec<f64>>, CliError> {
        self.sets.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.sets.keys().map(String::as_str).collect();
            CliError::Validation(format!(
                "no field set `{name}` (available: {})",
                known.join(", ")
            ))
        })
    }

    /// Tidy CSV: `set,sample,node,x[,y],value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let pts = self.grid.points();
        let coords = if self.grid.dim() == 1 { "x" } else { "x,y" };
        writeln!(w, "set,sample,node,{coords},value")?;
        for (name, rows) in &self.sets {
            for (s, row) in rows.iter().enumerate() {
                for (i, v) in row.iter().enumerate() {
                    let c: Vec<String> = pts[i].iter().map(|x| x.to_string()).collect();
                    writeln!(w, "{name},{s},{i},{},{v}", c.join(","))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub samples: usize,
    pub mse: f64,
    /// `None` when the reference set has zero variance.
    pub r2: Option<f64>,
    pub max_error: f64,
}

/// Compares set `set_a` of run `a` (prediction) against `set_b` of run `b`
/// (reference).
pub fn compare(a: &Path, set_a: &str, b: &Path, set_b: &str) -> Result<CompareReport, CliError> {
    let fa = FieldSets::load(a)?;
    let fb = FieldSets::load(b)?;
    if fa.experiment != fb.experiment {
        return Err(CliError::Validation(format!(
            "runs come from different experiments ({} vs {})",
            fa.experiment.as_str(),
            fb.experiment.as_str()
        )));
    }
    if fa.grid != fb.grid {
        return Err(CliError::Validation("runs use different grids".into()));
    }
    let (ra, rb) = (fa.set(set_a)?, fb.set(set_b)?);
    if ra.len() != rb.len() || ra.iter().zip(rb).any(|(x, y)| x.len() != y.len()) {
        return Err(CliError::Validation(format!(
            "field sets differ in shape ({} vs {} rows)",
            ra.len(),
            rb.len()
        )));
    }
    let pa: Vec<f64> = ra.iter().flatten().copied().collect();
    let pb: Vec<f64> = rb.iter().flatten().copied().collect();
    let max_error = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(CompareReport {
        samples: ra.len(),
        mse: mse_values(&pa, &pb),
        r2: r2_values(&pa, &pb).ok(),
        max_error,
    })
}

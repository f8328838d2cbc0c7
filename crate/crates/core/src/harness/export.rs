use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pca::{pca_project, Pca};
use super::train::write_json;
use crate::error::{Error, Result};
use crate::lasas::MeanShiftTable;
use crate::model::{AccentModel, PreparedUtterance};
use crate::numerics::Matrix;
use crate::tokenizer::SubwordInventory;

pub const CENTROIDS_FILE: &str = "shift_centroids.csv";
pub const PROJECTION_FILE: &str = "shift_pca.csv";
pub const EXPORT_META_FILE: &str = "shift_export.json";

/// Per-(subword, accent) mean shifts and their 2-D projection, row-aligned.
#[derive(Clone, Debug)]
pub struct ShiftExport {
    pub table: MeanShiftTable,
    pub pca: Pca,
}

impl ShiftExport {
    pub fn compute(model: &AccentModel, dataset: &[PreparedUtterance]) -> Result<Self> {
        let table = model.export_mean_shift(dataset)?;
        let rows: Vec<&[f64]> = table.entries.values().map(|c| c.mean.as_slice()).collect();
        let x = Matrix::from_rows(&rows)?;
        let pca = pca_project(&x, 2.min(table.spaces))?;
        Ok(ShiftExport { table, pca })
    }

    /// `subword,accent,s1..sN`
    pub fn centroids_csv(&self, inventory: &SubwordInventory) -> String {
        let mut out = String::from("subword,accent");
        for i in 1..=self.table.spaces {
            write!(out, ",s{i}").unwrap();
        }
        out.push('\n');
        for (&(s, accent), c) in &self.table.entries {
            write!(out, "{},{accent}", inventory.symbol(s).unwrap_or("?")).unwrap();
            for v in &c.mean {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `subword,accent,x,y`
    pub fn projection_csv(&self, inventory: &SubwordInventory) -> String {
        let mut out = String::from("subword,accent,x,y\n");
        for (r, &(s, accent)) in self.table.entries.keys().enumerate() {
            let c = &self.pca.coordinates;
            let y = if c.cols() > 1 { c.get(r, 1) } else { 0.0 };
            writeln!(out, "{},{accent},{},{y}", inventory.symbol(s).unwrap_or("?"), c.get(r, 0)).unwrap();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportMeta {
    pub seed: u64,
    pub rows: usize,
    pub spaces: usize,
    pub eigenvalues: Vec<f64>,
    pub centroids: String,
    pub projection: String,
}

/// Writes both CSV files plus a small JSON sidecar into `out_dir` and
/// returns the sidecar path.
pub fn export_shift_viz(
    model: &AccentModel,
    dataset: &[PreparedUtterance],
    inventory: &SubwordInventory,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf> {
    let export = ShiftExport::compute(model, dataset)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write(CENTROIDS_FILE, export.centroids_csv(inventory))?;
    write(PROJECTION_FILE, export.projection_csv(inventory))?;
    let meta = ExportMeta {
        seed,
        rows: export.table.entries.len(),
        spaces: export.table.spaces,
        eigenvalues: export.pca.eigenvalues.clone(),
        centroids: CENTROIDS_FILE.into(),
        projection: PROJECTION_FILE.into(),
    };
    let path = out_dir.join(EXPORT_META_FILE);
    write_json(&path, &meta)?;
    Ok(path)
}

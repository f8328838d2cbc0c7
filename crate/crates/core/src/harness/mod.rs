//! Experiment plumbing: configs, training runs, evaluation, ablations,
//! checkpoints, shift export and gradient checks.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod export;
pub mod gradcheck;
pub mod pca;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablate::{ablate, ablate_with, axis_settings, AblationRow, AblationTable, Axis};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FILE};
pub use config::{Corruption, ExperimentConfig, OptimizerConfig};
pub use export::{export_shift_viz, ShiftExport};
pub use gradcheck::{gradcheck, GradcheckSummary, GRADCHECK_THRESHOLD};
pub use pca::{covariance, pca_project, Pca};
pub use train::{train, train_on, write_run, CorpusData, EpochRecord, RunReport, TrainOutcome, REPORT_FILE};

use crate::error::Result;
use crate::synthgen::Split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub variant: crate::arhead::SystemVariant,
    pub eval_corruption: f64,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
}

/// Scores a saved checkpoint on the dev and test splits named by `cfg`,
/// with text corrupted at `cfg.corruption.eval`.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    cfg.validate_files()?;
    let data = CorpusData::load(&cfg.manifest)?;
    let (model, seed) = load_checkpoint(checkpoint)?;
    let p = cfg.corruption.eval;
    Ok(EvalReport {
        seed,
        variant: model.variant(),
        eval_corruption: p,
        dev_accuracy: model.evaluate(&data.prepare_split(Split::Dev, p, seed)?)?,
        test_accuracy: model.evaluate(&data.prepare_split(Split::Test, p, seed)?)?,
    })
}

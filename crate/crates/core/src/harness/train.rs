use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, CHECKPOINT_FILE};
use super::config::{Corruption, ExperimentConfig};
use crate::error::{Error, Result};
use crate::model::{prepare, AccentModel, PreparedUtterance};
use crate::numerics::{Adam, Tape};
use crate::synthgen::{derive_seed, read_jsonl, Corpus, Manifest, Split, UtteranceSample};
use crate::tokenizer::SubwordInventory;

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

// seed stream tags
const TAG_INIT: u64 = 101;
const TAG_SHUFFLE: u64 = 102;
const TAG_CORRUPT_TRAIN: u64 = 103;
const TAG_CORRUPT_DEV: u64 = 104;
const TAG_CORRUPT_TEST: u64 = 105;

/// Raw utterances of all three splits plus what is needed to encode their text.
#[derive(Clone, Debug)]
pub struct CorpusData {
    pub inventory: SubwordInventory,
    pub num_accents: usize,
    pub feat_dim: usize,
    pub train: Vec<UtteranceSample>,
    pub dev: Vec<UtteranceSample>,
    pub test: Vec<UtteranceSample>,
}

impl CorpusData {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        CorpusData {
            inventory: corpus.world.inventory.clone(),
            num_accents: corpus.world.config.num_accents,
            feat_dim: corpus.world.config.feat_dim,
            train: corpus.train.clone(),
            dev: corpus.dev.clone(),
            test: corpus.test.clone(),
        }
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let inventory = SubwordInventory::load(&Manifest::resolve(manifest_path, &manifest.inventory))?;
        let split = |s: Split| -> Result<Vec<UtteranceSample>> {
            let name = manifest
                .splits
                .get(&s)
                .ok_or_else(|| Error::Config(format!("manifest lists no {s} split")))?;
            read_jsonl(&Manifest::resolve(manifest_path, name))
        };
        Ok(CorpusData {
            inventory,
            num_accents: manifest.config.num_accents,
            feat_dim: manifest.config.feat_dim,
            train: split(Split::Train)?,
            dev: split(Split::Dev)?,
            test: split(Split::Test)?,
        })
    }

    pub fn split(&self, split: Split) -> &[UtteranceSample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Model inputs for one run: training text corrupted at `corruption.train`,
    /// dev and test text at `corruption.eval`.
    pub fn prepare(&self, corruption: Corruption, seed: u64) -> Result<PreparedData> {
        let vocab = self.inventory.size();
        Ok(PreparedData {
            train: prepare(&self.train, vocab, corruption.train, seed, TAG_CORRUPT_TRAIN)?,
            dev: prepare(&self.dev, vocab, corruption.eval, seed, TAG_CORRUPT_DEV)?,
            test: prepare(&self.test, vocab, corruption.eval, seed, TAG_CORRUPT_TEST)?,
        })
    }

    pub fn prepare_split(&self, split: Split, p: f64, seed: u64) -> Result<Vec<PreparedUtterance>> {
        let tag = match split {
            Split::Train => TAG_CORRUPT_TRAIN,
            Split::Dev => TAG_CORRUPT_DEV,
            Split::Test => TAG_CORRUPT_TEST,
        };
        prepare(self.split(split), self.inventory.size(), p, seed, tag)
    }
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Vec<PreparedUtterance>,
    pub dev: Vec<PreparedUtterance>,
    pub test: Vec<PreparedUtterance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

/// Outcome of one training run. Everything in it is a function of the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub num_weights: usize,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    /// Checkpoint file name, relative to the run directory.
    pub checkpoint: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Wall-clock measurements, kept apart from the report so that the report
/// stays byte-identical across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub model: AccentModel,
    pub wall_seconds: f64,
}

/// Trains `cfg` on in-memory data. Nothing is written to disk.
pub fn train_on(cfg: &ExperimentConfig, data: &CorpusData) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    if cfg.head.num_accents != data.num_accents {
        return Err(Error::Config(format!(
            "head predicts {} accents, corpus has {}",
            cfg.head.num_accents, data.num_accents
        )));
    }
    let prepared = data.prepare(cfg.corruption, cfg.seed)?;
    if prepared.train.is_empty() || prepared.dev.is_empty() || prepared.test.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = AccentModel::new(
        cfg.model(),
        data.feat_dim,
        data.inventory.size(),
        derive_seed(&[cfg.seed, TAG_INIT]),
    )?;
    let mut adam = Adam::new(cfg.optimizer.adam, model.params());
    let mut order: Vec<usize> = (0..prepared.train.len()).collect();
    let mut best = model.params().clone();
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.optimizer.epochs);
    let mut step = 0;

    for epoch in 1..=cfg.optimizer.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, TAG_SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.optimizer.batch_size) {
            step += 1;
            let weight = 1.0 / batch.len() as f64;
            model.params_mut().zero_grads();
            for &i in batch {
                let grads = {
                    let mut tape = Tape::new(model.params());
                    let loss = model.loss(&mut tape, &prepared.train[i], weight)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Err(Error::Diverged { step });
                    }
                    loss_sum += value / weight;
                    tape.backward(loss)?
                };
                model.params_mut().accumulate(&grads)?;
            }
            adam.step(model.params_mut()).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Diverged { step },
                other => other,
            })?;
        }
        let dev_accuracy = model.evaluate(&prepared.dev)?;
        if dev_accuracy > best_dev {
            best_dev = dev_accuracy;
            best_epoch = epoch;
            best.copy_values_from(model.params())?;
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / prepared.train.len() as f64,
            dev_accuracy,
        });
    }

    model.params_mut().copy_values_from(&best)?;
    model.params_mut().zero_grads();
    let test_accuracy = model.evaluate(&prepared.test)?;
    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        num_weights: model.params().num_weights(),
        epochs,
        best_epoch,
        dev_accuracy: best_dev,
        test_accuracy,
        checkpoint: None,
    };
    Ok(TrainOutcome {
        report,
        model,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Loads the corpus named by `cfg.manifest`, trains, and writes the report,
/// the best checkpoint and the timing file into `cfg.out_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate_files()?;
    let data = CorpusData::load(&cfg.manifest)?;
    let outcome = train_on(cfg, &data)?;
    write_run(cfg, outcome)
}

/// Writes the artifacts of a finished run into `cfg.out_dir`.
pub fn write_run(cfg: &ExperimentConfig, outcome: TrainOutcome) -> Result<RunReport> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&outcome.model, cfg.seed, &dir.join(CHECKPOINT_FILE))?;
    let mut report = outcome.report;
    report.checkpoint = Some(CHECKPOINT_FILE.to_string());
    write_json(&dir.join(REPORT_FILE), &report)?;
    let timing = Timing {
        seed: cfg.seed,
        wall_seconds: outcome.wall_seconds,
    };
    write_json(&dir.join(TIMING_FILE), &timing)?;
    Ok(report)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

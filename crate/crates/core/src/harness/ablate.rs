use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{Corruption, ExperimentConfig};
use super::train::{train_on, CorpusData, RunReport};
use crate::arhead::SystemVariant;
use crate::error::{Error, Result};

pub const ABLATION_SEEDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Spaces,
    Variant,
    Taps,
    Corruption,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Spaces, Axis::Variant, Axis::Taps, Axis::Corruption];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Spaces => "spaces",
            Axis::Variant => "variant",
            Axis::Taps => "taps",
            Axis::Corruption => "corruption",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis `{s}`")))
    }
}

/// One point on an axis: a label and the config to train.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub label: String,
    pub config: ExperimentConfig,
}

/// The settings of `axis`, each derived from `base`.
pub fn axis_settings(base: &ExperimentConfig, axis: Axis) -> Vec<Setting> {
    let with = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut config = base.clone();
        f(&mut config);
        Setting { label, config }
    };
    match axis {
        Axis::Spaces => [2, 4, 8]
            .into_iter()
            .map(|n| with(format!("N={n}"), &|c| c.lasas.spaces = n))
            .collect(),
        Axis::Variant => SystemVariant::ALL
            .into_iter()
            .map(|v| with(v.to_string(), &|c| c.variant = v))
            .collect(),
        Axis::Taps => {
            let deepest = base.encoder.num_layers;
            let sets: Vec<Vec<usize>> = vec![vec![deepest.min(4)], base.encoder.taps.clone(), (1..=deepest).collect()];
            sets.into_iter()
                .map(|taps| {
                    let label = format!("taps={}", taps.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("+"));
                    with(label, &|c| c.encoder.taps = taps.clone())
                })
                .collect()
        }
        Axis::Corruption => [(0.0, 0.0), (0.0, 0.06), (0.06, 0.06)]
            .into_iter()
            .map(|(tr, ev)| with(format!("p_train={tr},p_eval={ev}"), &|c| c.corruption = Corruption::new(tr, ev)))
            .collect(),
    }
}

/// Seeds used for every setting: `base`, `base + 1`, ...
pub fn ablation_seeds(base: u64) -> Vec<u64> {
    (0..ABLATION_SEEDS as u64).map(|i| base + i).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub runs: Vec<SeedResult>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl AblationRow {
    pub fn from_reports(label: impl Into<String>, reports: &[RunReport]) -> Self {
        let runs: Vec<SeedResult> = reports
            .iter()
            .map(|r| SeedResult {
                seed: r.seed,
                dev_accuracy: r.dev_accuracy,
                test_accuracy: r.test_accuracy,
            })
            .collect();
        let acc: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        AblationRow {
            label: label.into(),
            mean: acc.iter().sum::<f64>() / acc.len().max(1) as f64,
            min: acc.iter().copied().fold(f64::INFINITY, f64::min),
            max: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Plain-text table: setting, mean test accuracy and the seed range.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:width$}  {:>7}  {:>15}\n", "setting", "mean", "range");
        for r in &self.rows {
            writeln!(
                out,
                "{:width$}  {:>6.2}%  [{:>5.2}, {:>5.2}]",
                r.label,
                100.0 * r.mean,
                100.0 * r.min,
                100.0 * r.max
            )
            .unwrap();
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Trains every setting of `axis` with each ablation seed, calling
/// `on_run` after every run (for example to write its artifacts).
pub fn ablate_with<F>(base: &ExperimentConfig, axis: Axis, data: &CorpusData, mut on_run: F) -> Result<AblationTable>
where
    F: FnMut(&Setting, &super::train::TrainOutcome) -> Result<()>,
{
    let seeds = ablation_seeds(base.seed);
    let mut rows = Vec::new();
    for setting in axis_settings(base, axis) {
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let mut cfg = setting.config.clone();
            cfg.seed = seed;
            let outcome = train_on(&cfg, data)?;
            let run = Setting {
                label: setting.label.clone(),
                config: cfg,
            };
            on_run(&run, &outcome)?;
            reports.push(outcome.report);
        }
        rows.push(AblationRow::from_reports(setting.label, &reports));
    }
    Ok(AblationTable { axis, seeds, rows })
}

pub fn ablate(base: &ExperimentConfig, axis: Axis, data: &CorpusData) -> Result<AblationTable> {
    ablate_with(base, axis, data, |_, _| Ok(()))
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arhead::{HeadConfig, SystemVariant};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::lasas::{LasasConfig, SpaceDimMode};
use crate::model::{prepare, AccentModel, ModelConfig};
use crate::numerics::{finite_diff_check, GradCheckConfig, ParamCheck};
use crate::synthgen::{Corpus, CorpusConfig, Span};

pub const GRADCHECK_THRESHOLD: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub seed: u64,
    pub threshold: f64,
    /// Worst relative error per module.
    pub modules: BTreeMap<String, f64>,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.threshold
    }
}

fn module_of(param: &str) -> &'static str {
    match param.split('.').next() {
        Some("enc") => "encoder",
        Some("lasas") => "lasas",
        Some("head") => "arhead",
        Some("dc") => "direct_concat",
        _ => "other",
    }
}

fn tiny_model(variant: SystemVariant, mode: SpaceDimMode) -> ModelConfig {
    ModelConfig {
        variant,
        encoder: EncoderConfig {
            num_layers: 2,
            d_model: 8,
            heads: 2,
            ff_dim: 12,
            taps: vec![1, 2],
        },
        lasas: LasasConfig {
            spaces: 2,
            hidden: 6,
            reduced_text_dim: 3,
            space_dim_mode: mode,
        },
        head: HeadConfig {
            context_layers: 1,
            context_dim: 8,
            heads: 2,
            ff_dim: 8,
            dnn_layers: 2,
            num_accents: 3,
        },
    }
}

/// Finite-difference check of the whole pipeline on two short utterances.
/// Errors with the offending parameter when any error exceeds the threshold.
pub fn gradcheck(seed: u64) -> Result<GradcheckSummary> {
    let corpus = Corpus::generate(&CorpusConfig {
        num_accents: 3,
        train_speakers: 1,
        dev_speakers: 1,
        test_speakers: 1,
        utterances_per_speaker: 1,
        lexicon_size: 20,
        num_merges: 8,
        words_per_utterance: Span::new(1, 2),
        frames_per_subword: Span::new(1, 2),
        feat_dim: 6,
        seed,
        ..CorpusConfig::default()
    })?;
    let vocab = corpus.world.inventory.size();
    let batch = prepare(&corpus.train[..2], vocab, 0.0, seed, 0)?;

    let mut params = Vec::new();
    let configs = [
        tiny_model(SystemVariant::Lasas, SpaceDimMode::Full),
        tiny_model(SystemVariant::Lasas, SpaceDimMode::Split),
        tiny_model(SystemVariant::DirectConcat, SpaceDimMode::Full),
    ];
    for (k, cfg) in configs.into_iter().enumerate() {
        let mut model = AccentModel::new(cfg, 6, vocab, seed.wrapping_add(k as u64))?;
        model.randomize_biases(seed.wrapping_add(k as u64));
        let frozen = model.clone();
        let check = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let report = finite_diff_check(model.params_mut(), check, |tape| {
            let mut total = None;
            for u in &batch {
                let l = frozen.loss(tape, u, 1.0 / batch.len() as f64)?;
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l)?,
                });
            }
            Ok(total.expect("non-empty batch"))
        })?;
        params.extend(report.params);
    }

    let mut modules = BTreeMap::new();
    for p in &params {
        let e = modules.entry(module_of(&p.name).to_string()).or_insert(0.0_f64);
        *e = e.max(p.max_rel_error);
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    let summary = GradcheckSummary {
        seed,
        threshold: GRADCHECK_THRESHOLD,
        modules,
        params,
        max_rel_error,
    };
    if !summary.passed() {
        let worst = summary
            .params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("at least one parameter");
        return Err(Error::GradCheck {
            param: worst.name.clone(),
            error: worst.max_rel_error,
            threshold: GRADCHECK_THRESHOLD,
        });
    }
    Ok(summary)
}

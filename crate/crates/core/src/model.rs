//! The full recognizer: encoder → (LASAS | concatenation | nothing) → head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arhead::{predict, ArHead, HeadConfig, SystemVariant};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::lasas::{mean_shift_table, LasasBlock, LasasConfig, MeanShiftTable};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::synthgen::{corrupt_text, derive_seed, UtteranceSample};
use crate::tokenizer::{expand_alignment, one_hot, SubwordId, SubwordSegment};

/// Architecture of one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: SystemVariant,
    pub encoder: EncoderConfig,
    pub lasas: LasasConfig,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: SystemVariant::Lasas,
            encoder: EncoderConfig::default(),
            lasas: LasasConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

/// An utterance turned into model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedUtterance {
    pub id: String,
    pub accent: usize,
    pub frames: Matrix,
    /// Frame-level subword ids (possibly corrupted).
    pub ids: Vec<SubwordId>,
    /// One-hot text, `T × D2`.
    pub text: Matrix,
}

impl PreparedUtterance {
    pub fn new(u: &UtteranceSample, segments: &[SubwordSegment], vocab: usize) -> Result<Self> {
        let ids = expand_alignment(segments)?;
        if ids.len() != u.frames.rows() {
            return Err(Error::Invalid(format!(
                "utterance {}: alignment covers {} frames, audio has {}",
                u.id,
                ids.len(),
                u.frames.rows()
            )));
        }
        Ok(PreparedUtterance {
            id: u.id.clone(),
            accent: u.accent,
            frames: u.frames.clone(),
            text: one_hot(&ids, vocab)?,
            ids,
        })
    }
}

/// Prepares a split, corrupting the text of each utterance with rate `p`.
/// The corruption stream depends on `seed`, `stream_tag` and the utterance
/// position only.
pub fn prepare(utterances: &[UtteranceSample], vocab: usize, p: f64, seed: u64, stream_tag: u64) -> Result<Vec<PreparedUtterance>> {
    utterances
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let segments = if p > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, stream_tag, i as u64]));
                corrupt_text(&u.segments, p, vocab, &mut rng)
            } else {
                u.segments.clone()
            };
            PreparedUtterance::new(u, &segments, vocab)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AccentModel {
    config: ModelConfig,
    feat_dim: usize,
    text_dim: usize,
    params: ParamStore,
    encoder: Encoder,
    lasas: Option<LasasBlock>,
    reduction: Option<ParamId>,
    head: ArHead,
}

/// Handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub shift: Option<Var>,
}

impl AccentModel {
    pub fn new(config: ModelConfig, feat_dim: usize, text_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(config.encoder.clone(), feat_dim, &mut params, &mut rng)?;
        let d1 = config.encoder.embedding_dim();
        let (lasas, reduction, head_in) = match config.variant {
            SystemVariant::AcousticOnly => (None, None, d1),
            SystemVariant::DirectConcat => {
                config.lasas.validate()?;
                let dt = config.lasas.reduced_text_dim;
                let w = params.add_glorot("dc.w_td", text_dim, dt, &mut rng);
                (None, Some(w), d1 + dt)
            }
            SystemVariant::Lasas => {
                let block = LasasBlock::new(config.lasas.clone(), d1, text_dim, &mut params, &mut rng)?;
                (Some(block), None, config.lasas.output_dim())
            }
        };
        let head = ArHead::new(config.head.clone(), head_in, &mut params, &mut rng)?;
        Ok(AccentModel {
            config,
            feat_dim,
            text_dim,
            params,
            encoder,
            lasas,
            reduction,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> SystemVariant {
        self.config.variant
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Draws every bias from `U(-0.2, 0.2)`; zero biases put ReLU inputs
    /// exactly on the kink, which finite differences cannot handle.
    pub(crate) fn randomize_biases(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in self.params.iter_mut().filter(|p| p.name.ends_with(".b")) {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }

    pub fn lasas(&self) -> Option<&LasasBlock> {
        self.lasas.as_ref()
    }

    /// Records the forward pass of one utterance on `tape`, whose parameter
    /// store must be this model's (or a copy with the same layout).
    pub fn forward(&self, tape: &mut Tape<'_>, frames: &Matrix, text: &Matrix) -> Result<ForwardVars> {
        if frames.cols() != self.feat_dim || text.cols() != self.text_dim || frames.rows() != text.rows() {
            return Err(Error::shape("model input", frames.shape(), text.shape()));
        }
        let x = tape.constant(frames.clone());
        let x_a = self.encoder.embed(tape, x, None)?;
        let (head_in, shift) = match self.config.variant {
            SystemVariant::AcousticOnly => (x_a, None),
            SystemVariant::DirectConcat => {
                let x_t = tape.constant(text.clone());
                let w = tape.param(self.reduction.expect("direct concat owns a reduction"));
                let v_td = tape.matmul(x_t, w)?;
                (tape.concat_cols(&[x_a, v_td])?, None)
            }
            SystemVariant::Lasas => {
                let block = self.lasas.as_ref().expect("LASAS variant owns a block");
                let x_t = tape.constant(text.clone());
                let (vars, y) = block.forward(tape, x_a, x_t)?;
                (y, Some(vars.shift))
            }
        };
        let logits = self.head.forward(tape, head_in, None)?;
        Ok(ForwardVars { logits, shift })
    }

    /// Cross-entropy of one utterance, scaled by `weight`.
    pub fn loss(&self, tape: &mut Tape<'_>, utt: &PreparedUtterance, weight: f64) -> Result<Var> {
        let out = self.forward(tape, &utt.frames, &utt.text)?;
        let ce = tape.cross_entropy(out.logits, utt.accent)?;
        Ok(tape.scale(ce, weight))
    }

    pub fn logits(&self, utt: &PreparedUtterance) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, &utt.frames, &utt.text)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    pub fn predict(&self, utt: &PreparedUtterance) -> Result<usize> {
        Ok(predict(&self.logits(utt)?))
    }

    /// Frame-level accent shift `S` (`T × N`); `None` for non-LASAS variants.
    pub fn shift(&self, utt: &PreparedUtterance) -> Result<Option<Matrix>> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, &utt.frames, &utt.text)?;
        Ok(out.shift.map(|s| tape.value(s).clone()))
    }

    /// Mean shift per `(subword, accent)` over `dataset`.
    pub fn export_mean_shift(&self, dataset: &[PreparedUtterance]) -> Result<MeanShiftTable> {
        if self.lasas.is_none() {
            return Err(Error::Config(format!(
                "variant {} has no accent shift to export",
                self.variant()
            )));
        }
        let shifts = dataset
            .iter()
            .map(|u| Ok(self.shift(u)?.expect("LASAS variant")))
            .collect::<Result<Vec<_>>>()?;
        mean_shift_table(
            dataset
                .iter()
                .zip(&shifts)
                .map(|(u, s)| (u.accent, u.ids.as_slice(), s)),
        )
    }

    /// Accuracy over `dataset`.
    pub fn evaluate(&self, dataset: &[PreparedUtterance]) -> Result<f64> {
        let preds = dataset.iter().map(|u| self.predict(u)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = dataset.iter().map(|u| u.accent).collect();
        crate::arhead::accuracy(&preds, &labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, GradCheckConfig};
    use crate::synthgen::{Corpus, CorpusConfig};

    fn tiny_corpus() -> Corpus {
        Corpus::generate(&CorpusConfig {
            train_speakers: 1,
            dev_speakers: 1,
            test_speakers: 1,
            utterances_per_speaker: 2,
            words_per_utterance: crate::synthgen::Span::new(1, 2),
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn variants_build_and_run() {
        let c = tiny_corpus();
        let vocab = c.world.inventory.size();
        let data = prepare(&c.train, vocab, 0.0, 0, 0).unwrap();
        for variant in SystemVariant::ALL {
            let cfg = ModelConfig {
                variant,
                ..ModelConfig::default()
            };
            let m = AccentModel::new(cfg, 16, vocab, 1).unwrap();
            let z = m.logits(&data[0]).unwrap();
            assert_eq!(z.len(), 4);
            assert_eq!(m.shift(&data[0]).unwrap().is_some(), variant == SystemVariant::Lasas);
        }
    }

    #[test]
    fn zero_acoustic_maps_give_zero_centroids() {
        let c = tiny_corpus();
        let vocab = c.world.inventory.size();
        let data = prepare(&c.test, vocab, 0.0, 0, 0).unwrap();
        let mut m = AccentModel::new(ModelConfig::default(), 16, vocab, 1).unwrap();
        let maps = m.lasas().unwrap().acoustic_maps().to_vec();
        for id in maps {
            m.params_mut().get_mut(id).value.fill(0.0);
        }
        let table = m.export_mean_shift(&data).unwrap();
        assert!(!table.entries.is_empty());
        assert!(table.entries.values().all(|c| c.mean.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn corruption_stream_is_stable() {
        let c = tiny_corpus();
        let vocab = c.world.inventory.size();
        let a = prepare(&c.train, vocab, 0.5, 3, 1).unwrap();
        let b = prepare(&c.train, vocab, 0.5, 3, 1).unwrap();
        assert_eq!(a, b);
        let clean = prepare(&c.train, vocab, 0.0, 3, 1).unwrap();
        assert_ne!(a, clean);
    }

    #[test]
    fn full_model_gradcheck() {
        let c = tiny_corpus();
        let vocab = c.world.inventory.size();
        let data = prepare(&c.train[..2], vocab, 0.0, 0, 0).unwrap();
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                num_layers: 2,
                d_model: 8,
                heads: 2,
                ff_dim: 8,
                taps: vec![1, 2],
            },
            lasas: LasasConfig {
                spaces: 2,
                hidden: 4,
                reduced_text_dim: 2,
                ..LasasConfig::default()
            },
            head: HeadConfig {
                context_layers: 1,
                context_dim: 8,
                heads: 2,
                ff_dim: 8,
                dnn_layers: 2,
                num_accents: 4,
            },
            variant: SystemVariant::Lasas,
        };
        let mut m = AccentModel::new(cfg, 16, vocab, 2).unwrap();
        m.randomize_biases(2);
        let model = m.clone();
        let report = finite_diff_check(m.params_mut(), GradCheckConfig::default(), |tape| {
            let l0 = model.loss(tape, &data[0], 0.5)?;
            let l1 = model.loss(tape, &data[1], 0.5)?;
            tape.add(l0, l1)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{:?}", report.worst());
    }
}

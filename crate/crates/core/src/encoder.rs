//! Self-attention acoustic encoder. The acoustic embedding is the column
//! concatenation of selected layer outputs ("taps").

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

/// Pre-norm Transformer block: `x + MHA(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    heads: usize,
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        TransformerBlock {
            heads,
            ln1: layer_norm_params(&format!("{prefix}.ln1"), dim, store),
            wq: store.add_glorot(format!("{prefix}.attn.wq"), dim, dim, rng),
            wk: store.add_glorot(format!("{prefix}.attn.wk"), dim, dim, rng),
            wv: store.add_glorot(format!("{prefix}.attn.wv"), dim, dim, rng),
            wo: store.add_glorot(format!("{prefix}.attn.wo"), dim, dim, rng),
            bo: store.add_zeros(format!("{prefix}.attn.bo"), 1, dim),
            ln2: layer_norm_params(&format!("{prefix}.ln2"), dim, store),
            w1: store.add_glorot(format!("{prefix}.ff.w1"), dim, ff_dim, rng),
            b1: store.add_zeros(format!("{prefix}.ff.b1"), 1, ff_dim),
            w2: store.add_glorot(format!("{prefix}.ff.w2"), ff_dim, dim, rng),
            b2: store.add_zeros(format!("{prefix}.ff.b2"), 1, dim),
        }
    }

    /// `mask[t] == false` marks padding: such frames are never attended to.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let h = layer_norm(tape, x, self.ln1)?;
        let attn = self.attention(tape, h, mask)?;
        let x = tape.add(x, attn)?;
        let h = layer_norm(tape, x, self.ln2)?;
        let ff = linear(tape, h, self.w1, self.b1)?;
        let ff = tape.relu(ff);
        let ff = linear(tape, ff, self.w2, self.b2)?;
        tape.add(x, ff)
    }

    fn attention(&self, tape: &mut Tape<'_>, h: Var, mask: Option<&[bool]>) -> Result<Var> {
        let dim = tape.shape(h).1;
        let head_dim = dim / self.heads;
        let (wq, wk, wv) = (tape.param(self.wq), tape.param(self.wk), tape.param(self.wv));
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let start = i * head_dim;
            let qh = tape.slice_cols(q, start, head_dim)?;
            let kh = tape.slice_cols(k, start, head_dim)?;
            let vh = tape.slice_cols(v, start, head_dim)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores, mask)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        linear(tape, joined, self.wo, self.bo)
    }
}

pub(crate) fn layer_norm_params(prefix: &str, dim: usize, store: &mut ParamStore) -> (ParamId, ParamId) {
    (
        store.add_filled(format!("{prefix}.gain"), 1, dim, 1.0),
        store.add_zeros(format!("{prefix}.bias"), 1, dim),
    )
}

pub(crate) fn layer_norm(tape: &mut Tape<'_>, x: Var, (gain, bias): (ParamId, ParamId)) -> Result<Var> {
    let (g, b) = (tape.param(gain), tape.param(bias));
    tape.layer_norm(x, g, b)
}

/// `x · W + b`.
pub(crate) fn linear(tape: &mut Tape<'_>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (wv, bv) = (tape.param(w), tape.param(b));
    let y = tape.matmul(x, wv)?;
    tape.add_row(y, bv)
}

/// Sinusoidal position table, `T × dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Matrix {
    let mut pe = Matrix::zeros(len, dim);
    for t in 0..len {
        for i in 0..dim {
            let freq = 10_000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let angle = t as f64 * freq;
            pe.set(t, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// 1-based layer indices whose outputs form the acoustic embedding.
    pub taps: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 6,
            d_model: 32,
            heads: 4,
            ff_dim: 64,
            taps: vec![2, 3, 4],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.d_model == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        validate_taps(&self.taps, self.num_layers)
    }

    /// Width of the acoustic embedding, `|taps| · d_model`.
    pub fn embedding_dim(&self) -> usize {
        self.taps.len() * self.d_model
    }

    /// Deepest layer that feeds the embedding.
    pub fn deepest_tap(&self) -> usize {
        self.taps.iter().copied().max().unwrap_or(0)
    }
}

fn validate_taps(taps: &[usize], layers: usize) -> Result<()> {
    if taps.is_empty() {
        return Err(Error::Config("tap set is empty".into()));
    }
    if let Some(&t) = taps.iter().find(|&&t| t == 0 || t > layers) {
        return Err(Error::Config(format!("tap {t} outside layers 1..={layers}")));
    }
    let mut sorted = taps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != taps.len() {
        return Err(Error::Config(format!("tap set {taps:?} has duplicates")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    input_w: ParamId,
    input_b: ParamId,
    blocks: Vec<TransformerBlock>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, feat_dim: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let input_w = store.add_glorot("enc.in.w", feat_dim, d, rng);
        let input_b = store.add_zeros("enc.in.b", 1, d);
        let blocks = (1..=config.num_layers)
            .map(|l| TransformerBlock::new(&format!("enc.l{l}"), d, config.heads, config.ff_dim, store, rng))
            .collect();
        Ok(Encoder {
            config,
            input_w,
            input_b,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// All `L` layer outputs, each `T × d_model`.
    pub fn encode(&self, tape: &mut Tape<'_>, frames: Var, mask: Option<&[bool]>) -> Result<Vec<Var>> {
        self.encode_layers(tape, frames, mask, self.config.num_layers)
    }

    /// Outputs of the first `depth` layers only.
    pub fn encode_layers(&self, tape: &mut Tape<'_>, frames: Var, mask: Option<&[bool]>, depth: usize) -> Result<Vec<Var>> {
        let (t, _) = tape.shape(frames);
        if t == 0 {
            return Err(Error::Invalid("cannot encode an utterance with zero frames".into()));
        }
        if let Some(m) = mask {
            if m.len() != t {
                return Err(Error::shape("encoder mask", tape.shape(frames), (m.len(), 1)));
            }
        }
        let x = linear(tape, frames, self.input_w, self.input_b)?;
        let pe = tape.constant(sinusoidal_positions(t, self.config.d_model));
        let mut x = tape.add(x, pe)?;
        let mut outs = Vec::with_capacity(depth);
        for block in self.blocks.iter().take(depth) {
            x = block.forward(tape, x, mask)?;
            outs.push(x);
        }
        Ok(outs)
    }

    /// Acoustic embedding `T × (|taps| · d_model)`. Layers past the deepest
    /// tap are not computed.
    pub fn embed(&self, tape: &mut Tape<'_>, frames: Var, mask: Option<&[bool]>) -> Result<Var> {
        let outs = self.encode_layers(tape, frames, mask, self.config.deepest_tap())?;
        tap_concat(tape, &outs, &self.config.taps)
    }
}

/// Concatenates the 1-based `taps` of `layer_outputs` in ascending tap order.
pub fn tap_concat(tape: &mut Tape<'_>, layer_outputs: &[Var], taps: &[usize]) -> Result<Var> {
    validate_taps(taps, layer_outputs.len())?;
    let mut sorted = taps.to_vec();
    sorted.sort_unstable();
    let parts: Vec<Var> = sorted.iter().map(|&t| layer_outputs[t - 1]).collect();
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.concat_cols(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_frames(t: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn build(cfg: EncoderConfig, feat: usize) -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::new(cfg, feat, &mut store, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn layer_output_shapes() {
        let (store, enc) = build(EncoderConfig::default(), 16);
        let mut tape = Tape::new(&store);
        let x = tape.constant(random_frames(10, 16, 1));
        let outs = enc.encode(&mut tape, x, None).unwrap();
        assert_eq!(outs.len(), 6);
        assert!(outs.iter().all(|&o| tape.shape(o) == (10, 32)));
        let emb = enc.embed(&mut tape, x, None).unwrap();
        assert_eq!(tape.shape(emb), (10, 96));
    }

    #[test]
    fn single_layer_single_tap_is_identity() {
        let cfg = EncoderConfig {
            num_layers: 1,
            taps: vec![1],
            ..EncoderConfig::default()
        };
        let (store, enc) = build(cfg, 4);
        let mut tape = Tape::new(&store);
        let x = tape.constant(random_frames(5, 4, 2));
        let outs = enc.encode(&mut tape, x, None).unwrap();
        let emb = tap_concat(&mut tape, &outs, &[1]).unwrap();
        assert_eq!(tape.value(emb), tape.value(outs[0]));
    }

    #[test]
    fn tap_widths() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let layers: Vec<Var> = (0..12).map(|i| tape.constant(Matrix::filled(3, 16, i as f64))).collect();
        let e = tap_concat(&mut tape, &layers, &[3, 6, 9]).unwrap();
        assert_eq!(tape.shape(e).1, 48);
        let all: Vec<usize> = (1..=12).collect();
        let e = tap_concat(&mut tape, &layers, &all).unwrap();
        assert_eq!(tape.shape(e).1, 12 * 16);
        // ascending order regardless of how taps are listed
        let e = tap_concat(&mut tape, &layers, &[9, 3]).unwrap();
        assert_eq!(tape.value(e).get(0, 0), 2.0);
        assert!(tap_concat(&mut tape, &layers, &[13]).is_err());
        assert!(tap_concat(&mut tape, &layers, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad_heads = EncoderConfig {
            heads: 5,
            ..EncoderConfig::default()
        };
        assert!(bad_heads.validate().is_err());
        let bad_tap = EncoderConfig {
            taps: vec![7],
            ..EncoderConfig::default()
        };
        assert!(bad_tap.validate().is_err());
        let (store, enc) = build(EncoderConfig::default(), 3);
        let mut tape = Tape::new(&store);
        let empty = tape.constant(Matrix::zeros(0, 3));
        assert!(enc.encode(&mut tape, empty, None).is_err());
    }

    #[test]
    fn padded_frames_do_not_leak() {
        let (store, enc) = build(EncoderConfig::default(), 6);
        let t = 9;
        let mask: Vec<bool> = (0..t).map(|i| i < 6).collect();
        let a = random_frames(t, 6, 4);
        let mut b = a.clone();
        for r in 6..t {
            b.row_mut(r).iter_mut().for_each(|v| *v = 100.0 * (r as f64) - *v);
        }
        let run = |frames: Matrix| {
            let mut tape = Tape::new(&store);
            let x = tape.constant(frames);
            let outs = enc.encode(&mut tape, x, Some(&mask)).unwrap();
            tape.value(*outs.last().unwrap()).clone()
        };
        let (oa, ob) = (run(a), run(b));
        for r in 0..6 {
            for c in 0..oa.cols() {
                assert!((oa.get(r, c) - ob.get(r, c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn encoder_gradcheck() {
        let cfg = EncoderConfig {
            num_layers: 2,
            d_model: 8,
            heads: 2,
            ff_dim: 12,
            taps: vec![1, 2],
        };
        let (mut store, enc) = build(cfg, 5);
        let frames = random_frames(6, 5, 7);
        let proj = random_frames(6, 16, 8);
        let report = finite_diff_check(&mut store, GradCheckConfig::default(), |tape| {
            let x = tape.constant(frames.clone());
            let e = enc.embed(tape, x, Some(&[true, true, true, true, false, true]))?;
            let p = tape.constant(proj.clone());
            let m = tape.mul(e, p)?;
            Ok(tape.sum(m))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{:?}", report.worst());
    }
}

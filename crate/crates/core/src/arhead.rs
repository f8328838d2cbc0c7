//! Accent recognition head: input projection, a small context Transformer,
//! a frame-wise DNN whose width halves at every layer, statistical pooling,
//! and a linear classifier.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{layer_norm, layer_norm_params, linear, TransformerBlock};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, ParamId, ParamStore, Tape, Var};

/// Which representation feeds the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemVariant {
    /// Acoustic embedding only.
    AcousticOnly,
    /// Acoustic embedding concatenated with the reduced text vector.
    DirectConcat,
    /// Bimodal accent-shift representation.
    Lasas,
}

impl SystemVariant {
    pub const ALL: [SystemVariant; 3] = [SystemVariant::AcousticOnly, SystemVariant::DirectConcat, SystemVariant::Lasas];

    pub fn name(self) -> &'static str {
        match self {
            SystemVariant::AcousticOnly => "acoustic_only",
            SystemVariant::DirectConcat => "direct_concat",
            SystemVariant::Lasas => "lasas",
        }
    }
}

impl fmt::Display for SystemVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown system variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub context_layers: usize,
    pub context_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dnn_layers: usize,
    pub num_accents: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            context_layers: 3,
            context_dim: 32,
            heads: 4,
            ff_dim: 64,
            dnn_layers: 3,
            num_accents: 4,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(Error::Config("head sizes must be positive".into()));
        }
        if !self.context_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "context dim {} is not divisible by {} heads",
                self.context_dim, self.heads
            )));
        }
        let halving = 1usize.checked_shl(self.dnn_layers as u32).unwrap_or(0);
        if halving == 0 || !self.context_dim.is_multiple_of(halving) {
            return Err(Error::Config(format!(
                "context dim {} cannot be halved {} times",
                self.context_dim, self.dnn_layers
            )));
        }
        if self.num_accents < 2 {
            return Err(Error::Config("need at least two accent classes".into()));
        }
        Ok(())
    }

    /// DNN layer widths: `context_dim / 2, / 4, …`.
    pub fn dnn_widths(&self) -> Vec<usize> {
        (1..=self.dnn_layers).map(|l| self.context_dim >> l).collect()
    }

    /// Width of the pooled vector (mean ⊕ std of the last DNN layer).
    pub fn pooled_dim(&self) -> usize {
        2 * self.dnn_widths().last().copied().unwrap_or(self.context_dim)
    }
}

#[derive(Clone, Debug)]
pub struct ArHead {
    config: HeadConfig,
    input_dim: usize,
    input_w: ParamId,
    input_b: ParamId,
    blocks: Vec<TransformerBlock>,
    final_ln: (ParamId, ParamId),
    dnn: Vec<(ParamId, ParamId)>,
    out_w: ParamId,
    out_b: ParamId,
}

impl ArHead {
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, input_dim: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.context_dim;
        let input_w = store.add_glorot("head.in.w", input_dim, c, rng);
        let input_b = store.add_zeros("head.in.b", 1, c);
        let blocks = (1..=config.context_layers)
            .map(|l| TransformerBlock::new(&format!("head.ctx{l}"), c, config.heads, config.ff_dim, store, rng))
            .collect();
        let final_ln = layer_norm_params("head.ctx_ln", c, store);
        let mut dnn = Vec::new();
        let mut prev = c;
        for (l, w) in config.dnn_widths().into_iter().enumerate() {
            let wid = store.add_glorot(format!("head.dnn{}.w", l + 1), prev, w, rng);
            let bid = store.add_zeros(format!("head.dnn{}.b", l + 1), 1, w);
            dnn.push((wid, bid));
            prev = w;
        }
        let out_w = store.add_glorot("head.out.w", 2 * prev, config.num_accents, rng);
        let out_b = store.add_zeros("head.out.b", 1, config.num_accents);
        Ok(ArHead {
            config,
            input_dim,
            input_w,
            input_b,
            blocks,
            final_ln,
            dnn,
            out_w,
            out_b,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    /// Frame-wise features just before pooling, `T × last DNN width`.
    pub fn frame_features(&self, tape: &mut Tape<'_>, inputs: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = tape.shape(inputs);
        if shape.1 != self.input_dim {
            return Err(Error::shape("head input", shape, (shape.0, self.input_dim)));
        }
        if mask.is_some_and(|m| !m.iter().any(|&v| v)) || shape.0 == 0 {
            return Err(Error::Invalid("head input has no valid frames".into()));
        }
        let mut x = linear(tape, inputs, self.input_w, self.input_b)?;
        for block in &self.blocks {
            x = block.forward(tape, x, mask)?;
        }
        x = layer_norm(tape, x, self.final_ln)?;
        for &(w, b) in &self.dnn {
            let h = linear(tape, x, w, b)?;
            x = tape.relu(h);
        }
        Ok(x)
    }

    /// `1 × K` logits.
    pub fn forward(&self, tape: &mut Tape<'_>, inputs: Var, mask: Option<&[bool]>) -> Result<Var> {
        let features = self.frame_features(tape, inputs, mask)?;
        let pooled = tape.stat_pool(features, mask)?;
        linear(tape, pooled, self.out_w, self.out_b)
    }
}

/// Mean ⊕ standard deviation over the valid frames of `frames`.
pub fn stat_pool(frames: &Matrix, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.constant(frames.clone());
    let p = tape.stat_pool(x, mask)?;
    Ok(tape.value(p).data().to_vec())
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(-softmax(logits)[label].ln())
}

/// Mean cross-entropy over a batch of `(logits, label)` pairs.
pub fn mean_cross_entropy(batch: &[(Vec<f64>, usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let total = batch
        .iter()
        .map(|(z, y)| cross_entropy(z, *y))
        .sum::<Result<f64>>()?;
    Ok(total / batch.len() as f64)
}

/// Index of the largest logit; the first one wins ties.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

//! Accent recognition with linguistic-acoustic similarity based accent shift.
//!
//! Frames of an utterance are encoded by a self-attention encoder; selected
//! layer outputs form the acoustic embedding. The frame-aligned subword text
//! is mapped into several spaces as anchors, and the scaled dot-product
//! similarity between mapped acoustics and anchors gives the accent shift.
//! The shift, concatenated with a reduced text vector, feeds a small
//! Transformer, a frame-wise DNN and statistical pooling for classification.
//!
//! A procedural accent corpus ([`synthgen`]) makes the comparisons testable.

pub mod arhead;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod lasas;
pub mod model;
pub mod numerics;
pub mod synthgen;
pub mod tokenizer;

pub use error::{Error, Result};

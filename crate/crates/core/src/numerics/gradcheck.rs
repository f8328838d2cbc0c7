//! Central-difference gradient checking against the tape's backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates checked per parameter; smaller parameters are checked in full.
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            samples_per_param: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares backward gradients of `loss_fn` with central differences.
///
/// `loss_fn` records a scalar loss on the tape it is given and must be
/// deterministic. Parameter values are restored before returning.
pub fn finite_diff_check<F>(params: &mut ParamStore, cfg: GradCheckConfig, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        let v = tape.scalar(loss);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss)
        }
    };

    let analytic = {
        let mut tape = Tape::new(params);
        let loss = loss_fn(&mut tape)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        tape.backward(loss)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        params: Vec::new(),
        max_rel_error: 0.0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let size = params.get(id).value.len();
        let coords: Vec<usize> = if size <= cfg.samples_per_param {
            (0..size).collect()
        } else {
            let mut c = sample(&mut rng, size, cfg.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let original = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = original + cfg.step;
            let plus = eval(params);
            params.get_mut(id).value.data_mut()[i] = original - cfg.step;
            let minus = eval(params);
            params.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * cfg.step);
            let backprop = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(numeric, backprop));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.params.push(ParamCheck {
            name: params.get(id).name.clone(),
            coordinates: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

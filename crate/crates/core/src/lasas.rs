//! Linguistic-acoustic similarity based accent shift.
//!
//! Frame-aligned one-hot text `X_t` (`T × D2`) is mapped into `N` spaces to
//! give anchors `V_t^i = X_t · W_t^i`. The acoustic embedding `X_a`
//! (`T × D1`) is mapped the same way, `V_a^i = X_a · W_a^i`, and the
//! per-frame similarity in space `i` is `S^i = ⟨V_a^i, V_t^i⟩ / √d_k` with
//! `d_k = C / N`. The accent shift `S` stacks the `N` similarities, and the
//! bimodal representation appends a reduced text vector `X_t · W_td`:
//!
//! ```text
//! Y_bm = [ S¹ … Sᴺ | X_t · W_td ]      (T × (N + D_td))
//! ```
//!
//! Anchors depend only on the subword id of a frame, never on the audio, so
//! the same subword gets the same reference in every utterance and accent.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::tokenizer::SubwordId;

/// Width of each mapping space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceDimMode {
    /// Every space has width `C`; similarities are still scaled by `√(C/N)`.
    #[default]
    Full,
    /// Every space has width `C/N`, like the heads of multi-head attention.
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LasasConfig {
    /// Number of mapping spaces `N`.
    pub spaces: usize,
    /// Hidden dimension `C`.
    pub hidden: usize,
    /// Width `D_td` of the reduced text vector.
    pub reduced_text_dim: usize,
    pub space_dim_mode: SpaceDimMode,
}

impl Default for LasasConfig {
    fn default() -> Self {
        LasasConfig {
            spaces: 8,
            hidden: 64,
            reduced_text_dim: 8,
            space_dim_mode: SpaceDimMode::Full,
        }
    }
}

impl LasasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spaces == 0 || self.hidden == 0 {
            return Err(Error::Config("LASAS needs at least one space and a positive hidden dim".into()));
        }
        if self.reduced_text_dim == 0 {
            return Err(Error::Config("reduced text dimension must be positive".into()));
        }
        if self.space_dim_mode == SpaceDimMode::Split && !self.hidden.is_multiple_of(self.spaces) {
            return Err(Error::Config(format!(
                "split mode needs {} spaces to divide hidden dim {}",
                self.spaces, self.hidden
            )));
        }
        Ok(())
    }

    /// Scale `d_k = C / N`.
    pub fn d_k(&self) -> f64 {
        self.hidden as f64 / self.spaces as f64
    }

    /// Width of one mapping space.
    pub fn space_width(&self) -> usize {
        match self.space_dim_mode {
            SpaceDimMode::Full => self.hidden,
            SpaceDimMode::Split => self.hidden / self.spaces,
        }
    }

    /// Width of the bimodal representation, `N + D_td`.
    pub fn output_dim(&self) -> usize {
        self.spaces + self.reduced_text_dim
    }
}

/// Handles to the values of one LASAS forward pass.
#[derive(Clone, Debug)]
pub struct ShiftVars {
    pub anchors: Vec<Var>,
    pub mapped: Vec<Var>,
    pub shift: Var,
}

/// Materialized LASAS outputs for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftOutput {
    /// `V_t^i`, `N` matrices of `T × C_s`.
    pub anchors: Vec<Matrix>,
    /// `V_a^i`, `N` matrices of `T × C_s`.
    pub mapped: Vec<Matrix>,
    /// `S`, `T × N`.
    pub shift: Matrix,
    /// `V_td`, `T × D_td`.
    pub reduced_text: Matrix,
    /// `Y_bm`, `T × (N + D_td)`.
    pub bimodal: Matrix,
}

/// Trainable LASAS parameters: `W_t^i`, `W_a^i` and `W_td`.
#[derive(Clone, Debug)]
pub struct LasasBlock {
    config: LasasConfig,
    acoustic_dim: usize,
    text_dim: usize,
    text_maps: Vec<ParamId>,
    acoustic_maps: Vec<ParamId>,
    reduction: ParamId,
}

impl LasasBlock {
    pub fn new<R: Rng + ?Sized>(
        config: LasasConfig,
        acoustic_dim: usize,
        text_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let width = config.space_width();
        let text_maps = (1..=config.spaces)
            .map(|i| store.add_glorot(format!("lasas.w_t{i}"), text_dim, width, rng))
            .collect();
        let acoustic_maps = (1..=config.spaces)
            .map(|i| store.add_glorot(format!("lasas.w_a{i}"), acoustic_dim, width, rng))
            .collect();
        let reduction = store.add_glorot("lasas.w_td", text_dim, config.reduced_text_dim, rng);
        Ok(LasasBlock {
            config,
            acoustic_dim,
            text_dim,
            text_maps,
            acoustic_maps,
            reduction,
        })
    }

    pub fn config(&self) -> &LasasConfig {
        &self.config
    }

    pub fn acoustic_dim(&self) -> usize {
        self.acoustic_dim
    }

    pub fn text_maps(&self) -> &[ParamId] {
        &self.text_maps
    }

    pub fn acoustic_maps(&self) -> &[ParamId] {
        &self.acoustic_maps
    }

    pub fn reduction(&self) -> ParamId {
        self.reduction
    }

    fn check_text(&self, tape: &Tape<'_>, x_t: Var) -> Result<()> {
        let shape = tape.shape(x_t);
        if shape.1 != self.text_dim {
            return Err(Error::shape("LASAS text input", shape, (shape.0, self.text_dim)));
        }
        Ok(())
    }

    /// Anchors `V_t^i = X_t · W_t^i` for every space.
    pub fn anchors(&self, tape: &mut Tape<'_>, x_t: Var) -> Result<Vec<Var>> {
        self.check_text(tape, x_t)?;
        self.text_maps
            .iter()
            .map(|&w| {
                let w = tape.param(w);
                tape.matmul(x_t, w)
            })
            .collect()
    }

    /// Accent shift `S` (`T × N`) with its anchors and mapped acoustics.
    pub fn shift(&self, tape: &mut Tape<'_>, x_a: Var, x_t: Var) -> Result<ShiftVars> {
        let (a_shape, t_shape) = (tape.shape(x_a), tape.shape(x_t));
        if a_shape.1 != self.acoustic_dim || a_shape.0 != t_shape.0 {
            return Err(Error::shape("LASAS acoustic input", a_shape, (t_shape.0, self.acoustic_dim)));
        }
        let anchors = self.anchors(tape, x_t)?;
        let d_k = self.config.d_k();
        let mut mapped = Vec::with_capacity(self.config.spaces);
        let mut sims = Vec::with_capacity(self.config.spaces);
        for (&w_a, &anchor) in self.acoustic_maps.iter().zip(&anchors) {
            let w = tape.param(w_a);
            let v_a = tape.matmul(x_a, w)?;
            sims.push(tape.rowwise_scaled_dot(v_a, anchor, d_k)?);
            mapped.push(v_a);
        }
        let shift = if sims.len() == 1 { sims[0] } else { tape.concat_cols(&sims)? };
        Ok(ShiftVars { anchors, mapped, shift })
    }

    /// Reduced text `V_td = X_t · W_td` and `Y_bm = [S | V_td]`.
    pub fn bimodal(&self, tape: &mut Tape<'_>, x_t: Var, shift: Var) -> Result<(Var, Var)> {
        self.check_text(tape, x_t)?;
        let (s_shape, t_shape) = (tape.shape(shift), tape.shape(x_t));
        if s_shape.0 != t_shape.0 || s_shape.1 != self.config.spaces {
            return Err(Error::shape("LASAS bimodal", s_shape, (t_shape.0, self.config.spaces)));
        }
        let w = tape.param(self.reduction);
        let v_td = tape.matmul(x_t, w)?;
        let y = tape.concat_cols(&[shift, v_td])?;
        Ok((v_td, y))
    }

    /// Full forward returning `(shift handles, Y_bm)`.
    pub fn forward(&self, tape: &mut Tape<'_>, x_a: Var, x_t: Var) -> Result<(ShiftVars, Var)> {
        let shift = self.shift(tape, x_a, x_t)?;
        let (_, y) = self.bimodal(tape, x_t, shift.shift)?;
        Ok((shift, y))
    }

    /// Evaluates the block on plain matrices.
    pub fn compute(&self, store: &ParamStore, x_a: &Matrix, x_t: &Matrix) -> Result<ShiftOutput> {
        let mut tape = Tape::new(store);
        let (a, t) = (tape.constant(x_a.clone()), tape.constant(x_t.clone()));
        let vars = self.shift(&mut tape, a, t)?;
        let (v_td, y) = self.bimodal(&mut tape, t, vars.shift)?;
        let grab = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect();
        Ok(ShiftOutput {
            anchors: grab(&vars.anchors),
            mapped: grab(&vars.mapped),
            shift: tape.value(vars.shift).clone(),
            reduced_text: tape.value(v_td).clone(),
            bimodal: tape.value(y).clone(),
        })
    }
}

/// Mean accent shift of one `(subword, accent)` group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftCentroid {
    pub mean: Vec<f64>,
    pub frames: usize,
}

/// Frame-averaged accent shift per `(subword, accent)`, silence excluded.
/// Groups that were never observed are absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeanShiftTable {
    pub spaces: usize,
    pub entries: BTreeMap<(SubwordId, usize), ShiftCentroid>,
}

impl MeanShiftTable {
    pub fn get(&self, subword: SubwordId, accent: usize) -> Option<&ShiftCentroid> {
        self.entries.get(&(subword, accent))
    }
}

/// Accumulates frame-level shifts `S` (one `T × N` matrix per utterance,
/// paired with its accent and frame ids) into per-group centroids.
pub fn mean_shift_table<'a, I>(utterances: I) -> Result<MeanShiftTable>
where
    I: IntoIterator<Item = (usize, &'a [SubwordId], &'a Matrix)>,
{
    let mut sums: BTreeMap<(SubwordId, usize), (Vec<f64>, usize)> = BTreeMap::new();
    let mut spaces = None;
    for (accent, ids, shift) in utterances {
        if ids.len() != shift.rows() {
            return Err(Error::shape("mean shift", shift.shape(), (ids.len(), shift.cols())));
        }
        if *spaces.get_or_insert(shift.cols()) != shift.cols() {
            return Err(Error::Invalid("shift matrices disagree on the number of spaces".into()));
        }
        for (t, &id) in ids.iter().enumerate() {
            if id.is_silence() {
                continue;
            }
            let (sum, n) = sums
                .entry((id, accent))
                .or_insert_with(|| (vec![0.0; shift.cols()], 0));
            for (s, v) in sum.iter_mut().zip(shift.row(t)) {
                *s += v;
            }
            *n += 1;
        }
    }
    Ok(MeanShiftTable {
        spaces: spaces.unwrap_or(0),
        entries: sums
            .into_iter()
            .map(|(k, (sum, n))| {
                let mean = sum.into_iter().map(|s| s / n as f64).collect();
                (k, ShiftCentroid { mean, frames: n })
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, GradCheckConfig};
    use crate::tokenizer::one_hot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(cfg: LasasConfig, d1: usize, d2: usize, seed: u64) -> (ParamStore, LasasBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = LasasBlock::new(cfg, d1, d2, &mut store, &mut rng).unwrap();
        (store, b)
    }

    fn ids(v: &[u32]) -> Vec<SubwordId> {
        v.iter().map(|&i| SubwordId(i)).collect()
    }

    #[test]
    fn anchor_rows_select_text_map_rows() {
        let (store, b) = block(LasasConfig::default(), 6, 5, 1);
        let x_t = one_hot(&ids(&[3, 0, 3, 4]), 5).unwrap();
        let x_a = Matrix::filled(4, 6, 0.5);
        let out = b.compute(&store, &x_a, &x_t).unwrap();
        for (i, anchor) in out.anchors.iter().enumerate() {
            let w = store.value(b.text_maps()[i]);
            assert_eq!(anchor.row(0), w.row(3));
            assert_eq!(anchor.row(1), w.row(0));
            assert_eq!(anchor.row(0), anchor.row(2));
        }
        assert_eq!(out.shift.shape(), (4, 8));
        assert_eq!(out.bimodal.shape(), (4, 16));
        // silence frames: V_td row is row 0 of W_td
        assert_eq!(out.reduced_text.row(1), store.value(b.reduction()).row(0));
    }

    #[test]
    fn zero_maps_and_zero_acoustics() {
        let (mut store, b) = block(LasasConfig::default(), 6, 5, 2);
        let x_t = one_hot(&ids(&[1, 2]), 5).unwrap();
        let out = b.compute(&store, &Matrix::zeros(2, 6), &x_t).unwrap();
        assert_eq!(out.shift, Matrix::zeros(2, 8));
        for &w in b.text_maps() {
            store.get_mut(w).value.fill(0.0);
        }
        let out = b.compute(&store, &Matrix::filled(2, 6, 1.0), &x_t).unwrap();
        assert!(out.anchors.iter().all(|a| a.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn d_k_follows_hidden_over_spaces() {
        let cfg = LasasConfig {
            hidden: 256,
            spaces: 8,
            ..LasasConfig::default()
        };
        assert_eq!(cfg.d_k(), 32.0);
        assert_eq!(cfg.space_width(), 256);
        let split = LasasConfig {
            space_dim_mode: SpaceDimMode::Split,
            ..cfg
        };
        assert_eq!(split.space_width(), 32);
    }

    #[test]
    fn config_errors() {
        let zero_td = LasasConfig {
            reduced_text_dim: 0,
            ..LasasConfig::default()
        };
        assert!(matches!(zero_td.validate(), Err(Error::Config(_))));
        let indivisible = LasasConfig {
            hidden: 10,
            spaces: 4,
            space_dim_mode: SpaceDimMode::Split,
            ..LasasConfig::default()
        };
        assert!(indivisible.validate().is_err());
        assert!(LasasConfig { spaces: 0, ..LasasConfig::default() }.validate().is_err());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let (store, b) = block(LasasConfig::default(), 6, 5, 3);
        let x_t = one_hot(&ids(&[1, 2]), 5).unwrap();
        assert!(b.compute(&store, &Matrix::zeros(2, 7), &x_t).is_err());
        assert!(b.compute(&store, &Matrix::zeros(3, 6), &x_t).is_err());
        assert!(b.compute(&store, &Matrix::zeros(2, 6), &Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn modes_share_shift_shape() {
        for mode in [SpaceDimMode::Full, SpaceDimMode::Split] {
            let cfg = LasasConfig {
                spaces: 4,
                hidden: 8,
                reduced_text_dim: 3,
                space_dim_mode: mode,
            };
            let (store, b) = block(cfg, 5, 6, 4);
            let out = b
                .compute(&store, &Matrix::filled(3, 5, 0.3), &one_hot(&ids(&[1, 5, 0]), 6).unwrap())
                .unwrap();
            assert_eq!(out.shift.shape(), (3, 4));
            assert_eq!(out.bimodal.shape(), (3, 7));
            assert_eq!(out.bimodal.row(2)[..4], out.shift.row(2)[..]);
        }
    }

    #[test]
    fn lasas_gradcheck() {
        for mode in [SpaceDimMode::Full, SpaceDimMode::Split] {
            let cfg = LasasConfig {
                spaces: 3,
                hidden: 6,
                reduced_text_dim: 2,
                space_dim_mode: mode,
            };
            let (mut store, b) = block(cfg, 4, 5, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let x_a = Matrix::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let x_t = one_hot(&ids(&[2, 2, 0, 4]), 5).unwrap();
            let proj = Matrix::from_vec(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let report = finite_diff_check(&mut store, GradCheckConfig::default(), |tape| {
                let (a, t) = (tape.constant(x_a.clone()), tape.constant(x_t.clone()));
                let (_, y) = b.forward(tape, a, t)?;
                let p = tape.constant(proj.clone());
                let m = tape.mul(y, p)?;
                Ok(tape.sum(m))
            })
            .unwrap();
            assert!(report.max_rel_error <= 1e-5, "{mode:?}: {:?}", report.worst());
        }
    }

    #[test]
    fn mean_shift_groups() {
        let s1 = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]]).unwrap();
        let s2 = Matrix::from_rows(&[[5.0, 6.0]]).unwrap();
        let i1 = ids(&[1, 1, 0]);
        let i2 = ids(&[1]);
        let table = mean_shift_table([(0, &i1[..], &s1), (2, &i2[..], &s2)]).unwrap();
        assert_eq!(table.get(SubwordId(1), 0).unwrap().mean, vec![2.0, 3.0]);
        assert_eq!(table.get(SubwordId(1), 2).unwrap().mean, vec![5.0, 6.0]);
        assert!(table.get(SubwordId(0), 0).is_none());
        assert_eq!(table.entries.len(), 2);
    }
}

//! Procedural accent corpus.
//!
//! Each frame is `base(subword) + shift(accent, subword) + offset(speaker) + noise`.
//! Only a fixed subset of subwords carries accent shifts; the remainder are
//! pronounced identically by every accent. Speaker offsets are constant for
//! all utterances of a speaker, and train/dev/test speakers never overlap.
//!
//! All randomness comes from ChaCha8 streams whose seeds are derived from the
//! master seed, so any single utterance can be regenerated in isolation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::tokenizer::{bpe_encode, bpe_train, SubwordId, SubwordInventory, SubwordSegment};

const CONSONANTS: &[char] = &['b', 'd', 'k', 'l', 'm', 'n', 's', 't'];
const VOWELS: &[char] = &['a', 'e', 'i', 'u'];

/// Folds `parts` into a seed with the SplitMix64 finalizer.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut all = vec![seed];
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(derive_seed(&all))
}

// stream tags
const TAG_LEXICON: u64 = 1;
const TAG_BASE: u64 = 2;
const TAG_SHIFT: u64 = 3;
const TAG_SPEAKER: u64 = 4;
const TAG_UTTERANCE: u64 = 5;
const TAG_SHIFTED_SET: u64 = 6;

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: u32,
    pub max: u32,
}

impl Span {
    pub const fn new(min: u32, max: u32) -> Self {
        Span { min, max }
    }

    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> u32 {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub num_accents: usize,
    pub train_speakers: usize,
    pub dev_speakers: usize,
    pub test_speakers: usize,
    pub utterances_per_speaker: usize,
    pub lexicon_size: usize,
    pub num_merges: usize,
    pub words_per_utterance: Span,
    pub frames_per_subword: Span,
    pub silence_frames: Span,
    pub feat_dim: usize,
    pub base_scale: f64,
    pub shift_magnitude: f64,
    /// Fraction of non-silence subwords that carry accent shifts.
    pub shifted_fraction: f64,
    pub speaker_offset_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            num_accents: 4,
            train_speakers: 10,
            dev_speakers: 2,
            test_speakers: 2,
            utterances_per_speaker: 25,
            lexicon_size: 60,
            num_merges: 25,
            words_per_utterance: Span::new(2, 3),
            frames_per_subword: Span::new(2, 6),
            silence_frames: Span::new(1, 3),
            feat_dim: 16,
            base_scale: 0.3,
            shift_magnitude: 1.5,
            shifted_fraction: 0.5,
            speaker_offset_scale: 0.3,
            noise_scale: 0.3,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_accents < 2 {
            return bad(format!("need at least 2 accents, got {}", self.num_accents));
        }
        if self.train_speakers == 0 || self.dev_speakers == 0 || self.test_speakers == 0 {
            return bad("every split needs at least one speaker per accent".into());
        }
        if self.utterances_per_speaker == 0 || self.feat_dim == 0 {
            return bad("utterances_per_speaker and feat_dim must be positive".into());
        }
        if self.lexicon_size < 2 {
            return bad(format!("lexicon of {} words is too small", self.lexicon_size));
        }
        for (name, s) in [
            ("words_per_utterance", self.words_per_utterance),
            ("frames_per_subword", self.frames_per_subword),
            ("silence_frames", self.silence_frames),
        ] {
            if s.min == 0 || s.min > s.max {
                return bad(format!("{name} must satisfy 1 <= min <= max, got {s:?}"));
            }
        }
        for (name, v) in [
            ("base_scale", self.base_scale),
            ("shift_magnitude", self.shift_magnitude),
            ("speaker_offset_scale", self.speaker_offset_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.shifted_fraction) {
            return bad(format!("shifted_fraction must lie in [0, 1], got {}", self.shifted_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub id: String,
    pub accent: usize,
    /// Position among the speakers of this accent, across all splits.
    pub index: usize,
    pub split: Split,
    pub offset: Vec<f64>,
}

/// Per-accent shift vectors, one per subword id.
#[derive(Clone, Debug, PartialEq)]
pub struct AccentSpec {
    pub accent_id: usize,
    pub shift_table: Vec<Vec<f64>>,
    pub shifted_set: BTreeSet<SubwordId>,
    pub shift_magnitude: f64,
}

impl AccentSpec {
    pub fn shift(&self, s: SubwordId) -> &[f64] {
        &self.shift_table[s.index()]
    }
}

/// Everything needed to sample utterances: lexicon, inventory, embeddings,
/// accent shifts and speakers.
#[derive(Clone, Debug)]
pub struct World {
    pub config: CorpusConfig,
    /// Words with their sampling frequencies.
    pub lexicon: Vec<(String, u64)>,
    pub inventory: SubwordInventory,
    /// Segmentation of every lexicon word.
    pub word_subwords: Vec<Vec<SubwordId>>,
    /// Base embedding per subword id; index 0 is the silence embedding.
    pub base: Vec<Vec<f64>>,
    pub accents: Vec<AccentSpec>,
    pub speakers: Vec<Speaker>,
}

impl World {
    pub fn shifted_set(&self) -> &BTreeSet<SubwordId> {
        &self.accents[0].shifted_set
    }

    pub fn speakers_in(&self, split: Split) -> impl Iterator<Item = &Speaker> {
        self.speakers.iter().filter(move |s| s.split == split)
    }

    pub fn speaker(&self, id: &str) -> Option<&Speaker> {
        self.speakers.iter().find(|s| s.id == id)
    }
}

fn random_word<R: Rng + ?Sized>(rng: &mut R) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    w
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..=1.0) * scale).collect()
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 1e-12 {
            return v.into_iter().map(|x| x / len * norm).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Builds the lexicon, inventory, embeddings, accent shifts and speakers.
pub fn build_world(cfg: &CorpusConfig) -> Result<World> {
    cfg.validate()?;
    let seed = cfg.seed;

    let mut rng = stream(seed, &[TAG_LEXICON]);
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(cfg.lexicon_size);
    let mut attempts = 0;
    while words.len() < cfg.lexicon_size {
        attempts += 1;
        if attempts > 1000 * cfg.lexicon_size {
            return Err(Error::Config(format!("cannot draw {} distinct words", cfg.lexicon_size)));
        }
        let w = random_word(&mut rng);
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    // Zipf-like frequencies by draw order.
    let lexicon: Vec<(String, u64)> = words
        .into_iter()
        .enumerate()
        .map(|(r, w)| (w, (100.0 / (r as f64 + 1.0)).ceil() as u64))
        .collect();

    let counts: BTreeMap<String, u64> = lexicon.iter().cloned().collect();
    let inventory = bpe_train(&counts, cfg.num_merges)?;
    if inventory.merges().len() < cfg.num_merges {
        return Err(Error::Config(format!(
            "lexicon too small for the requested vocabulary: learned {} of {} merges",
            inventory.merges().len(),
            cfg.num_merges
        )));
    }
    let word_subwords = lexicon
        .iter()
        .map(|(w, _)| bpe_encode(w, &inventory))
        .collect::<Result<Vec<_>>>()?;

    let vocab = inventory.size();
    let mut rng = stream(seed, &[TAG_BASE]);
    let base: Vec<Vec<f64>> = (0..vocab).map(|_| uniform_vec(&mut rng, cfg.feat_dim, cfg.base_scale)).collect();

    let mut rng = stream(seed, &[TAG_SHIFTED_SET]);
    let candidates: Vec<SubwordId> = (1..vocab as u32).map(SubwordId).collect();
    let n_shifted = (cfg.shifted_fraction * candidates.len() as f64).round() as usize;
    let shifted_set: BTreeSet<SubwordId> = rand::seq::index::sample(&mut rng, candidates.len(), n_shifted)
        .into_iter()
        .map(|i| candidates[i])
        .collect();

    let k = cfg.num_accents;
    let mut tables = vec![vec![vec![0.0; cfg.feat_dim]; vocab]; k];
    for &s in &shifted_set {
        let mut rng = stream(seed, &[TAG_SHIFT, s.0 as u64]);
        let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut tries = 0;
        while chosen.len() < k {
            tries += 1;
            let v = random_direction(&mut rng, cfg.feat_dim, cfg.shift_magnitude);
            let far = chosen.iter().all(|c| distance(c, &v) >= cfg.shift_magnitude / 2.0);
            // one-dimensional features can only hold two well-separated directions
            if far || tries > 10_000 {
                chosen.push(v);
            }
        }
        for (a, v) in chosen.into_iter().enumerate() {
            tables[a][s.index()] = v;
        }
    }
    let accents = tables
        .into_iter()
        .enumerate()
        .map(|(accent_id, shift_table)| AccentSpec {
            accent_id,
            shift_table,
            shifted_set: shifted_set.clone(),
            shift_magnitude: cfg.shift_magnitude,
        })
        .collect();

    let mut speakers = Vec::new();
    for accent in 0..k {
        let splits = std::iter::repeat_n(Split::Train, cfg.train_speakers)
            .chain(std::iter::repeat_n(Split::Dev, cfg.dev_speakers))
            .chain(std::iter::repeat_n(Split::Test, cfg.test_speakers));
        for (index, split) in splits.enumerate() {
            let mut rng = stream(seed, &[TAG_SPEAKER, accent as u64, index as u64]);
            speakers.push(Speaker {
                id: format!("a{accent}-{split}-s{index:02}"),
                accent,
                index,
                split,
                offset: uniform_vec(&mut rng, cfg.feat_dim, cfg.speaker_offset_scale),
            });
        }
    }

    Ok(World {
        config: cfg.clone(),
        lexicon,
        inventory,
        word_subwords,
        base,
        accents,
        speakers,
    })
}

/// One synthetic utterance with its alignment and frames.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceSample {
    pub id: String,
    pub accent: usize,
    pub speaker: String,
    pub segments: Vec<SubwordSegment>,
    /// `T × feat_dim`, `T` = sum of segment durations.
    pub frames: Matrix,
}

impl UtteranceSample {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

/// The per-utterance stream: a function of master seed, accent, speaker and
/// utterance index only.
pub fn utterance_rng(seed: u64, accent: usize, speaker_index: usize, utterance: usize) -> ChaCha8Rng {
    stream(seed, &[TAG_UTTERANCE, accent as u64, speaker_index as u64, utterance as u64])
}

/// Samples a word sequence, its alignment and frames for one speaker.
pub fn sample_utterance<R: Rng + ?Sized>(
    world: &World,
    accent: usize,
    speaker: &Speaker,
    utterance: usize,
    rng: &mut R,
) -> Result<UtteranceSample> {
    let cfg = &world.config;
    if accent >= world.accents.len() {
        return Err(Error::Invalid(format!("accent {accent} out of range")));
    }
    if !world.speakers.iter().any(|s| s.id == speaker.id) {
        return Err(Error::Invalid(format!("unknown speaker {}", speaker.id)));
    }
    let weights = WeightedIndex::new(world.lexicon.iter().map(|(_, f)| *f)).expect("positive frequencies");
    let n_words = cfg.words_per_utterance.sample(rng);
    let mut segments = Vec::new();
    for w in 0..n_words {
        if w > 0 {
            segments.push(SubwordSegment::new(SubwordId::SILENCE, cfg.silence_frames.sample(rng)));
        }
        let word = weights.sample(rng);
        for &s in &world.word_subwords[word] {
            segments.push(SubwordSegment::new(s, cfg.frames_per_subword.sample(rng)));
        }
    }

    let total: usize = segments.iter().map(|s| s.duration as usize).sum();
    let noise = Normal::new(0.0, cfg.noise_scale).map_err(|e| Error::Config(e.to_string()))?;
    let profile = &world.accents[accent];
    let mut frames = Matrix::zeros(total, cfg.feat_dim);
    let mut t = 0;
    for seg in &segments {
        let base = &world.base[seg.subword.index()];
        let shift = profile.shift(seg.subword);
        for _ in 0..seg.duration {
            for (j, v) in frames.row_mut(t).iter_mut().enumerate() {
                let eps = if cfg.noise_scale > 0.0 { noise.sample(rng) } else { 0.0 };
                *v = base[j] + shift[j] + speaker.offset[j] + eps;
            }
            t += 1;
        }
    }
    Ok(UtteranceSample {
        id: format!("{}-u{utterance:03}", speaker.id),
        accent,
        speaker: speaker.id.clone(),
        segments,
        frames,
    })
}

/// Utterances of one split, ordered by accent, speaker, utterance index.
pub fn generate_split(world: &World, split: Split) -> Result<Vec<UtteranceSample>> {
    let cfg = &world.config;
    let mut out = Vec::new();
    for spk in world.speakers_in(split) {
        for u in 0..cfg.utterances_per_speaker {
            let mut rng = utterance_rng(cfg.seed, spk.accent, spk.index, u);
            out.push(sample_utterance(world, spk.accent, spk, u, &mut rng)?);
        }
    }
    Ok(out)
}

/// A generated corpus held in memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub world: World,
    pub train: Vec<UtteranceSample>,
    pub dev: Vec<UtteranceSample>,
    pub test: Vec<UtteranceSample>,
}

impl Corpus {
    pub fn generate(cfg: &CorpusConfig) -> Result<Self> {
        let world = build_world(cfg)?;
        Ok(Corpus {
            train: generate_split(&world, Split::Train)?,
            dev: generate_split(&world, Split::Dev)?,
            test: generate_split(&world, Split::Test)?,
            world,
        })
    }

    pub fn split(&self, split: Split) -> &[UtteranceSample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Replaces each non-silence subword id, independently with probability `p`,
/// by a uniformly drawn different non-silence id. Durations are kept.
pub fn corrupt_text<R: Rng + ?Sized>(
    segments: &[SubwordSegment],
    p: f64,
    vocab_size: usize,
    rng: &mut R,
) -> Vec<SubwordSegment> {
    let choices = vocab_size.saturating_sub(1) as u32;
    segments
        .iter()
        .map(|seg| {
            if seg.subword.is_silence() || choices < 2 || !rng.random_bool(p.clamp(0.0, 1.0)) {
                return *seg;
            }
            // draw from 1..vocab without the original id
            let mut id = rng.random_range(1..choices);
            if id >= seg.subword.0 {
                id += 1;
            }
            SubwordSegment::new(SubwordId(id), seg.duration)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    accent: usize,
    speaker: String,
    segments: Vec<(u32, u32)>,
    frames: Vec<Vec<f64>>,
}

impl From<&UtteranceSample> for UtteranceRecord {
    fn from(u: &UtteranceSample) -> Self {
        UtteranceRecord {
            id: u.id.clone(),
            accent: u.accent,
            speaker: u.speaker.clone(),
            segments: u.segments.iter().map(|s| (s.subword.0, s.duration)).collect(),
            frames: (0..u.frames.rows()).map(|t| u.frames.row(t).to_vec()).collect(),
        }
    }
}

impl TryFrom<UtteranceRecord> for UtteranceSample {
    type Error = Error;

    fn try_from(r: UtteranceRecord) -> Result<Self> {
        let segments: Vec<_> = r.segments.iter().map(|&(id, d)| SubwordSegment::new(SubwordId(id), d)).collect();
        let frames = Matrix::from_rows(&r.frames)?;
        let total: usize = segments.iter().map(|s| s.duration as usize).sum();
        if total != frames.rows() {
            return Err(Error::Invalid(format!(
                "utterance {}: {} frames but segment durations sum to {total}",
                r.id,
                frames.rows()
            )));
        }
        Ok(UtteranceSample {
            id: r.id,
            accent: r.accent,
            speaker: r.speaker,
            segments,
            frames,
        })
    }
}

/// Writes one JSON record per line.
pub fn write_jsonl(path: &Path, utterances: &[UtteranceSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for u in utterances {
        serde_json::to_writer(&mut w, &UtteranceRecord::from(u)).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<UtteranceSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        out.push(rec.try_into()?);
    }
    Ok(out)
}

/// Sidecar describing a generated corpus directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub inventory: String,
    pub splits: BTreeMap<Split, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Path of a file named in the manifest, relative to the manifest's directory.
    pub fn resolve(manifest_path: &Path, name: &str) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(name)
    }
}

/// Generates all three splits and writes them, the inventory and the
/// manifest into `out_dir`. Returns the manifest path.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<PathBuf> {
    let corpus = Corpus::generate(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let inventory = "inventory.json".to_string();
    corpus.world.inventory.save(&out_dir.join(&inventory))?;
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let name = format!("{split}.jsonl");
        write_jsonl(&out_dir.join(&name), corpus.split(split))?;
        splits.insert(split, name);
    }
    let manifest = Manifest {
        config: cfg.clone(),
        inventory,
        splits,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            train_speakers: 3,
            dev_speakers: 1,
            test_speakers: 1,
            utterances_per_speaker: 4,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn default_world_shape() {
        let w = build_world(&CorpusConfig::default()).unwrap();
        assert_eq!(w.lexicon.len(), 60);
        assert_eq!(w.inventory.merges().len(), 25);
        assert!((34..=46).contains(&w.inventory.size()), "vocab {}", w.inventory.size());
        assert_eq!(w.accents.len(), 4);
        let non_sil = w.inventory.size() - 1;
        assert_eq!(w.shifted_set().len(), (non_sil as f64 * 0.5).round() as usize);
        assert!(!w.shifted_set().contains(&SubwordId::SILENCE));
    }

    #[test]
    fn accent_spec_invariants() {
        let cfg = CorpusConfig::default();
        let w = build_world(&cfg).unwrap();
        for s in 0..w.inventory.size() as u32 {
            let s = SubwordId(s);
            for a in &w.accents {
                let norm = a.shift(s).iter().map(|x| x * x).sum::<f64>().sqrt();
                if w.shifted_set().contains(&s) {
                    assert!((norm - cfg.shift_magnitude).abs() < 1e-12);
                } else {
                    assert!(a.shift(s).iter().all(|&x| x == 0.0));
                }
            }
            if w.shifted_set().contains(&s) {
                for i in 0..w.accents.len() {
                    for j in i + 1..w.accents.len() {
                        let d = distance(w.accents[i].shift(s), w.accents[j].shift(s));
                        assert!(d >= cfg.shift_magnitude / 2.0);
                    }
                }
            }
        }
    }

    #[test]
    fn world_is_deterministic() {
        let a = build_world(&small()).unwrap();
        let b = build_world(&small()).unwrap();
        assert_eq!(a.base, b.base);
        assert_eq!(a.accents, b.accents);
        assert_eq!(a.speakers, b.speakers);
        assert_eq!(a.inventory, b.inventory);
    }

    #[test]
    fn config_errors() {
        let one_accent = CorpusConfig {
            num_accents: 1,
            ..small()
        };
        assert!(matches!(build_world(&one_accent), Err(Error::Config(_))));
        let tiny_lexicon = CorpusConfig {
            lexicon_size: 3,
            ..small()
        };
        assert!(matches!(build_world(&tiny_lexicon), Err(Error::Config(_))));
        let negative = CorpusConfig {
            noise_scale: -1.0,
            ..small()
        };
        assert!(negative.validate().is_err());
    }

    #[test]
    fn noiseless_frames_are_exact() {
        let cfg = CorpusConfig {
            noise_scale: 0.0,
            speaker_offset_scale: 0.0,
            ..small()
        };
        let w = build_world(&cfg).unwrap();
        let spk = &w.speakers[0];
        let mut rng = utterance_rng(cfg.seed, 0, 0, 0);
        let u = sample_utterance(&w, 0, spk, 0, &mut rng).unwrap();
        let mut t = 0;
        for seg in &u.segments {
            for _ in 0..seg.duration {
                for j in 0..cfg.feat_dim {
                    let expected = w.base[seg.subword.index()][j] + w.accents[0].shift(seg.subword)[j];
                    assert_eq!(u.frames.get(t, j), expected);
                }
                t += 1;
            }
        }
        assert_eq!(t, u.num_frames());
    }

    #[test]
    fn speaker_offset_difference_is_exact() {
        let cfg = CorpusConfig {
            noise_scale: 0.0,
            ..small()
        };
        let w = build_world(&cfg).unwrap();
        let (s1, s2) = (&w.speakers[0], &w.speakers[1]);
        assert_eq!(s1.accent, s2.accent);
        // identical word draws because the utterance stream is shared
        let mut r1 = utterance_rng(cfg.seed, 0, 0, 0);
        let mut r2 = utterance_rng(cfg.seed, 0, 0, 0);
        let u1 = sample_utterance(&w, 0, s1, 0, &mut r1).unwrap();
        let u2 = sample_utterance(&w, 0, s2, 0, &mut r2).unwrap();
        assert_eq!(u1.segments, u2.segments);
        for t in 0..u1.num_frames() {
            for j in 0..cfg.feat_dim {
                let diff = u1.frames.get(t, j) - u2.frames.get(t, j);
                assert!((diff - (s1.offset[j] - s2.offset[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unshifted_subwords_match_across_accents_without_nuisance() {
        let cfg = CorpusConfig {
            noise_scale: 0.0,
            speaker_offset_scale: 0.0,
            ..small()
        };
        let c = Corpus::generate(&cfg).unwrap();
        let mut seen: BTreeMap<SubwordId, Vec<f64>> = BTreeMap::new();
        for u in &c.train {
            let mut t = 0;
            for seg in &u.segments {
                if !c.world.shifted_set().contains(&seg.subword) {
                    let row = u.frames.row(t).to_vec();
                    let prev = seen.entry(seg.subword).or_insert_with(|| row.clone());
                    assert_eq!(prev, &row);
                }
                t += seg.duration as usize;
            }
        }
    }

    #[test]
    fn utterances_are_order_independent() {
        let w = build_world(&small()).unwrap();
        let spk = &w.speakers[2];
        let direct = {
            let mut rng = utterance_rng(w.config.seed, spk.accent, spk.index, 3);
            sample_utterance(&w, spk.accent, spk, 3, &mut rng).unwrap()
        };
        let split = generate_split(&w, Split::Train).unwrap();
        assert_eq!(split.iter().find(|u| u.id == direct.id).unwrap(), &direct);
    }

    #[test]
    fn splits_are_speaker_disjoint_and_balanced() {
        let cfg = small();
        let c = Corpus::generate(&cfg).unwrap();
        let speakers = |s: Split| c.split(s).iter().map(|u| u.speaker.clone()).collect::<BTreeSet<_>>();
        let (tr, dv, te) = (speakers(Split::Train), speakers(Split::Dev), speakers(Split::Test));
        assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
        let total = c.train.len() + c.dev.len() + c.test.len();
        assert_eq!(total, 4 * (3 + 1 + 1) * 4);
        for split in Split::ALL {
            let mut per_accent = [0; 4];
            c.split(split).iter().for_each(|u| per_accent[u.accent] += 1);
            assert!(per_accent.iter().all(|&n| n == per_accent[0]));
        }
    }

    #[test]
    fn files_round_trip_and_regenerate_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let cfg = small();
        let ma = generate_corpus(&cfg, &a).unwrap();
        generate_corpus(&cfg, &b).unwrap();
        for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "inventory.json", "manifest.json"] {
            assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
        }
        let manifest = Manifest::load(&ma).unwrap();
        assert_eq!(manifest.config, cfg);
        let test = read_jsonl(&Manifest::resolve(&ma, &manifest.splits[&Split::Test])).unwrap();
        assert_eq!(test, Corpus::generate(&cfg).unwrap().test);

        let line = std::fs::read_to_string(a.join("dev.jsonl")).unwrap();
        let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["id", "accent", "speaker", "segments", "frames"] {
            assert!(rec.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn missing_output_dir_parent_reports_path() {
        let err = write_jsonl(Path::new("/nonexistent/dir/x.jsonl"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.jsonl"));
    }

    #[test]
    fn corruption_edge_rates() {
        let segs: Vec<_> = (0..200u32)
            .map(|i| SubwordSegment::new(SubwordId(i % 10), 1 + i % 3))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(corrupt_text(&segs, 0.0, 10, &mut rng), segs);
        let all = corrupt_text(&segs, 1.0, 10, &mut rng);
        for (a, b) in segs.iter().zip(&all) {
            assert_eq!(a.duration, b.duration);
            if a.subword.is_silence() {
                assert_eq!(a, b);
            } else {
                assert_ne!(a.subword, b.subword);
                assert!(!b.subword.is_silence() && b.subword.index() < 10);
            }
        }
    }

    #[test]
    fn corruption_rate_within_binomial_bound() {
        let n = 10_000;
        let p = 0.06;
        let segs: Vec<_> = (0..n).map(|i| SubwordSegment::new(SubwordId(1 + (i % 30) as u32), 2)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = corrupt_text(&segs, p, 31, &mut rng);
        let changed = segs.iter().zip(&out).filter(|(a, b)| a != b).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((changed - n as f64 * p).abs() <= 3.0 * sigma, "changed {changed}");
    }

    /// With large shifts and small nuisance terms, matching each utterance's
    /// shifted-subword frames against the per-accent centroids
    /// `base + shift(a)` classifies nearly perfectly, so the task is solvable.
    #[test]
    fn nearest_centroid_oracle_solves_easy_world() {
        let cfg = CorpusConfig {
            shift_magnitude: 3.0,
            noise_scale: 0.3,
            speaker_offset_scale: 0.3,
            ..CorpusConfig::default()
        };
        let c = Corpus::generate(&cfg).unwrap();
        let w = &c.world;
        let mut correct = 0;
        for u in &c.test {
            let mut score = vec![0.0; w.accents.len()];
            let mut t = 0;
            for seg in &u.segments {
                for _ in 0..seg.duration {
                    if w.shifted_set().contains(&seg.subword) {
                        for (a, profile) in w.accents.iter().enumerate() {
                            let base = &w.base[seg.subword.index()];
                            score[a] += (0..cfg.feat_dim)
                                .map(|j| (u.frames.get(t, j) - base[j] - profile.shift(seg.subword)[j]).powi(2))
                                .sum::<f64>();
                        }
                    }
                    t += 1;
                }
            }
            let pred = (0..score.len()).min_by(|&a, &b| score[a].total_cmp(&score[b])).unwrap();
            correct += usize::from(pred == u.accent);
        }
        let acc = correct as f64 / c.test.len() as f64;
        assert!(acc >= 0.99, "oracle accuracy {acc}");
    }

    /// Two accents with opposite shifts on one subword: the sign of the
    /// projection of that subword's mean residual onto the shift direction
    /// separates them exactly when there is no noise.
    #[test]
    fn opposite_shift_construction_separates_perfectly() {
        let cfg = CorpusConfig {
            num_accents: 2,
            noise_scale: 0.0,
            speaker_offset_scale: 0.0,
            ..small()
        };
        let mut w = build_world(&cfg).unwrap();
        let target = SubwordId(1);
        let dir: Vec<f64> = (0..cfg.feat_dim).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect();
        for (a, profile) in w.accents.iter_mut().enumerate() {
            profile.shifted_set = [target].into_iter().collect();
            for (s, v) in profile.shift_table.iter_mut().enumerate() {
                v.fill(0.0);
                if s == target.index() {
                    let sign = if a == 0 { 1.0 } else { -1.0 };
                    *v = dir.iter().map(|d| d * sign).collect();
                }
            }
        }
        let mut seen = 0;
        for spk in w.speakers.clone() {
            for u in 0..cfg.utterances_per_speaker {
                let mut rng = utterance_rng(cfg.seed, spk.accent, spk.index, u);
                let utt = sample_utterance(&w, spk.accent, &spk, u, &mut rng).unwrap();
                let mut t = 0;
                for seg in &utt.segments {
                    if seg.subword == target {
                        let resid = utt.frames.get(t, 0) - w.base[target.index()][0];
                        let pred = if resid > 0.0 { 0 } else { 1 };
                        assert_eq!(pred, spk.accent);
                        seen += 1;
                    }
                    t += seg.duration as usize;
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn zero_shift_world_is_accent_free() {
        let cfg = CorpusConfig {
            shift_magnitude: 0.0,
            ..small()
        };
        let w = build_world(&cfg).unwrap();
        assert!(w
            .accents
            .iter()
            .all(|a| a.shift_table.iter().flatten().all(|&x| x == 0.0)));
    }
}

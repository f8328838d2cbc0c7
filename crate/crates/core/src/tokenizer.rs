//! Byte-pair-encoding subword inventory over a character lexicon, and
//! expansion of aligned subword segments into frame-level id streams.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Dense subword index. Id 0 is reserved for silence / padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubwordId(pub u32);

impl SubwordId {
    pub const SILENCE: SubwordId = SubwordId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_silence(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for SubwordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Printable name of the silence symbol.
pub const SILENCE_SYMBOL: &str = "<sil>";

/// Learned merges plus the symbol ↔ id table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordInventory {
    merges: Vec<(String, String)>,
    symbols: Vec<String>,
    ids: BTreeMap<String, SubwordId>,
}

#[derive(Serialize, Deserialize)]
struct InventoryJson {
    merges: Vec<(String, String)>,
    ids: BTreeMap<String, u32>,
}

impl SubwordInventory {
    /// Inventory from an alphabet and merge list. Ids: silence, then the
    /// alphabet in sorted order, then each new merged symbol in merge order.
    fn from_parts(alphabet: &BTreeSet<String>, merges: Vec<(String, String)>) -> Self {
        let mut symbols = vec![SILENCE_SYMBOL.to_string()];
        let mut ids = BTreeMap::new();
        let mut push = |s: String, symbols: &mut Vec<String>| {
            if !ids.contains_key(&s) {
                ids.insert(s.clone(), SubwordId(symbols.len() as u32));
                symbols.push(s);
            }
        };
        for c in alphabet {
            push(c.clone(), &mut symbols);
        }
        for (l, r) in &merges {
            push(format!("{l}{r}"), &mut symbols);
        }
        SubwordInventory {
            merges,
            symbols,
            ids,
        }
    }

    /// Number of ids including silence (the one-hot text width).
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id(&self, symbol: &str) -> Option<SubwordId> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: SubwordId) -> Option<&str> {
        self.symbols.get(id.index()).map(String::as_str)
    }

    /// Concatenation of the symbols of `ids`; silence decodes to nothing.
    pub fn decode(&self, ids: &[SubwordId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id.is_silence() {
                continue;
            }
            let sym = self
                .symbol(id)
                .ok_or_else(|| Error::Invalid(format!("subword id {id} out of range")))?;
            out.push_str(sym);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let doc = InventoryJson {
            merges: self.merges.clone(),
            ids: self.ids.iter().map(|(s, id)| (s.clone(), id.0)).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("inventory serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InventoryJson = serde_json::from_str(text).map_err(|e| Error::json("<inventory>", e))?;
        let mut symbols = vec![String::new(); doc.ids.len() + 1];
        symbols[0] = SILENCE_SYMBOL.to_string();
        for (s, &id) in &doc.ids {
            let slot = symbols
                .get_mut(id as usize)
                .filter(|_| id != 0)
                .ok_or_else(|| Error::Invalid(format!("inventory ids are not dense 1..={}", doc.ids.len())))?;
            if !slot.is_empty() {
                return Err(Error::Invalid(format!("duplicate inventory id {id}")));
            }
            *slot = s.clone();
        }
        Ok(SubwordInventory {
            merges: doc.merges,
            ids: doc.ids.into_iter().map(|(s, id)| (s, SubwordId(id))).collect(),
            symbols,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn split_chars(word: &str) -> Vec<String> {
    word.chars().map(String::from).collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges by repeatedly joining the most frequent
/// adjacent symbol pair (weighted by word frequency). Ties go to the
/// lexicographically smallest `(left, right)`. Training stops early once no
/// pair occurs at least twice.
pub fn bpe_train(corpus: &BTreeMap<String, u64>, num_merges: usize) -> Result<SubwordInventory> {
    if corpus.is_empty() || corpus.keys().all(|w| w.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let alphabet: BTreeSet<String> = corpus.keys().flat_map(|w| split_chars(w)).collect();
    let mut words: Vec<(Vec<String>, u64)> = corpus.iter().map(|(w, &f)| (split_chars(w), f)).collect();
    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (syms, freq) in &words {
            for pair in syms.windows(2) {
                *counts.entry((&pair[0], &pair[1])).or_default() += freq;
            }
        }
        // BTreeMap iterates pairs in ascending order, so the first maximum wins ties.
        let mut best: Option<((&str, &str), u64)> = None;
        for (&pair, &count) in &counts {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in &mut words {
            *syms = merge_pair(syms, &l, &r);
        }
        merges.push((l, r));
    }
    Ok(SubwordInventory::from_parts(&alphabet, merges))
}

/// Segments `word` by applying the learned merges in order.
pub fn bpe_encode(word: &str, inv: &SubwordInventory) -> Result<Vec<SubwordId>> {
    if let Some(c) = word.chars().find(|c| inv.id(&c.to_string()).is_none()) {
        return Err(Error::UnknownSymbol(c));
    }
    let mut syms = split_chars(word);
    for (l, r) in &inv.merges {
        if syms.len() < 2 {
            break;
        }
        syms = merge_pair(&syms, l, r);
    }
    syms.iter()
        .map(|s| {
            inv.id(s)
                .ok_or_else(|| Error::Invalid(format!("merged symbol {s:?} missing from id table")))
        })
        .collect()
}

/// One aligned subword and the number of frames it spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordSegment {
    pub subword: SubwordId,
    pub duration: u32,
}

impl SubwordSegment {
    pub fn new(subword: SubwordId, duration: u32) -> Self {
        SubwordSegment { subword, duration }
    }
}

/// Repeats each segment's id `duration` times, in order.
pub fn expand_alignment(segments: &[SubwordSegment]) -> Result<Vec<SubwordId>> {
    if segments.is_empty() {
        return Err(Error::Invalid("alignment has no segments".into()));
    }
    let mut out = Vec::with_capacity(segments.iter().map(|s| s.duration as usize).sum());
    for (i, s) in segments.iter().enumerate() {
        if s.duration == 0 {
            return Err(Error::Invalid(format!("segment {i} has zero duration")));
        }
        out.extend(std::iter::repeat_n(s.subword, s.duration as usize));
    }
    Ok(out)
}

/// `T × width` one-hot rows for a frame-level id stream.
pub fn one_hot(ids: &[SubwordId], width: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(ids.len(), width);
    for (t, id) in ids.iter().enumerate() {
        if id.index() >= width {
            return Err(Error::Invalid(format!("subword id {id} out of range for width {width}")));
        }
        m.set(t, id.index(), 1.0);
    }
    Ok(m)
}

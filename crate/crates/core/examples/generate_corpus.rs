//! Generates the default synthetic accent corpus into a directory.
//!
//! Usage: generate_corpus [OUT_DIR] [SEED]

use std::path::PathBuf;

use lasas::synthgen::{generate_corpus, Corpus, CorpusConfig, Split};

fn main() -> lasas::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let mut cfg = CorpusConfig::default();
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse().expect("seed must be an integer");
    }
    let manifest = generate_corpus(&cfg, &out)?;
    let corpus = Corpus::generate(&cfg)?;
    println!("manifest: {}", manifest.display());
    println!("subword vocabulary: {}", corpus.world.inventory.size());
    println!("shifted subwords: {}", corpus.world.shifted_set().len());
    for split in Split::ALL {
        let utts = corpus.split(split);
        let frames: usize = utts.iter().map(|u| u.num_frames()).sum();
        println!("{split:>5}: {} utterances, {:.1} frames on average", utts.len(), frames as f64 / utts.len() as f64);
    }
    Ok(())
}

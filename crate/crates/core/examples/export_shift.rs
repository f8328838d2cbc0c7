//! Trains a LASAS system, then writes mean accent shifts per (subword,
//! accent) and their 2-D PCA projection as CSV files.
//!
//! Usage: export_shift [OUT_DIR] [EPOCHS]

use std::path::PathBuf;

use lasas::harness::{export_shift_viz, train_on, CorpusData, ExperimentConfig};
use lasas::synthgen::{Corpus, CorpusConfig, Split};

fn main() -> lasas::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "shift_export".into()));
    let mut cfg = ExperimentConfig::default();
    if let Some(e) = args.next() {
        cfg.optimizer.epochs = e.parse().expect("epochs must be an integer");
    }
    let corpus = Corpus::generate(&CorpusConfig::default())?;
    let data = CorpusData::from_corpus(&corpus);
    let trained = train_on(&cfg, &data)?;
    println!("test accuracy {:.4}", trained.report.test_accuracy);
    let test = data.prepare_split(Split::Test, 0.0, cfg.seed)?;
    let meta = export_shift_viz(&trained.model, &test, &data.inventory, cfg.seed, &out)?;
    println!("wrote {}", meta.display());
    let shifted: Vec<&str> = corpus
        .world
        .shifted_set()
        .iter()
        .filter_map(|&s| data.inventory.symbol(s))
        .collect();
    println!("subwords carrying accent shifts: {shifted:?}");
    Ok(())
}

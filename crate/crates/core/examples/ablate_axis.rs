//! Runs one ablation axis with three seeds on the default corpus.
//!
//! Usage: ablate_axis [spaces|variant|taps|corruption] [EPOCHS]

use lasas::harness::{ablate_with, Axis, CorpusData, ExperimentConfig};
use lasas::synthgen::{Corpus, CorpusConfig};

fn main() -> lasas::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis: Axis = args.next().as_deref().unwrap_or("spaces").parse()?;
    let mut cfg = ExperimentConfig::default();
    if let Some(e) = args.next() {
        cfg.optimizer.epochs = e.parse().expect("epochs must be an integer");
    }
    let data = CorpusData::from_corpus(&Corpus::generate(&CorpusConfig::default())?);
    let table = ablate_with(&cfg, axis, &data, |setting, outcome| {
        eprintln!("{} seed {}: test {:.4}", setting.label, setting.config.seed, outcome.report.test_accuracy);
        Ok(())
    })?;
    print!("{}", table.render());
    Ok(())
}

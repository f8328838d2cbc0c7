//! Trains one system on the default corpus and prints its report.
//!
//! Usage: train_variant [lasas|direct_concat|acoustic_only] [SEED] [EPOCHS]

use lasas::arhead::SystemVariant;
use lasas::harness::{train_on, CorpusData, ExperimentConfig};
use lasas::synthgen::{Corpus, CorpusConfig};

fn main() -> lasas::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = args.next() {
        cfg.variant = v.parse::<SystemVariant>()?;
    }
    if let Some(s) = args.next() {
        cfg.seed = s.parse().expect("seed must be an integer");
    }
    if let Some(e) = args.next() {
        cfg.optimizer.epochs = e.parse().expect("epochs must be an integer");
    }
    let data = CorpusData::from_corpus(&Corpus::generate(&CorpusConfig::default())?);
    let out = train_on(&cfg, &data)?;
    for e in &out.report.epochs {
        println!("epoch {:>2}  loss {:.4}  dev {:.4}", e.epoch, e.train_loss, e.dev_accuracy);
    }
    println!(
        "{} seed {}: best epoch {}, dev {:.4}, test {:.4}, {:.1}s",
        cfg.variant, cfg.seed, out.report.best_epoch, out.report.dev_accuracy, out.report.test_accuracy, out.wall_seconds
    );
    Ok(())
}

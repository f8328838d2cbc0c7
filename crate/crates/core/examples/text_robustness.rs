//! Trains LASAS with clean text and with 6% of subword labels replaced in
//! both training and evaluation transcripts.
//!
//! Usage: text_robustness [SEED] [EPOCHS]

use lasas::harness::{train_on, Corruption, CorpusData, ExperimentConfig};
use lasas::synthgen::{Corpus, CorpusConfig};

fn main() -> lasas::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::default();
    if let Some(s) = args.next() {
        cfg.seed = s.parse().expect("seed must be an integer");
    }
    if let Some(e) = args.next() {
        cfg.optimizer.epochs = e.parse().expect("epochs must be an integer");
    }
    let data = CorpusData::from_corpus(&Corpus::generate(&CorpusConfig::default())?);
    for corruption in [Corruption::new(0.0, 0.0), Corruption::new(0.06, 0.06)] {
        let run = ExperimentConfig {
            corruption,
            ..cfg.clone()
        };
        let out = train_on(&run, &data)?;
        println!(
            "p_train {:.2} p_eval {:.2}: test {:.4}",
            corruption.train, corruption.eval, out.report.test_accuracy
        );
    }
    Ok(())
}

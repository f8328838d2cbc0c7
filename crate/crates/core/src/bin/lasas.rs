use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lasas::harness::{self, Axis, CorpusData, ExperimentConfig, CHECKPOINT_FILE};
use lasas::synthgen::{generate_corpus, CorpusConfig, Split};
use lasas::{Error, Result};

/// Accent recognition with linguistic-acoustic similarity based accent shift.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (config: corpus settings).
    GenData(Common),
    /// Train one system and write report, checkpoint and timing.
    Train(Common),
    /// Score a checkpoint on dev and test.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every setting of one axis with three seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// spaces | variant | taps | corruption
        #[arg(long)]
        axis: Axis,
    },
    /// Export per-(subword, accent) mean accent shifts and their PCA projection.
    ExportShift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train | dev | test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference check of every module.
    Gradcheck(Common),
}

fn experiment(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let mut cfg = match &common.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    serde_json::from_str(&text).map_err(|e| Error::Json {
                        path: path.clone(),
                        source: e,
                    })?
                }
                None => CorpusConfig::default(),
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let out = common.out.unwrap_or_else(|| PathBuf::from("data"));
            let manifest = generate_corpus(&cfg, &out)?;
            println!("{}", manifest.display());
        }
        Command::Train(common) => {
            let cfg = experiment(&common)?;
            let report = harness::train(&cfg)?;
            println!(
                "{} seed {}: dev {:.4} test {:.4} (best epoch {}) -> {}",
                cfg.variant,
                cfg.seed,
                report.dev_accuracy,
                report.test_accuracy,
                report.best_epoch,
                cfg.out_dir.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = experiment(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE));
            let report = harness::eval(&cfg, &ckpt)?;
            write_json(&cfg.out_dir, "eval.json", &report)?;
            println!("dev {:.4} test {:.4}", report.dev_accuracy, report.test_accuracy);
        }
        Command::Ablate { common, axis } => {
            let cfg = experiment(&common)?;
            cfg.validate_files()?;
            let data = CorpusData::load(&cfg.manifest)?;
            let table = harness::ablate_with(&cfg, axis, &data, |setting, outcome| {
                let mut run = setting.config.clone();
                run.out_dir = cfg
                    .out_dir
                    .join(setting.label.replace(['=', ',', '+'], "_"))
                    .join(format!("seed{}", run.seed));
                eprintln!("{} seed {}: test {:.4}", setting.label, run.seed, outcome.report.test_accuracy);
                harness::write_run(&run, outcome.clone()).map(|_| ())
            })?;
            write_json(&cfg.out_dir, &format!("ablation_{axis}.json"), &table)?;
            print!("{}", table.render());
        }
        Command::ExportShift {
            common,
            checkpoint,
            split,
        } => {
            let cfg = experiment(&common)?;
            cfg.validate_files()?;
            let data = CorpusData::load(&cfg.manifest)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE));
            let (model, seed) = harness::load_checkpoint(&ckpt)?;
            let dataset = data.prepare_split(parse_split(&split)?, cfg.corruption.eval, seed)?;
            let meta = harness::export_shift_viz(&model, &dataset, &data.inventory, seed, &cfg.out_dir)?;
            println!("{}", meta.display());
        }
        Command::Gradcheck(common) => {
            let seed = common.seed.unwrap_or(0);
            let summary = harness::gradcheck(seed)?;
            for (module, err) in &summary.modules {
                println!("{module:<14} max relative error {err:.3e}");
            }
            if let Some(out) = &common.out {
                write_json(out, "gradcheck.json", &summary)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hea_core::harness::gradcheck::run_suite;
use hea_core::harness::synth::SynthConfig;
use hea_core::harness::{cmd_cv, cmd_evaluate, cmd_predict, cmd_synth, cmd_train, write_report, ModelConfig};
use hea_core::seq::ModelKind;

#[derive(Parser)]
#[command(name = "hea", version, about = "Early sepsis prediction from hourly ICU records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and pick its decision threshold on validation data.
    Train {
        #[arg(long)]
        train_dir: PathBuf,
        /// Validation patients; defaults to a stratified 10% of the training set.
        #[arg(long)]
        val_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Stratified k-fold cross-validation with vote ensembling on a test set.
    Cv {
        #[arg(long)]
        data_dir: PathBuf,
        /// Test patients; defaults to a stratified 10% of the data.
        #[arg(long)]
        test_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write one prediction file per patient.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Score prediction files against labeled patient files.
    Evaluate {
        #[arg(long)]
        label_dir: PathBuf,
        #[arg(long)]
        prediction_dir: PathBuf,
        /// Also write report.txt and report.kv here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the gradient-check suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        windows: usize,
    },
    /// Write a synthetic cohort with a planted sepsis signal.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        patients: usize,
        #[arg(long, default_value_t = 0.3)]
        septic_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Config file plus per-field overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Two comma-separated layer sizes.
    #[arg(long)]
    mlp_hidden: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epoch_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    positive_fraction: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ModelConfig::from_text(&text)?
            }
            None => ModelConfig::default(),
        };
        let overrides = [
            ("model", self.model.map(|m| m.to_string())),
            ("window_len", self.window_len.map(|v| v.to_string())),
            ("d", self.d.map(|v| v.to_string())),
            ("heads", self.heads.map(|v| v.to_string())),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("mlp_hidden", self.mlp_hidden.clone()),
            ("lr", self.lr.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("epoch_samples", self.epoch_samples.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("positive_fraction", self.positive_fraction.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            train_dir,
            val_dir,
            out_dir,
            config,
        } => {
            let cfg = config.resolve()?;
            let out = cmd_train(&cfg, &train_dir, val_dir.as_deref(), &out_dir)?;
            print!("{}", out.report.to_text());
            println!("\ncheckpoint written to {}", out.checkpoint_path.display());
        }
        Command::Cv {
            data_dir,
            test_dir,
            folds,
            out_dir,
            config,
        } => {
            let cfg = config.resolve()?;
            let out = cmd_cv(&cfg, &data_dir, test_dir.as_deref(), folds, &out_dir)?;
            print!("{}", out.report.to_text());
        }
        Command::Predict {
            checkpoint,
            input_dir,
            output_dir,
        } => {
            let n = cmd_predict(&checkpoint, &input_dir, &output_dir)?;
            println!("wrote {n} prediction files to {}", output_dir.display());
        }
        Command::Evaluate {
            label_dir,
            prediction_dir,
            out_dir,
        } => {
            let report = cmd_evaluate(&label_dir, &prediction_dir)?;
            print!("{}", report.to_text());
            if let Some(dir) = out_dir {
                write_report(&dir, &report)?;
            }
        }
        Command::Gradcheck { seed, windows } => {
            let entries = run_suite(seed, windows)?;
            let mut failed = 0;
            for e in &entries {
                let status = if e.passed() { "ok  " } else { "FAIL" };
                println!(
                    "{status} {:<40} max rel error {:.3e} (tol {:.0e}, {} components)",
                    e.name, e.max_rel_error, e.tolerance, e.n_checked
                );
                failed += usize::from(!e.passed());
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks failed", entries.len());
            }
        }
        Command::Synth {
            out_dir,
            patients,
            septic_fraction,
            seed,
        } => {
            let cfg = SynthConfig {
                n_patients: patients,
                septic_fraction,
                seed,
                ..SynthConfig::default()
            };
            let n = cmd_synth(&cfg, &out_dir)?;
            println!("wrote {n} patient files to {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fscnet::robustness::{PerturbKind, PerturbSpec};
use fscnet_cli::{cmd_count_params, cmd_eval, cmd_synth, cmd_train, recipe, CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fscnet", version, about = "Fuzzy sigmoid convolution classifier for brain MRI slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and evaluate it on the test split.
    Train {
        /// TOML config file. Sections not given keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from a named recipe: original, bias, noise, occlusion, smoke, desk.
        #[arg(long, conflicts_with = "config")]
        recipe: Option<String>,
        /// Override one field, e.g. `--set train.learning_rate=0.001`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Shorthand for `--set output.dir=...`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the resolved config and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluation-time perturbation with default strength.
        #[arg(long, value_enum)]
        perturb: Option<PerturbArg>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the trainable-parameter table.
    CountParams {
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        num_classes: usize,
    },
    /// Write a synthetic dataset as y*/no* PNG files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 62)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PerturbArg {
    Noise,
    Occlusion,
    Bias,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            recipe: name,
            overrides,
            out,
            dry_run,
        } => {
            let base = match (config, name) {
                (Some(path), _) => ExperimentConfig::load(&path)?,
                (None, Some(name)) => recipe(&name)?.resolved()?,
                (None, None) => ExperimentConfig::default().resolved()?,
            };
            let mut cfg = base.with_overrides(overrides.iter().map(String::as_str))?;
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            if dry_run {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let summary = cmd_train(&cfg, &mut |line| eprintln!("{line}"))?;
            println!("{}", summary.report);
            println!(
                "epochs {} (best {}), stopped by {:?}, {:.1}s, outputs in {}",
                summary.epochs_run,
                summary.best_epoch.map_or("none".into(), |e| e.to_string()),
                summary.stop,
                summary.seconds,
                summary.out_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            split,
            perturb,
            overrides,
        } => {
            let spec = perturb.map(|p| PerturbSpec {
                kind: match p {
                    PerturbArg::Noise => PerturbKind::Noise,
                    PerturbArg::Occlusion => PerturbKind::Occlusion,
                    PerturbArg::Bias => PerturbKind::Bias,
                },
                ..PerturbSpec::default()
            });
            let record = cmd_eval(&checkpoint, &overrides, &split, spec)?;
            println!("{}", record.to_json_line());
        }
        Command::CountParams { dim, num_classes } => {
            let report = cmd_count_params(fscnet::nn::ModelConfig { dim, num_classes })?;
            println!("{report}");
        }
        Command::Synth {
            out,
            per_class,
            size,
            seed,
        } => {
            let n = cmd_synth(&out, per_class, size, seed)?;
            println!("wrote {n} images to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Large per-layer buffers are reallocated every step; keeping them on
    // the heap instead of fresh mappings avoids repeated page faults.
    // SAFETY: called once before any other thread or allocation-heavy work.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_chain(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report_chain(e: &CliError) {
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

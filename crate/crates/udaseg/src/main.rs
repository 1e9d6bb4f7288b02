use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use udaseg::config;
use udaseg::error::{Result, UdasError};
use udaseg::{images, report, run};
use udaseg_core::scenegen::Split;
use udaseg_core::train::TrainConfig;

#[derive(Parser)]
#[command(
    name = "udaseg",
    version,
    about = "Adversarial domain adaptation with adaptive self-training on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, repeatable; applied after the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory (default `runs/<first 12 hex digits of the config hash>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the target domain; reads `config.txt` beside it.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = run::TEST_IMAGES)]
        images: usize,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the eight ablation configurations and write `ablation.csv`.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
    },
    /// Write sample scenes as PPM/PGM files.
    DumpData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scenes per split and domain.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Rebuild `threshold_trace.csv` from a run's metrics log.
    TraceThresholds {
        #[arg(long)]
        run: PathBuf,
        /// Output file (default `<run>/threshold_trace.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every configuration key with its default value.
    Schema,
}

fn load_config(path: &PathBuf, overrides: &[String]) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|source| UdasError::Io {
        path: path.clone(),
        source,
    })?;
    let mut cfg = config::parse(&text)?;
    for o in overrides {
        config::apply_override(&mut cfg, o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &PathBuf, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| UdasError::Io {
        path: path.clone(),
        source,
    })
}

fn execute(cli: Cli) -> Result<()> {
    let mut log = |msg: &str| eprintln!("{msg}");
    match cli.command {
        Command::Train {
            config: path,
            overrides,
            out,
        } => {
            let cfg = load_config(&path, &overrides)?;
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&config::config_hash(&cfg)[..12]));
            let summary = run::run_training(&cfg, &out, &mut log)?;
            println!(
                "run {}: best val mIoU {:.4} at step {}, final test mIoU {:.4}",
                out.display(),
                summary.best_val_miou,
                summary.best_step,
                summary.test_miou
            );
        }
        Command::Eval {
            checkpoint,
            split,
            images,
            out,
        } => {
            let (cfg, cm) = run::evaluate_checkpoint(&checkpoint, split.into(), images)?;
            let text = report::eval_report_csv(&cm, &cfg.scene.class_names()[..cfg.num_classes()]);
            print!("{text}");
            if let Some(out) = out {
                write(&out, &text)?;
            }
        }
        Command::Ablate {
            config: path,
            overrides,
            out,
        } => {
            let cfg = load_config(&path, &overrides)?;
            let rows = run::ablation_suite(&cfg, &out, &mut log)?;
            print!("{}", report::ablation_csv(&rows));
        }
        Command::DumpData {
            config: path,
            out,
            count,
        } => {
            let cfg = load_config(&path, &[])?;
            let files = images::dump_dataset(&cfg.scene, &out, count)?;
            println!("wrote {} files under {}", files.len(), out.display());
        }
        Command::TraceThresholds { run: dir, out } => {
            let cfg = run::config_for_checkpoint(&dir.join(run::CONFIG_FILE))?;
            let names = &cfg.scene.class_names()[..cfg.num_classes()];
            let text = report::trace_from_metrics(&dir.join(run::METRICS_FILE), cfg.percentile, names)?;
            let out = out.unwrap_or_else(|| dir.join(run::TRACE_FILE));
            write(&out, &text)?;
            println!("wrote {}", out.display());
        }
        Command::Schema => {
            let defaults = config::render(&TrainConfig::default());
            for ((_, doc), line) in config::SCHEMA.iter().zip(defaults.lines()) {
                println!("{line:<60} # {doc}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

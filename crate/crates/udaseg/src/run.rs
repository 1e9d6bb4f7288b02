//! Training runs on disk.
//!
//! A run directory holds:
//!
//! | file | content |
//! |------|---------|
//! | `config.txt` | canonical configuration |
//! | `metrics.csv` | one row per iteration; deterministic for a given config |
//! | `eval.csv` | `step,val_miou` at step 0, every `eval_interval` and the end |
//! | `timing.csv` | `step,elapsed_seconds`, kept apart so `metrics.csv` stays reproducible |
//! | `checkpoint_final.udas`, `checkpoint_best.udas` | final and best-validation weights |
//! | `threshold_trace.csv` | per-class threshold trace |
//! | `eval_test.csv` | test-split report of the final weights |
//! | `diagnostic.txt` | only written when a loss turns non-finite |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use udaseg_core::metrics::ConfusionMatrix;
use udaseg_core::scenegen::{Domain, Split};
use udaseg_core::train::{self, ablation_rows, Models, StepRecord, TrainConfig, Trainer};

use crate::checkpoint;
use crate::config;
use crate::error::{IoContext, Result};
use crate::report::{self, AblationRow};

/// Target test scenes scored at the end of a run.
pub const TEST_IMAGES: usize = 256;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.udas";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.udas";
pub const TRACE_FILE: &str = "threshold_trace.csv";

/// In-memory log of a run.
#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    /// `(iterations completed, validation mIoU)`.
    pub evals: Vec<(u64, f64)>,
    /// Seconds since the start, per step.
    pub wall_clock: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub best_val_miou: f64,
    pub best_step: u64,
    pub final_val_miou: f64,
    pub test_miou: f64,
    pub test: ConfusionMatrix,
}

fn miou(cm: &ConfusionMatrix) -> f64 {
    cm.miou(None).unwrap_or(0.0)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).at(path)?))
}

fn line(w: &mut impl Write, path: &Path, text: &str) -> Result<()> {
    writeln!(w, "{text}").at(path)
}

/// Trains `cfg` into `dir`, reporting progress through `log`.
pub fn run_training(cfg: &TrainConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir).at(dir)?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, config::render(cfg)).at(&cfg_path)?;
    let names = &cfg.scene.class_names()[..cfg.num_classes()];

    let metrics_path = dir.join(METRICS_FILE);
    let eval_path = dir.join("eval.csv");
    let timing_path = dir.join("timing.csv");
    let mut metrics = create(&metrics_path)?;
    let mut evals = create(&eval_path)?;
    let mut timing = create(&timing_path)?;
    line(&mut metrics, &metrics_path, &report::metrics_header(names))?;
    line(&mut evals, &eval_path, "step,val_miou")?;
    line(&mut timing, &timing_path, "step,elapsed_seconds")?;

    let mut trainer = Trainer::new(cfg.clone())?;
    let mut record = RunRecord::default();
    let started = Instant::now();
    let best_path = dir.join(BEST_CHECKPOINT);
    let mut best = (f64::NEG_INFINITY, 0);

    let mut validate = |trainer: &Trainer, record: &mut RunRecord, evals: &mut BufWriter<File>| -> Result<f64> {
        let done = trainer.state.step;
        let value = miou(&trainer.evaluate(Split::Val)?);
        record.evals.push((done, value));
        line(evals, &eval_path, &format!("{done},{value}"))?;
        if value > best.0 {
            best = (value, done);
            checkpoint::save_models(&best_path, &trainer.state.models)?;
        }
        Ok(value)
    };

    let mut final_val = validate(&trainer, &mut record, &mut evals)?;
    while !trainer.is_done() {
        let step = match trainer.step() {
            Ok(step) => step,
            Err(err) => {
                let diag = dir.join("diagnostic.txt");
                let last = record.steps.last();
                let text = format!("error: {err}\nlast completed step: {last:#?}\n");
                fs::write(&diag, text).at(&diag)?;
                metrics.flush().at(&metrics_path)?;
                return Err(err.into());
            }
        };
        line(&mut metrics, &metrics_path, &report::metrics_row(&step))?;
        let elapsed = started.elapsed().as_secs_f64();
        line(&mut timing, &timing_path, &format!("{},{elapsed}", step.step))?;
        record.wall_clock.push(elapsed);
        let done = trainer.state.step;
        let r = step.report;
        record.steps.push(step);
        if done % cfg.eval_interval == 0 || trainer.is_done() {
            final_val = validate(&trainer, &mut record, &mut evals)?;
            log(&format!(
                "step {done}/{} val_miou {final_val:.4} g0 {:.4} d1 {:.4} d2 {:.4} total {:.4} ({elapsed:.1}s)",
                cfg.iterations, r.g0, r.d1, r.d2, r.total
            ));
        }
    }
    for (w, p) in [
        (&mut metrics, &metrics_path),
        (&mut evals, &eval_path),
        (&mut timing, &timing_path),
    ] {
        w.flush().at(p)?;
    }

    checkpoint::save_models(&dir.join(FINAL_CHECKPOINT), &trainer.state.models)?;
    let trace_path = dir.join(TRACE_FILE);
    fs::write(
        &trace_path,
        report::threshold_trace_csv(&trainer.state.thresholds, names),
    )
    .at(&trace_path)?;
    let test = train::evaluate(
        &trainer.state.models.g,
        &cfg.scene,
        Domain::Target,
        Split::Test,
        TEST_IMAGES,
    )?;
    let test_path = dir.join("eval_test.csv");
    fs::write(&test_path, report::eval_report_csv(&test, names)).at(&test_path)?;

    Ok(RunSummary {
        dir: dir.to_path_buf(),
        record,
        best_val_miou: best.0,
        best_step: best.1,
        final_val_miou: final_val,
        test_miou: miou(&test),
        test,
    })
}

/// Configuration stored next to a checkpoint.
pub fn config_for_checkpoint(checkpoint: &Path) -> Result<TrainConfig> {
    let path = checkpoint.parent().unwrap_or_else(|| Path::new(".")).join(CONFIG_FILE);
    config::parse(&fs::read_to_string(&path).at(&path)?)
}

/// Loads a run checkpoint and scores `images` target scenes of `split`.
pub fn evaluate_checkpoint(checkpoint: &Path, split: Split, images: usize) -> Result<(TrainConfig, ConfusionMatrix)> {
    let cfg = config_for_checkpoint(checkpoint)?;
    let mut models = Models::build(&cfg)?;
    checkpoint::load_models(checkpoint, &mut models)?;
    let cm = train::evaluate(&models.g, &cfg.scene, Domain::Target, split, images)?;
    Ok((cfg, cm))
}

/// Runs every ablation row on top of `base` and writes `ablation.csv`.
pub fn ablation_suite(base: &TrainConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> Result<Vec<AblationRow>> {
    fs::create_dir_all(dir).at(dir)?;
    let mut rows = Vec::new();
    for (i, (name, switches)) in ablation_rows().into_iter().enumerate() {
        let cfg = TrainConfig {
            switches,
            ..base.clone()
        };
        log(&format!("ablation {}/8: {name}", i + 1));
        let summary = run_training(&cfg, &dir.join(format!("{}_{name}", i + 1)), log)?;
        rows.push(AblationRow {
            name: name.to_string(),
            config_hash: config::config_hash(&cfg),
            switches,
            best_val_miou: summary.best_val_miou,
            test_miou: summary.test_miou,
        });
    }
    let path = dir.join("ablation.csv");
    fs::write(&path, report::ablation_csv(&rows)).at(&path)?;
    Ok(rows)
}

//! CSV outputs: per-iteration metrics, evaluation reports, threshold traces
//! and the ablation table.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a value back yields the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use udaseg_core::metrics::ConfusionMatrix;
use udaseg_core::selftrain::{self, ThresholdMode, ThresholdState};
use udaseg_core::train::StepRecord;

use crate::error::{IoContext, Result, UdasError};

pub const LOSS_COLUMNS: [&str; 7] = ["g0", "g1_s", "g1_t", "g2_t", "g3", "d1", "d2"];
pub const TRACE_HEADER: &str = "step,class_id,class_name,threshold,running_mean";
pub const EVAL_HEADER: &str = "class_id,class_name,iou";

pub fn metrics_header(class_names: &[&str]) -> String {
    let mut h = String::from("step,lr_g,lr_d1,lr_d2");
    for c in LOSS_COLUMNS {
        write!(h, ",{c}").unwrap();
    }
    h.push_str(",total,selected_pixels");
    for name in class_names {
        write!(h, ",threshold_{name}").unwrap();
    }
    for name in class_names {
        write!(h, ",predicted_{name}").unwrap();
    }
    h
}

pub fn metrics_row(r: &StepRecord) -> String {
    let l = &r.report;
    let mut row = format!("{},{},{},{}", r.step, r.lr_g, r.lr_d1, r.lr_d2);
    for v in [l.g0, l.g1_s, l.g1_t, l.g2_t, l.g3, l.d1, l.d2, l.total] {
        write!(row, ",{v}").unwrap();
    }
    write!(row, ",{}", r.selected_pixels).unwrap();
    for t in &r.thresholds {
        write!(row, ",{t}").unwrap();
    }
    for p in &r.predicted_pixels {
        write!(row, ",{p}").unwrap();
    }
    row
}

fn csv_err(path: &Path, message: impl Into<String>) -> UdasError {
    UdasError::Csv {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// `(step, thresholds)` rows recovered from a metrics log.
pub fn read_threshold_rows(path: &Path) -> Result<Vec<(u64, Vec<f64>)>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| csv_err(path, "empty file"))?
        .split(',')
        .collect();
    let columns: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("threshold_"))
        .map(|(i, _)| i)
        .collect();
    if header.first() != Some(&"step") || columns.is_empty() {
        return Err(csv_err(path, "missing step or threshold columns"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(csv_err(path, format!("row {} has {} cells", i + 2, cells.len())));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| csv_err(path, format!("row {}: bad number {s:?}", i + 2)))
            };
            let step = cells[0]
                .parse()
                .map_err(|_| csv_err(path, format!("row {}: bad step", i + 2)))?;
            let values = columns.iter().map(|&c| parse(cells[c])).collect::<Result<Vec<_>>>()?;
            Ok((step, values))
        })
        .collect()
}

/// Rows of [`TRACE_HEADER`], one per step and class.
pub fn threshold_trace_csv(state: &ThresholdState, class_names: &[&str]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for row in selftrain::threshold_trace(state) {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.step, row.class_id, class_names[row.class_id], row.threshold, row.running_mean
        )
        .unwrap();
    }
    out
}

/// Rebuilds the trace of a finished run from its metrics log.
pub fn trace_from_metrics(path: &Path, percentile: f64, class_names: &[&str]) -> Result<String> {
    let rows = read_threshold_rows(path)?;
    let state = ThresholdState::from_history(percentile, ThresholdMode::Adaptive, &rows)?;
    if state.num_classes() != class_names.len() {
        return Err(csv_err(path, "threshold columns do not match the class list"));
    }
    Ok(threshold_trace_csv(&state, class_names))
}

/// Per-class IoU rows plus a `mean` row; absent classes read `-`.
pub fn eval_report_csv(cm: &ConfusionMatrix, class_names: &[&str]) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for (k, iou) in cm.iou_per_class().iter().enumerate() {
        match iou {
            Some(v) => writeln!(out, "{k},{},{v}", class_names[k]).unwrap(),
            None => writeln!(out, "{k},{},-", class_names[k]).unwrap(),
        }
    }
    match cm.miou(None) {
        Some(v) => writeln!(out, "mean,,{v}").unwrap(),
        None => writeln!(out, "mean,,-").unwrap(),
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub config_hash: String,
    pub switches: udaseg_core::train::AblationSwitches,
    pub best_val_miou: f64,
    pub test_miou: f64,
}

pub const ABLATION_HEADER: &str =
    "row,name,config_hash,use_g1_s,use_g1_t,use_g2,use_g3,threshold_mode,best_val_miou,test_miou";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for (i, r) in rows.iter().enumerate() {
        let s = &r.switches;
        let mode = match s.threshold_mode {
            ThresholdMode::Adaptive => "adaptive".to_string(),
            ThresholdMode::Disabled => "none".to_string(),
            ThresholdMode::Fixed(v) => format!("fixed({v})"),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{mode},{},{}",
            i + 1,
            r.name,
            r.config_hash,
            s.use_g1_s,
            s.use_g1_t,
            s.use_g2,
            s.use_g3,
            r.best_val_miou,
            r.test_miou
        )
        .unwrap();
    }
    out
}

//! Pseudo-label selection for self-training on the target domain.
//!
//! `D1`'s per-pixel output on a target prediction is read as confidence.
//! For each class `c`, the threshold is the `f`-th nearest-rank percentile of
//! confidences over the pixels currently predicted as `c`, recomputed on
//! every batch. A pixel joins the self-training mask when its confidence
//! strictly exceeds the threshold of its predicted class. Classes missing
//! from a batch keep their previous threshold, so rarely predicted classes
//! have piecewise-constant threshold traces.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{LabelMap, Tensor, IGNORE_INDEX};

pub const DEFAULT_PERCENTILE: f64 = 75.0;
pub const DEFAULT_MIN_PIXELS: usize = 8;
const FREQ_FLOOR: f64 = 1e-6;
const MEDIAN_CAP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdMode {
    /// Per-class percentile of the current batch.
    Adaptive,
    /// The same constant for every class and step.
    Fixed(f64),
    /// No selection: every target pixel is used.
    Disabled,
}

/// Nearest-rank percentile: the sorted element at `ceil(f/100·n) − 1`.
/// `None` for an empty input.
pub fn percentile(values: &[f64], f: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = libm::ceil(f * n as f64 / 100.0) as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdState {
    thresholds: Vec<f64>,
    last_update_step: Vec<Option<u64>>,
    f: f64,
    min_pixels: usize,
    mode: ThresholdMode,
    history: Vec<Vec<(u64, f64)>>,
}

impl ThresholdState {
    /// `initial` seeds every class in adaptive mode; fixed mode uses its own value.
    pub fn new(num_classes: usize, f: f64, min_pixels: usize, mode: ThresholdMode, initial: f64) -> Result<Self> {
        if !(f > 0.0 && f <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "percentile must lie in (0, 100], got {f}"
            )));
        }
        let start = match mode {
            ThresholdMode::Fixed(v) => v,
            _ => initial,
        };
        if !(0.0..=1.0).contains(&start) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must lie in [0, 1], got {start}"
            )));
        }
        Ok(Self {
            thresholds: vec![start; num_classes],
            last_update_step: vec![None; num_classes],
            f,
            min_pixels: min_pixels.max(1),
            mode,
            history: vec![Vec::new(); num_classes],
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn num_classes(&self) -> usize {
        self.thresholds.len()
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn percentile_f(&self) -> f64 {
        self.f
    }

    pub fn last_update_step(&self) -> &[Option<u64>] {
        &self.last_update_step
    }

    /// `(step, threshold)` after every update, for one class.
    pub fn history(&self, class: usize) -> &[(u64, f64)] {
        &self.history[class]
    }

    /// Rebuilds a state from recorded per-step thresholds (one row per step).
    pub fn from_history(f: f64, mode: ThresholdMode, rows: &[(u64, Vec<f64>)]) -> Result<Self> {
        let num_classes = rows.first().map_or(0, |(_, t)| t.len());
        let mut state = Self::new(num_classes, f, DEFAULT_MIN_PIXELS, mode, 1.0)?;
        for (step, values) in rows {
            if values.len() != num_classes {
                return Err(shape_err(
                    "ThresholdState::from_history",
                    format!("row for step {step} has {} classes", values.len()),
                ));
            }
            for (c, &v) in values.iter().enumerate() {
                if v != state.thresholds[c] || state.history[c].is_empty() {
                    state.last_update_step[c] = Some(*step);
                }
                state.thresholds[c] = v;
                state.history[c].push((*step, v));
            }
        }
        Ok(state)
    }
}

fn check_conf(d1_conf: &Tensor, n: usize, h: usize, w: usize) -> Result<()> {
    if d1_conf.shape() != [n, 1, h, w] {
        return Err(shape_err(
            "selftrain",
            format!("confidence {:?} does not match {n}×1×{h}×{w}", d1_conf.shape()),
        ));
    }
    Ok(())
}

/// Refreshes per-class thresholds from one target batch and appends the
/// result to the history. Only adaptive mode changes values; classes with
/// fewer than `min_pixels` predicted pixels are left untouched.
pub fn update_thresholds(
    d1_conf: &Tensor,
    pred_labels: &LabelMap,
    state: &mut ThresholdState,
    step: u64,
) -> Result<()> {
    let [n, h, w] = pred_labels.shape();
    check_conf(d1_conf, n, h, w)?;
    if state.mode == ThresholdMode::Adaptive {
        let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); state.num_classes()];
        for (&label, &conf) in pred_labels.data().iter().zip(d1_conf.data()) {
            let bucket = per_class.get_mut(label as usize).ok_or(Error::LabelOutOfRange {
                label,
                num_classes: state.num_classes(),
            })?;
            bucket.push(conf);
        }
        for (c, values) in per_class.iter().enumerate() {
            if values.len() < state.min_pixels {
                continue;
            }
            if let Some(t) = percentile(values, state.f) {
                debug_assert!((0.0..=1.0).contains(&t));
                state.thresholds[c] = t;
                state.last_update_step[c] = Some(step);
            }
        }
    }
    for (c, history) in state.history.iter_mut().enumerate() {
        history.push((step, state.thresholds[c]));
    }
    Ok(())
}

/// Argmax pseudo-labels and the selection mask for one target batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelPack {
    pub labels: LabelMap,
    /// One flag per pixel, N·H·W.
    pub mask: Vec<bool>,
    pub selected_per_class: Vec<usize>,
    pub num_classes: usize,
}

impl PseudoLabelPack {
    pub fn one_hot(&self) -> Tensor {
        self.labels
            .one_hot(self.num_classes)
            .expect("argmax labels are in range")
    }

    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Selects pixels whose confidence strictly exceeds the threshold of their
/// predicted class (all pixels when thresholding is disabled).
pub fn build_mask(d1_conf: &Tensor, probs: &Tensor, state: &ThresholdState) -> Result<PseudoLabelPack> {
    let [n, c, h, w] = probs.dims4()?;
    if c != state.num_classes() {
        return Err(shape_err(
            "build_mask",
            format!("{c} probability channels, {} thresholds", state.num_classes()),
        ));
    }
    let labels = LabelMap::argmax(probs)?;
    let mask: Vec<bool> = match state.mode {
        ThresholdMode::Disabled => vec![true; n * h * w],
        _ => {
            check_conf(d1_conf, n, h, w)?;
            labels
                .data()
                .iter()
                .zip(d1_conf.data())
                .map(|(&label, &conf)| conf > state.thresholds[label as usize])
                .collect()
        }
    };
    let mut selected_per_class = vec![0; c];
    for (&label, &m) in labels.data().iter().zip(&mask) {
        if m {
            selected_per_class[label as usize] += 1;
        }
    }
    Ok(PseudoLabelPack {
        labels,
        mask,
        selected_per_class,
        num_classes: c,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassWeightMode {
    /// Inverse source frequency: rare classes weigh more.
    Inverse,
    /// Directly proportional to source frequency.
    Proportional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub source_frequencies: Vec<f64>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-class weights from source pixel frequencies, normalised to mean 1.
///
/// In inverse mode the raw weight is `1 / max(freq, 1e-6)` capped at ten
/// times the median raw weight, so classes absent from the source get the
/// cap rather than an unbounded value.
pub fn class_weights_from_source(
    label_maps: &[LabelMap],
    num_classes: usize,
    mode: ClassWeightMode,
) -> Result<ClassWeights> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "class weights need at least 2 classes, got {num_classes}"
        )));
    }
    let mut counts = vec![0u64; num_classes];
    for map in label_maps {
        for &label in map.data() {
            if label == IGNORE_INDEX {
                continue;
            }
            *counts
                .get_mut(label as usize)
                .ok_or(Error::LabelOutOfRange { label, num_classes })? += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "no labelled source pixels to estimate class frequencies".into(),
        ));
    }
    let freqs: Vec<f64> = counts.iter().map(|&n| n as f64 / total as f64).collect();
    Ok(ClassWeights {
        weights: weights_from_frequencies(&freqs, mode),
        source_frequencies: freqs,
    })
}

pub fn weights_from_frequencies(freqs: &[f64], mode: ClassWeightMode) -> Vec<f64> {
    let raw: Vec<f64> = match mode {
        ClassWeightMode::Inverse => {
            let inv: Vec<f64> = freqs.iter().map(|&f| 1.0 / f.max(FREQ_FLOOR)).collect();
            let cap = MEDIAN_CAP * median(&inv);
            inv.into_iter().map(|w| w.min(cap)).collect()
        }
        ClassWeightMode::Proportional => freqs.iter().map(|&f| f.max(FREQ_FLOOR)).collect(),
    };
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub class_id: usize,
    pub threshold: f64,
    /// Mean of this class's thresholds from the first recorded step to `step`.
    pub running_mean: f64,
}

/// Rows ordered by step, then class.
pub fn threshold_trace(state: &ThresholdState) -> Vec<TraceRow> {
    let steps = state.history.first().map_or(0, Vec::len);
    let mut sums = vec![0.0; state.num_classes()];
    let mut rows = Vec::with_capacity(steps * state.num_classes());
    for i in 0..steps {
        for (c, history) in state.history.iter().enumerate() {
            let (step, threshold) = history[i];
            sums[c] += threshold;
            rows.push(TraceRow {
                step,
                class_id: c,
                threshold,
                running_mean: sums[c] / (i + 1) as f64,
            });
        }
    }
    rows
}

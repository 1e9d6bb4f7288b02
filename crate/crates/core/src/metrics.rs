//! Confusion matrix, per-class IoU and mean IoU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{LabelMap, IGNORE_INDEX};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies every pixel whose ground truth is not [`IGNORE_INDEX`].
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(shape_err(
                "ConfusionMatrix::accumulate",
                format!("prediction {:?} vs ground truth {:?}", pred.shape(), truth.shape()),
            ));
        }
        let c = self.num_classes;
        for (&p, &g) in pred.data().iter().zip(truth.data()) {
            if g == IGNORE_INDEX {
                continue;
            }
            if g as usize >= c || p as usize >= c {
                return Err(Error::LabelOutOfRange {
                    label: if g as usize >= c { g } else { p },
                    num_classes: c,
                });
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(shape_err(
                "ConfusionMatrix::merge",
                format!("{} vs {} classes", self.num_classes, other.num_classes),
            ));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `diag / (row + col − diag)`; `None` for classes absent from both
    /// ground truth and prediction.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let diag = self.get(k, k);
                let row: u64 = (0..c).map(|j| self.get(k, j)).sum();
                let col: u64 = (0..c).map(|i| self.get(i, k)).sum();
                let union = row + col - diag;
                (union > 0).then(|| diag as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over `subset` (all classes when `None`), skipping absent ones.
    pub fn miou(&self, subset: Option<&[usize]>) -> Option<f64> {
        let ious = self.iou_per_class();
        let all: Vec<usize> = (0..self.num_classes).collect();
        let classes = subset.unwrap_or(&all);
        let present: Vec<f64> = classes.iter().filter_map(|&k| ious.get(k).copied().flatten()).collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

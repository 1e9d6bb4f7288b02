//! Generator and discriminator objectives.
//!
//! All objectives are recorded on a [`Tape`] so they can be differentiated.
//! Pixel sums are normalised to means; logs are floored with `eps` so a
//! saturated discriminator yields a large but finite loss.
//!
//! | term   | meaning                                                    |
//! |--------|------------------------------------------------------------|
//! | `g0`   | cross-entropy on labelled source pixels                    |
//! | `g1_s` | fool `D1` with source predictions                          |
//! | `g1_t` | fool `D1` with target predictions                          |
//! | `g2_t` | fool `D2` into calling target predictions source           |
//! | `g3`   | masked, class-weighted self-training on target pseudo-labels |
//! | `d1`   | `D1`: generated maps → 0, ground truth → 1                 |
//! | `d2`   | `D2`: target predictions → 0, source predictions → 1       |

use alloc::format;
use alloc::vec;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{LabelMap, Tensor};

pub const DEFAULT_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w1_s: f64,
    pub w1_t: f64,
    pub w2_t: f64,
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1_s: 1e-2,
            w1_t: 1e-3,
            w2_t: 1e-2,
            w3: 1e-1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w1_s, self.w1_t, self.w2_t, self.w3];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Scalar values of every objective in one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub g0: f64,
    pub g1_s: f64,
    pub g1_t: f64,
    pub g2_t: f64,
    pub g3: f64,
    pub d1: f64,
    pub d2: f64,
    pub total: f64,
}

impl LossReport {
    /// `g0 + w1_s·g1_s + w1_t·g1_t + w2_t·g2_t + w3·g3`, left to right.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.g0 + w.w1_s * self.g1_s + w.w1_t * self.g1_t + w.w2_t * self.g2_t + w.w3 * self.g3
    }
}

/// −mean(ln(x + eps)).
fn neg_mean_log(tape: &mut Tape, x: Var, eps: f64) -> Var {
    let l = tape.ln_eps(x, eps);
    let m = tape.mean(l);
    tape.affine(m, -1.0, 0.0)
}

/// −mean(ln(1 − x + eps)).
fn neg_mean_log_complement(tape: &mut Tape, x: Var, eps: f64) -> Var {
    let c = tape.affine(x, -1.0, 1.0);
    neg_mean_log(tape, c, eps)
}

/// −Σ factor·ln(probs + eps) / count; zero when `count` is zero.
fn weighted_nll(tape: &mut Tape, probs: Var, factor: &Tensor, count: usize, eps: f64) -> Result<Var> {
    if count == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let l = tape.ln_eps(probs, eps);
    let picked = tape.mul_const(l, factor)?;
    let s = tape.sum(picked);
    Ok(tape.affine(s, -1.0 / count as f64, 0.0))
}

/// Mean cross-entropy over labelled pixels of an N×C×H×W probability map.
pub fn supervised_ce(tape: &mut Tape, probs: Var, labels: &LabelMap, ignore_index: u8, eps: f64) -> Result<Var> {
    let [n, c, h, w] = tape.value(probs).dims4()?;
    if labels.shape() != [n, h, w] {
        return Err(shape_err(
            "supervised_ce",
            format!("labels {:?} vs probabilities {:?}", labels.shape(), [n, c, h, w]),
        ));
    }
    let plane = h * w;
    let mut factor = Tensor::zeros(&[n, c, h, w]);
    let mut count = 0;
    {
        let f = factor.data_mut();
        for b in 0..n {
            for p in 0..plane {
                let label = labels.data()[b * plane + p];
                if label == ignore_index {
                    continue;
                }
                if label as usize >= c {
                    return Err(Error::LabelOutOfRange { label, num_classes: c });
                }
                f[(b * c + label as usize) * plane + p] = 1.0;
                count += 1;
            }
        }
    }
    weighted_nll(tape, probs, &factor, count, eps)
}

/// `D1` objective: generated maps are class 0, ground-truth maps class 1.
pub fn d1_loss(tape: &mut Tape, d1_on_generated: Var, d1_on_gt: Var, eps: f64) -> Result<Var> {
    let fake = neg_mean_log_complement(tape, d1_on_generated, eps);
    let real = neg_mean_log(tape, d1_on_gt, eps);
    tape.add(fake, real)
}

/// Generator term pushing its maps toward `D1`'s ground-truth class.
pub fn g_adv1(tape: &mut Tape, d1_on_generated: Var, eps: f64) -> Var {
    neg_mean_log(tape, d1_on_generated, eps)
}

/// `D2` objective: target predictions are class 0, source predictions class 1.
pub fn d2_loss(tape: &mut Tape, d2_on_target: Var, d2_on_source: Var, eps: f64) -> Result<Var> {
    let target = neg_mean_log_complement(tape, d2_on_target, eps);
    let source = neg_mean_log(tape, d2_on_source, eps);
    tape.add(target, source)
}

/// Generator term pushing target predictions toward `D2`'s source class.
pub fn g_adv2(tape: &mut Tape, d2_on_target: Var, eps: f64) -> Var {
    neg_mean_log(tape, d2_on_target, eps)
}

/// Masked, class-weighted cross-entropy against frozen pseudo-labels,
/// averaged over selected pixels.
///
/// `pseudo` (one-hot N×C×H×W) and `mask` (N·H·W flags) are constants: no
/// gradient flows through the selection.
pub fn self_training_loss(
    tape: &mut Tape,
    probs: Var,
    pseudo: &Tensor,
    mask: &[bool],
    class_weights: &[f64],
    eps: f64,
) -> Result<Var> {
    let [n, c, h, w] = tape.value(probs).dims4()?;
    if class_weights.len() != c {
        return Err(shape_err(
            "self_training_loss",
            format!("{} class weights for {c} classes", class_weights.len()),
        ));
    }
    if pseudo.shape() != [n, c, h, w] || mask.len() != n * h * w {
        return Err(shape_err(
            "self_training_loss",
            format!(
                "pseudo-labels {:?} / mask of {} for probabilities {:?}",
                pseudo.shape(),
                mask.len(),
                [n, c, h, w]
            ),
        ));
    }
    let plane = h * w;
    let mut factor = vec![0.0; n * c * plane];
    for b in 0..n {
        for p in 0..plane {
            if !mask[b * plane + p] {
                continue;
            }
            for (k, weight) in class_weights.iter().enumerate() {
                let i = (b * c + k) * plane + p;
                factor[i] = weight * pseudo.data()[i];
            }
        }
    }
    let count = mask.iter().filter(|&&m| m).count();
    let factor = Tensor::new(vec![n, c, h, w], factor)?;
    weighted_nll(tape, probs, &factor, count, eps)
}

/// Generator loss terms on one tape; `None` marks a disabled term.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub g0: Var,
    pub g1_s: Option<Var>,
    pub g1_t: Option<Var>,
    pub g2_t: Option<Var>,
    pub g3: Option<Var>,
}

/// Weighted generator objective. Disabled terms are absent from the graph
/// and reported as zero.
pub fn full_loss(tape: &mut Tape, terms: &LossTerms, weights: &LossWeights) -> Result<(Var, LossReport)> {
    weights.validate()?;
    let value = |tape: &Tape, v: Option<Var>| -> Result<f64> { v.map_or(Ok(0.0), |v| tape.value(v).item()) };
    let mut report = LossReport {
        g0: tape.value(terms.g0).item()?,
        g1_s: value(tape, terms.g1_s)?,
        g1_t: value(tape, terms.g1_t)?,
        g2_t: value(tape, terms.g2_t)?,
        g3: value(tape, terms.g3)?,
        ..LossReport::default()
    };
    let mut total = terms.g0;
    for (term, weight) in [
        (terms.g1_s, weights.w1_s),
        (terms.g1_t, weights.w1_t),
        (terms.g2_t, weights.w2_t),
        (terms.g3, weights.w3),
    ] {
        if let Some(t) = term {
            let scaled = tape.affine(t, weight, 0.0);
            total = tape.add(total, scaled)?;
        }
    }
    report.total = tape.value(total).item()?;
    Ok((total, report))
}

//! Independent reference implementations and a finite-difference harness,
//! shared by the core integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod suites;

use rand::Rng;
use udaseg_core::autodiff::{Tape, Var};
use udaseg_core::rng::{self, SeededRng};
use udaseg_core::{LabelMap, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Below this magnitude gradient entries are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rng_for(seed: u64) -> SeededRng {
    rng::seeded(seed)
}

pub fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so piecewise-linear ops stay smooth
/// within the finite-difference step.
pub fn away_from_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Per-pixel probability vectors (N×C×H×W) bounded away from 0.
pub fn probabilities(rng: &mut SeededRng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut t = uniform(rng, &[n, c, h, w], 0.05, 1.0);
    let plane = h * w;
    let d = t.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let s: f64 = (0..c).map(|k| d[(b * c + k) * plane + p]).sum();
            for k in 0..c {
                d[(b * c + k) * plane + p] /= s;
            }
        }
    }
    t
}

pub fn labels(rng: &mut SeededRng, n: usize, h: usize, w: usize, c: u8) -> LabelMap {
    LabelMap::new([n, h, w], (0..n * h * w).map(|_| rng.gen_range(0..c)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Builds a scalar loss from leaves holding `inputs`.
pub type LossBuilder<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

fn eval_loss(build: &LossBuilder, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item().unwrap()
}

/// Largest relative error between analytic gradients and central
/// differences over every entry of every input:
/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn gradient_error(build: &LossBuilder, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] = input.data()[j] + FD_STEP;
            let plus = eval_loss(build, &shifted);
            shifted[i].data_mut()[j] = input.data()[j] - FD_STEP;
            let minus = eval_loss(build, &shifted);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Direct zero-padded convolution.
pub fn conv2d_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, kh, kw] = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.data_mut()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Bilinear sampling with half-pixel centres and edge clamping, one output
/// value at a time.
pub fn upsample_oracle(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.dims4().unwrap();
    let source = |i: usize, src: usize, dst: usize| -> f64 {
        ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
    };
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    for plane in 0..n * c {
        let at = |y: usize, xx: usize| x.data()[(plane * h + y) * w + xx];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let sy = source(oy, h, out_h);
                let sx = source(ox, w, out_w);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.data_mut()[(plane * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub fn softmax_oracle(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims4().unwrap();
    let plane = h * w;
    let mut out = x.clone();
    for b in 0..n {
        for p in 0..plane {
            let idx = |k: usize| (b * c + k) * plane + p;
            let z: f64 = (0..c).map(|k| x.data()[idx(k)].exp()).sum();
            for k in 0..c {
                out.data_mut()[idx(k)] = x.data()[idx(k)].exp() / z;
            }
        }
    }
    out
}

/// Sorts, then reads the element at `ceil(f·n/100) − 1`.
pub fn percentile_oracle(values: &[f64], f: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (f * v.len() as f64 / 100.0).ceil() as usize;
    v[rank.max(1) - 1]
}

/// Argmax class per pixel with lowest-index ties.
pub fn argmax_oracle(probs: &Tensor) -> Vec<u8> {
    let [n, c, h, w] = probs.dims4().unwrap();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        for p in 0..plane {
            let mut best = 0;
            for k in 1..c {
                if probs.data()[(b * c + k) * plane + p] > probs.data()[(b * c + best) * plane + p] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

pub fn mask_oracle(conf: &[f64], predicted: &[u8], thresholds: &[f64]) -> Vec<bool> {
    conf.iter()
        .zip(predicted)
        .map(|(&v, &c)| v > thresholds[c as usize])
        .collect()
}

/// Row = ground truth, column = prediction.
pub fn confusion_oracle(pred: &[u8], truth: &[u8], c: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0; c]; c];
    for (&p, &g) in pred.iter().zip(truth) {
        if g != udaseg_core::IGNORE_INDEX {
            m[g as usize][p as usize] += 1;
        }
    }
    m
}

pub fn ce_oracle(probs: &Tensor, labels: &[u8], eps: f64) -> f64 {
    let [n, c, h, w] = probs.dims4().unwrap();
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0;
    for b in 0..n {
        for p in 0..plane {
            let l = labels[b * plane + p];
            if l == udaseg_core::IGNORE_INDEX {
                continue;
            }
            total += -(probs.data()[(b * c + l as usize) * plane + p] + eps).ln();
            count += 1;
        }
    }
    total / count as f64
}

/// Mean of `−ln(v + eps)`.
pub fn neg_log_mean(v: &[f64], eps: f64) -> f64 {
    v.iter().map(|x| -(x + eps).ln()).sum::<f64>() / v.len() as f64
}

/// Mean of `−ln(1 − v + eps)`.
pub fn neg_log_complement_mean(v: &[f64], eps: f64) -> f64 {
    v.iter().map(|x| -(1.0 - x + eps).ln()).sum::<f64>() / v.len() as f64
}

/// Triple loop over pixels and classes, normalised by the selected count.
pub fn self_training_oracle(probs: &Tensor, pseudo: &Tensor, mask: &[bool], weights: &[f64], eps: f64) -> f64 {
    let [n, c, h, w] = probs.dims4().unwrap();
    let plane = h * w;
    let mut total = 0.0;
    for b in 0..n {
        for p in 0..plane {
            if !mask[b * plane + p] {
                continue;
            }
            for (k, w) in weights.iter().enumerate() {
                let i = (b * c + k) * plane + p;
                total -= w * pseudo.data()[i] * (probs.data()[i] + eps).ln();
            }
        }
    }
    let selected = mask.iter().filter(|&&m| m).count();
    if selected == 0 {
        0.0
    } else {
        total / selected as f64
    }
}

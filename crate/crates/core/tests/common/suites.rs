//! Batteries of checks returning worst-case errors, so both the core tests
//! and the acceptance gate can assert on them.

use rand::Rng;
use udaseg_core::autodiff::{Tape, Var};
use udaseg_core::losses::{self, DEFAULT_EPS};
use udaseg_core::metrics::ConfusionMatrix;
use udaseg_core::selftrain::{self, ThresholdMode, ThresholdState};
use udaseg_core::{LabelMap, Tensor};

use super::*;

pub const INSTANCES: u64 = 20;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

fn weighted_sum(tape: &mut Tape, v: Var, r: &Tensor) -> Var {
    let m = tape.mul_const(v, r).unwrap();
    tape.sum(m)
}

fn run(name: &'static str, mut one: impl FnMut(u64) -> f64) -> Check {
    let worst = (0..INSTANCES).map(&mut one).fold(0.0, f64::max);
    Check {
        name,
        instances: INSTANCES as usize,
        worst,
    }
}

fn op_checks() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(run("conv2d", |i| {
        let mut r = rng_for(100 + i);
        let (stride, pad) = (1 + (i % 2) as usize, (i / 2 % 2) as usize);
        let x = uniform(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
        let w = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        let oh = (5 + 2 * pad - 3) / stride + 1;
        let proj = uniform(&mut r, &[1, 3, oh, oh], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
                weighted_sum(t, y, &proj)
            },
            &[x, w, b],
        )
    }));
    out.push(run("leaky_relu", |i| {
        let mut r = rng_for(200 + i);
        let x = away_from_zero(&mut r, &[2, 3, 3]);
        let proj = uniform(&mut r, &[2, 3, 3], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.leaky_relu(v[0], 0.2);
                weighted_sum(t, y, &proj)
            },
            &[x],
        )
    }));
    out.push(run("sigmoid", |i| {
        let mut r = rng_for(300 + i);
        let x = uniform(&mut r, &[1, 1, 3, 3], -4.0, 4.0);
        let proj = uniform(&mut r, &[1, 1, 3, 3], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.sigmoid(v[0]);
                weighted_sum(t, y, &proj)
            },
            &[x],
        )
    }));
    out.push(run("softmax_channel", |i| {
        let mut r = rng_for(400 + i);
        let x = uniform(&mut r, &[2, 4, 2, 2], -3.0, 3.0);
        let proj = uniform(&mut r, &[2, 4, 2, 2], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.softmax_channel(v[0]).unwrap();
                weighted_sum(t, y, &proj)
            },
            &[x],
        )
    }));
    out.push(run("bilinear_upsample", |i| {
        let mut r = rng_for(500 + i);
        let (h, w) = (1 + (i % 3) as usize, 2 + (i % 2) as usize);
        let (oh, ow) = (h + 1 + (i % 4) as usize, w + 2 + (i % 3) as usize);
        let x = uniform(&mut r, &[1, 2, h, w], -1.0, 1.0);
        let proj = uniform(&mut r, &[1, 2, oh, ow], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.bilinear_upsample(v[0], oh, ow).unwrap();
                weighted_sum(t, y, &proj)
            },
            &[x],
        )
    }));
    out.push(run("add", |i| {
        let mut r = rng_for(600 + i);
        let a = uniform(&mut r, &[3, 2], -1.0, 1.0);
        let b = uniform(&mut r, &[3, 2], -1.0, 1.0);
        let proj = uniform(&mut r, &[3, 2], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.add(v[0], v[1]).unwrap();
                weighted_sum(t, y, &proj)
            },
            &[a, b],
        )
    }));
    out.push(run("mul", |i| {
        let mut r = rng_for(700 + i);
        let a = uniform(&mut r, &[4], -1.0, 1.0);
        let b = uniform(&mut r, &[4], -1.0, 1.0);
        let proj = uniform(&mut r, &[4], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.mul(v[0], v[1]).unwrap();
                weighted_sum(t, y, &proj)
            },
            &[a, b],
        )
    }));
    out.push(run("affine", |i| {
        let mut r = rng_for(800 + i);
        let x = uniform(&mut r, &[5], -1.0, 1.0);
        let (scale, shift) = (r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0));
        let proj = uniform(&mut r, &[5], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.affine(v[0], scale, shift);
                weighted_sum(t, y, &proj)
            },
            &[x],
        )
    }));
    out.push(run("ln_eps", |i| {
        let mut r = rng_for(900 + i);
        let x = uniform(&mut r, &[6], 0.05, 2.0);
        let proj = uniform(&mut r, &[6], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let y = t.ln_eps(v[0], DEFAULT_EPS);
                weighted_sum(t, y, &proj)
            },
            &[x],
        )
    }));
    out.push(run("mul_const", |i| {
        let mut r = rng_for(1000 + i);
        let x = uniform(&mut r, &[2, 3], -1.0, 1.0);
        let k = uniform(&mut r, &[2, 3], -2.0, 2.0);
        gradient_error(
            &|t, v| {
                let y = t.mul_const(v[0], &k).unwrap();
                let sq = t.mul(y, y).unwrap();
                t.sum(sq)
            },
            &[x],
        )
    }));
    out.push(run("sum", |i| {
        let mut r = rng_for(1100 + i);
        let x = uniform(&mut r, &[7], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let sq = t.mul(v[0], v[0]).unwrap();
                t.sum(sq)
            },
            &[x],
        )
    }));
    out.push(run("mean", |i| {
        let mut r = rng_for(1200 + i);
        let x = uniform(&mut r, &[2, 5], -1.0, 1.0);
        gradient_error(
            &|t, v| {
                let sq = t.mul(v[0], v[0]).unwrap();
                t.mean(sq)
            },
            &[x],
        )
    }));
    out
}

pub const CLASSES: usize = 3;

/// Two-layer segmenter: 3×3 conv, leaky ReLU, 1×1 conv, softmax.
fn small_generator(t: &mut Tape, x: Var, p: &[Var]) -> Var {
    let h = t.conv2d(x, p[0], p[1], 1, 1).unwrap();
    let h = t.leaky_relu(h, 0.2);
    let logits = t.conv2d(h, p[2], p[3], 1, 0).unwrap();
    t.softmax_channel(logits).unwrap()
}

fn generator_params(r: &mut SeededRng) -> Vec<Tensor> {
    vec![
        uniform(r, &[4, 3, 3, 3], -0.5, 0.5),
        uniform(r, &[4], -0.1, 0.1),
        uniform(r, &[CLASSES, 4, 1, 1], -0.8, 0.8),
        uniform(r, &[CLASSES], -0.1, 0.1),
    ]
}

/// Two-layer discriminator: 3×3 conv, leaky ReLU, 3×3 conv, sigmoid.
fn small_discriminator(t: &mut Tape, x: Var, p: &[Var]) -> Var {
    let h = t.conv2d(x, p[0], p[1], 1, 1).unwrap();
    let h = t.leaky_relu(h, 0.2);
    let s = t.conv2d(h, p[2], p[3], 1, 1).unwrap();
    t.sigmoid(s)
}

fn discriminator_params(r: &mut SeededRng) -> Vec<Tensor> {
    vec![
        uniform(r, &[4, CLASSES, 3, 3], -0.5, 0.5),
        uniform(r, &[4], -0.1, 0.1),
        uniform(r, &[1, 4, 3, 3], -0.5, 0.5),
        uniform(r, &[1], -0.1, 0.1),
    ]
}

fn constants(t: &mut Tape, values: &[Tensor]) -> Vec<Var> {
    values.iter().map(|v| t.constant(v.clone())).collect()
}

/// Generator-side objectives: gradient w.r.t. the generator parameters with
/// the discriminator frozen.
fn generator_loss_checks() -> Vec<Check> {
    let image = |r: &mut SeededRng| uniform(r, &[1, 3, 4, 4], 0.0, 1.0);
    let mut out = Vec::new();
    out.push(run("supervised CE through a 2-layer net", |i| {
        let mut r = rng_for(2000 + i);
        let x = image(&mut r);
        let y = labels(&mut r, 1, 4, 4, CLASSES as u8);
        gradient_error(
            &|t, p| {
                let xv = t.constant(x.clone());
                let probs = small_generator(t, xv, p);
                losses::supervised_ce(t, probs, &y, udaseg_core::IGNORE_INDEX, DEFAULT_EPS).unwrap()
            },
            &generator_params(&mut r),
        )
    }));
    for (name, base, second) in [
        ("D1 adversarial (generator side) through a 2-layer net", 2100, false),
        ("D2 adversarial (generator side) through a 2-layer net", 2200, true),
    ] {
        out.push(run(name, |i| {
            let mut r = rng_for(base + i);
            let x = image(&mut r);
            let d = discriminator_params(&mut r);
            gradient_error(
                &|t, p| {
                    let xv = t.constant(x.clone());
                    let probs = small_generator(t, xv, p);
                    let dv = constants(t, &d);
                    let conf = small_discriminator(t, probs, &dv);
                    if second {
                        losses::g_adv2(t, conf, DEFAULT_EPS)
                    } else {
                        losses::g_adv1(t, conf, DEFAULT_EPS)
                    }
                },
                &generator_params(&mut r),
            )
        }));
    }
    out.push(run("self-training through a 2-layer net", |i| {
        let mut r = rng_for(2300 + i);
        let x = image(&mut r);
        let pseudo = labels(&mut r, 1, 4, 4, CLASSES as u8).one_hot(CLASSES).unwrap();
        let mut mask: Vec<bool> = (0..16).map(|_| r.gen_bool(0.6)).collect();
        mask[0] = true;
        let weights: Vec<f64> = (0..CLASSES).map(|_| r.gen_range(0.2..3.0)).collect();
        gradient_error(
            &|t, p| {
                let xv = t.constant(x.clone());
                let probs = small_generator(t, xv, p);
                losses::self_training_loss(t, probs, &pseudo, &mask, &weights, DEFAULT_EPS).unwrap()
            },
            &generator_params(&mut r),
        )
    }));
    out
}

/// Discriminator objectives: gradient w.r.t. the discriminator parameters
/// on constant maps.
fn discriminator_loss_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for (name, base, second) in [
        ("D1 loss through a 2-layer net", 2400, false),
        ("D2 loss through a 2-layer net", 2500, true),
    ] {
        out.push(run(name, |i| {
            let mut r = rng_for(base + i);
            let a = probabilities(&mut r, 1, CLASSES, 4, 4);
            let b = if second {
                probabilities(&mut r, 1, CLASSES, 4, 4)
            } else {
                labels(&mut r, 1, 4, 4, CLASSES as u8).one_hot(CLASSES).unwrap()
            };
            gradient_error(
                &|t, p| {
                    let av = t.constant(a.clone());
                    let bv = t.constant(b.clone());
                    let da = small_discriminator(t, av, p);
                    let db = small_discriminator(t, bv, p);
                    if second {
                        losses::d2_loss(t, da, db, DEFAULT_EPS).unwrap()
                    } else {
                        losses::d1_loss(t, da, db, DEFAULT_EPS).unwrap()
                    }
                },
                &discriminator_params(&mut r),
            )
        }));
    }
    out
}

/// Every gradient check of the acceptance gate.
pub fn gradient_suite() -> Vec<Check> {
    let mut all = op_checks();
    all.extend(generator_loss_checks());
    all.extend(discriminator_loss_checks());
    all
}

fn value_of(build: impl FnOnce(&mut Tape) -> Var) -> Tensor {
    let mut t = Tape::new();
    let v = build(&mut t);
    t.value(v).clone()
}

fn diff_loss(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

/// Every brute-force comparison of the acceptance gate (worst absolute
/// difference; counts are compared as exact integers cast to f64).
pub fn oracle_suite() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(run("conv2d", |i| {
        let mut r = rng_for(3000 + i);
        let (n, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
        let (h, w) = (r.gen_range(3..=8), r.gen_range(3..=8));
        let pad = r.gen_range(0..=1);
        let stride = r.gen_range(1..=2);
        let k = r.gen_range(1..=4.min(h.min(w) + 2 * pad));
        let x = uniform(&mut r, &[n, cin, h, w], -1.0, 1.0);
        let wt = uniform(&mut r, &[cout, cin, k, k], -1.0, 1.0);
        let b = uniform(&mut r, &[cout], -1.0, 1.0);
        let got = value_of(|t| {
            let (xv, wv, bv) = (t.constant(x.clone()), t.constant(wt.clone()), t.constant(b.clone()));
            t.conv2d(xv, wv, bv, stride, pad).unwrap()
        });
        let want = conv2d_oracle(&x, &wt, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        max_abs_diff(got.data(), want.data())
    }));
    out.push(run("bilinear_upsample", |i| {
        let mut r = rng_for(3100 + i);
        let x = if i == 0 {
            Tensor::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap()
        } else {
            let (h, w) = (r.gen_range(1..=4), r.gen_range(1..=4));
            uniform(&mut r, &[1, 2, h, w], -1.0, 1.0)
        };
        let [_, _, h, w] = x.dims4().unwrap();
        let (oh, ow) = if i == 0 {
            (4, 4)
        } else {
            (r.gen_range(h..=8), r.gen_range(w..=8))
        };
        let got = value_of(|t| {
            let xv = t.constant(x.clone());
            t.bilinear_upsample(xv, oh, ow).unwrap()
        });
        max_abs_diff(got.data(), upsample_oracle(&x, oh, ow).data())
    }));
    out.push(run("softmax_channel", |i| {
        let mut r = rng_for(3200 + i);
        let x = uniform(&mut r, &[1, 4, 3, 3], -5.0, 5.0);
        let got = value_of(|t| {
            let xv = t.constant(x.clone());
            t.softmax_channel(xv).unwrap()
        });
        max_abs_diff(got.data(), softmax_oracle(&x).data())
    }));
    out.push(run("percentile", |i| {
        let mut r = rng_for(3300 + i);
        let n = r.gen_range(1..=64);
        let values: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let f = if i % 4 == 0 { 100.0 } else { r.gen_range(1.0..100.0) };
        diff_loss(
            selftrain::percentile(&values, f).unwrap(),
            percentile_oracle(&values, f),
        )
    }));
    out.push(run("mask", |i| {
        let mut r = rng_for(3400 + i);
        let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let probs = probabilities(&mut r, 1, CLASSES, h, w);
        let conf = uniform(&mut r, &[1, 1, h, w], 0.0, 1.0);
        let init: f64 = r.gen_range(0.0..1.0);
        let mut state = ThresholdState::new(CLASSES, 75.0, 2, ThresholdMode::Adaptive, init).unwrap();
        let predicted = LabelMap::argmax(&probs).unwrap();
        selftrain::update_thresholds(&conf, &predicted, &mut state, 0).unwrap();
        let pack = selftrain::build_mask(&conf, &probs, &state).unwrap();
        let labels = argmax_oracle(&probs);
        let mut expected_t = vec![init; CLASSES];
        for (k, t) in expected_t.iter_mut().enumerate() {
            let vals: Vec<f64> = conf
                .data()
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l as usize == k)
                .map(|(&v, _)| v)
                .collect();
            if vals.len() >= 2 {
                *t = percentile_oracle(&vals, 75.0);
            }
        }
        let want = mask_oracle(conf.data(), &labels, &expected_t);
        let mismatches = pack.mask.iter().zip(&want).filter(|(a, b)| a != b).count();
        let label_mismatch = pack.labels.data() != labels.as_slice();
        mismatches as f64 + f64::from(u8::from(label_mismatch)) + max_abs_diff(state.thresholds(), &expected_t)
    }));
    out.push(run("confusion matrix", |i| {
        let mut r = rng_for(3500 + i);
        let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let pred = labels(&mut r, 2, h, w, CLASSES as u8);
        let mut truth = labels(&mut r, 2, h, w, CLASSES as u8).into_data();
        truth[0] = udaseg_core::IGNORE_INDEX;
        let truth = LabelMap::new([2, h, w], truth).unwrap();
        let mut cm = ConfusionMatrix::new(CLASSES);
        cm.accumulate(&pred, &truth).unwrap();
        let want = confusion_oracle(pred.data(), truth.data(), CLASSES);
        let mut worst: f64 = 0.0;
        for (g, row) in want.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                worst = worst.max((cm.get(g, p) as f64 - count as f64).abs());
            }
        }
        worst
    }));
    out.push(run("supervised CE value", |i| {
        let mut r = rng_for(3600 + i);
        let probs = probabilities(&mut r, 2, CLASSES, 3, 4);
        let mut y = labels(&mut r, 2, 3, 4, CLASSES as u8).into_data();
        y[1] = udaseg_core::IGNORE_INDEX;
        let y = LabelMap::new([2, 3, 4], y).unwrap();
        let got = value_of(|t| {
            let p = t.constant(probs.clone());
            losses::supervised_ce(t, p, &y, udaseg_core::IGNORE_INDEX, DEFAULT_EPS).unwrap()
        });
        diff_loss(got.item().unwrap(), ce_oracle(&probs, y.data(), DEFAULT_EPS))
    }));
    for (name, base, kind) in [
        ("D1 loss value", 3700, 0),
        ("D1 adversarial value", 3800, 1),
        ("D2 loss value", 3900, 2),
        ("D2 adversarial value", 4000, 3),
    ] {
        out.push(run(name, move |i| {
            let mut r = rng_for(base + i);
            let a = uniform(&mut r, &[2, 1, 4, 4], 0.001, 0.999);
            let b = uniform(&mut r, &[2, 1, 4, 4], 0.001, 0.999);
            let got = value_of(|t| {
                let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
                match kind {
                    0 => losses::d1_loss(t, av, bv, DEFAULT_EPS).unwrap(),
                    1 => losses::g_adv1(t, av, DEFAULT_EPS),
                    2 => losses::d2_loss(t, av, bv, DEFAULT_EPS).unwrap(),
                    _ => losses::g_adv2(t, av, DEFAULT_EPS),
                }
            });
            let want = match kind {
                0 | 2 => neg_log_complement_mean(a.data(), DEFAULT_EPS) + neg_log_mean(b.data(), DEFAULT_EPS),
                _ => neg_log_mean(a.data(), DEFAULT_EPS),
            };
            diff_loss(got.item().unwrap(), want)
        }));
    }
    out.push(run("self-training value", |i| {
        let mut r = rng_for(4100 + i);
        let probs = probabilities(&mut r, 1, CLASSES, 4, 4);
        let pseudo = LabelMap::new([1, 4, 4], argmax_oracle(&probs))
            .unwrap()
            .one_hot(CLASSES)
            .unwrap();
        let mask: Vec<bool> = (0..16).map(|_| r.gen_bool(if i == 0 { 0.0 } else { 0.5 })).collect();
        let weights: Vec<f64> = (0..CLASSES).map(|_| r.gen_range(0.1..3.0)).collect();
        let got = value_of(|t| {
            let p = t.constant(probs.clone());
            losses::self_training_loss(t, p, &pseudo, &mask, &weights, DEFAULT_EPS).unwrap()
        });
        diff_loss(
            got.item().unwrap(),
            self_training_oracle(&probs, &pseudo, &mask, &weights, DEFAULT_EPS),
        )
    }));
    out
}

/// `(description, computed, expected)` closed-form loss values.
pub fn closed_forms() -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for c in 2..=6usize {
        let probs = Tensor::full(&[1, c, 4, 4], 1.0 / c as f64);
        let y = LabelMap::new([1, 4, 4], (0..16).map(|p| (p % c) as u8).collect()).unwrap();
        let got = value_of(|t| {
            let p = t.constant(probs);
            losses::supervised_ce(t, p, &y, udaseg_core::IGNORE_INDEX, DEFAULT_EPS).unwrap()
        });
        out.push((format!("uniform CE, C={c}"), got.item().unwrap(), (c as f64).ln()));
    }
    let half = Tensor::full(&[1, 1, 4, 4], 0.5);
    let ln2 = std::f64::consts::LN_2;
    let pair = |f: fn(&mut Tape, Var, Var, f64) -> udaseg_core::Result<Var>| {
        value_of(|t| {
            let (a, b) = (t.constant(half.clone()), t.constant(half.clone()));
            f(t, a, b, DEFAULT_EPS).unwrap()
        })
        .item()
        .unwrap()
    };
    let single = |f: fn(&mut Tape, Var, f64) -> Var| {
        value_of(|t| {
            let a = t.constant(half.clone());
            f(t, a, DEFAULT_EPS)
        })
        .item()
        .unwrap()
    };
    out.push(("D1 loss at 0.5".into(), pair(losses::d1_loss), 2.0 * ln2));
    out.push(("D2 loss at 0.5".into(), pair(losses::d2_loss), 2.0 * ln2));
    out.push(("D1 adversarial at 0.5".into(), single(losses::g_adv1), ln2));
    out.push(("D2 adversarial at 0.5".into(), single(losses::g_adv2), ln2));
    out
}

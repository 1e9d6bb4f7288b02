//! Alternating optimisation of `G`, `D1` and `D2`.
//!
//! One step consumes a labelled source batch and an unlabelled target batch:
//!
//! 1. `G` runs on both batches. `D1` scores the target prediction; those
//!    scores refresh the per-class thresholds and select self-training
//!    pixels. The weighted generator objective is minimised with SGD while
//!    both discriminators stay frozen.
//! 2. `D1` learns to separate the (frozen) generated maps of both domains
//!    from the one-hot source labels.
//! 3. `D2` learns to separate frozen source predictions from target ones.
//!
//! Switching a generator term off removes it from the graph; a discriminator
//! nobody consumes is not trained.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{self, LossReport, LossTerms, LossWeights};
use crate::metrics::ConfusionMatrix;
use crate::nets::{self, DiscriminatorSpec, Network};
use crate::optim::{OptimizerState, PolySchedule};
use crate::rng;
use crate::scenegen::{self, BatchStream, Domain, SceneConfig, SegmentationBatch, Split};
use crate::selftrain::{self, ClassWeightMode, ClassWeights, ThresholdMode, ThresholdState};
use crate::tensor::{LabelMap, Tensor, IGNORE_INDEX};

/// Which generator objectives take part in training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationSwitches {
    pub use_g1_s: bool,
    pub use_g1_t: bool,
    pub use_g2: bool,
    pub use_g3: bool,
    pub threshold_mode: ThresholdMode,
}

impl AblationSwitches {
    pub const FULL: AblationSwitches = AblationSwitches {
        use_g1_s: true,
        use_g1_t: true,
        use_g2: true,
        use_g3: true,
        threshold_mode: ThresholdMode::Adaptive,
    };

    pub const SOURCE_ONLY: AblationSwitches = AblationSwitches {
        use_g1_s: false,
        use_g1_t: false,
        use_g2: false,
        use_g3: false,
        threshold_mode: ThresholdMode::Adaptive,
    };

    pub fn needs_d1(&self) -> bool {
        self.use_g1_s || self.use_g1_t || self.needs_confidence()
    }

    pub fn needs_d2(&self) -> bool {
        self.use_g2
    }

    fn needs_confidence(&self) -> bool {
        self.use_g3 && self.threshold_mode != ThresholdMode::Disabled
    }

    fn needs_target(&self) -> bool {
        self.use_g1_t || self.use_g2 || self.use_g3
    }
}

/// The eight ablation rows, in reporting order.
pub fn ablation_rows() -> [(&'static str, AblationSwitches); 8] {
    let full = AblationSwitches::FULL;
    [
        ("supervised_only", AblationSwitches::SOURCE_ONLY),
        (
            "no_g1_s",
            AblationSwitches {
                use_g1_s: false,
                ..full
            },
        ),
        (
            "no_g1_t",
            AblationSwitches {
                use_g1_t: false,
                ..full
            },
        ),
        ("no_g2_t", AblationSwitches { use_g2: false, ..full }),
        ("no_self_training", AblationSwitches { use_g3: false, ..full }),
        (
            "no_threshold",
            AblationSwitches {
                threshold_mode: ThresholdMode::Disabled,
                ..full
            },
        ),
        (
            "fixed_0.2",
            AblationSwitches {
                threshold_mode: ThresholdMode::Fixed(0.2),
                ..full
            },
        ),
        ("full", full),
    ]
}

/// Polynomial schedule parameters; the horizon is the run length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrConfig {
    pub base: f64,
    pub end: f64,
    pub power: f64,
}

impl LrConfig {
    pub fn schedule(&self, total_steps: u64) -> PolySchedule {
        PolySchedule {
            base_lr: self.base,
            end_lr: self.end,
            total_steps,
            power: self.power,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_interval: u64,
    pub eval_images: usize,

    pub scene: SceneConfig,

    pub generator_width: usize,
    pub leaky_slope: f64,
    pub d1_channels: Vec<usize>,
    pub d2_channels: Vec<usize>,

    pub weights: LossWeights,
    pub eps: f64,
    pub switches: AblationSwitches,

    pub percentile: f64,
    pub min_pixels: usize,
    pub initial_threshold: f64,
    pub class_weight_mode: ClassWeightMode,
    /// Source scenes used to estimate class frequencies.
    pub class_weight_samples: usize,

    pub g_lr: LrConfig,
    pub g_momentum: f64,
    pub g_weight_decay: f64,
    pub d1_lr: LrConfig,
    pub d2_lr: LrConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 1,
            seed: 0,
            eval_interval: 250,
            eval_images: 64,
            scene: SceneConfig::default(),
            generator_width: 16,
            leaky_slope: nets::DEFAULT_LEAKY_SLOPE,
            d1_channels: vec![64, 64, 128, 128, 1],
            d2_channels: vec![48, 48, 96, 96, 1],
            weights: LossWeights::default(),
            eps: losses::DEFAULT_EPS,
            switches: AblationSwitches::FULL,
            percentile: selftrain::DEFAULT_PERCENTILE,
            min_pixels: selftrain::DEFAULT_MIN_PIXELS,
            initial_threshold: 1.0,
            class_weight_mode: ClassWeightMode::Inverse,
            class_weight_samples: 200,
            g_lr: LrConfig {
                base: 1e-2,
                end: 1e-6,
                power: 0.9,
            },
            g_momentum: 0.9,
            g_weight_decay: 1e-4,
            d1_lr: LrConfig {
                base: 1e-4,
                end: 1e-6,
                power: 0.9,
            },
            d2_lr: LrConfig {
                base: 1e-4,
                end: 1e-6,
                power: 0.9,
            },
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.weights.validate()?;
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.eval_interval == 0 {
            return bad("eval interval must be positive".into());
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return bad(format!("percentile must lie in (0, 100], got {}", self.percentile));
        }
        if let ThresholdMode::Fixed(v) = self.switches.threshold_mode {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("fixed threshold must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.initial_threshold) {
            return bad(format!(
                "initial threshold must lie in [0, 1], got {}",
                self.initial_threshold
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if self.class_weight_samples == 0 {
            return bad("class weights need at least one source scene".into());
        }
        for lr in [self.g_lr, self.d1_lr, self.d2_lr] {
            if !(lr.base >= lr.end && lr.end >= 0.0 && lr.power > 0.0) {
                return bad(format!("learning-rate schedule must decay: {lr:?}"));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.scene.num_classes
    }

    fn stream_seed(&self, purpose: u64) -> u64 {
        rng::mix(self.seed, purpose)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub g: Network,
    pub d1: Network,
    pub d2: Network,
}

impl Models {
    pub fn build(cfg: &TrainConfig) -> Result<Self> {
        let c = cfg.num_classes();
        let disc = |channels: &[usize]| DiscriminatorSpec {
            leaky_slope: cfg.leaky_slope,
            ..DiscriminatorSpec::with_channels(channels)
        };
        Ok(Self {
            g: nets::build_generator_with_slope(c, cfg.generator_width, cfg.stream_seed(10), cfg.leaky_slope)?,
            d1: nets::build_discriminator(&disc(&cfg.d1_channels), c, cfg.stream_seed(11))?,
            d2: nets::build_discriminator(&disc(&cfg.d2_channels), c, cfg.stream_seed(12))?,
        })
    }
}

/// One entry of the per-iteration run log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub report: LossReport,
    pub lr_g: f64,
    pub lr_d1: f64,
    pub lr_d2: f64,
    /// Thresholds after this step's update.
    pub thresholds: Vec<f64>,
    /// Target pixels selected for self-training.
    pub selected_pixels: usize,
    /// Target pixels predicted per class.
    pub predicted_pixels: Vec<usize>,
}

/// Everything mutated by a training step.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub models: Models,
    pub opt_g: OptimizerState,
    pub opt_d1: OptimizerState,
    pub opt_d2: OptimizerState,
    pub thresholds: ThresholdState,
    pub class_weights: ClassWeights,
    pub step: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let models = Models::build(cfg)?;
        let opt_g = OptimizerState::sgd(
            &models.g.params,
            cfg.g_lr.schedule(cfg.iterations),
            cfg.g_momentum,
            cfg.g_weight_decay,
        );
        let adam = |net: &Network, lr: LrConfig| {
            OptimizerState::adam(
                &net.params,
                lr.schedule(cfg.iterations),
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            )
        };
        let opt_d1 = adam(&models.d1, cfg.d1_lr);
        let opt_d2 = adam(&models.d2, cfg.d2_lr);
        let thresholds = ThresholdState::new(
            cfg.num_classes(),
            cfg.percentile,
            cfg.min_pixels,
            cfg.switches.threshold_mode,
            cfg.initial_threshold,
        )?;
        let sample_maps: Vec<LabelMap> =
            scenegen::batch_iterator(&cfg.scene, Domain::Source, Split::Train, 1, cfg.stream_seed(20))?
                .take(cfg.class_weight_samples)
                .filter_map(|b| b.labels)
                .collect();
        let class_weights =
            selftrain::class_weights_from_source(&sample_maps, cfg.num_classes(), cfg.class_weight_mode)?;
        Ok(Self {
            models,
            opt_g,
            opt_d1,
            opt_d2,
            thresholds,
            class_weights,
            step: 0,
        })
    }
}

fn finite(term: &'static str, value: f64, step: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term, value, step })
    }
}

fn check_report(r: &LossReport, step: u64) -> Result<()> {
    for (term, value) in [
        ("g0", r.g0),
        ("g1_s", r.g1_s),
        ("g1_t", r.g1_t),
        ("g2_t", r.g2_t),
        ("g3", r.g3),
        ("total", r.total),
    ] {
        finite(term, value, step)?;
    }
    Ok(())
}

/// One G → D1 → D2 update.
pub fn train_step(
    state: &mut TrainState,
    source: &SegmentationBatch,
    target: &SegmentationBatch,
    cfg: &TrainConfig,
) -> Result<StepRecord> {
    let sw = cfg.switches;
    let c = cfg.num_classes();
    let step = state.step;
    let source_labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("source batch carries no labels".into()))?;
    if source.domain != Domain::Source || target.domain != Domain::Target {
        return Err(Error::InvalidArgument(
            "train_step expects (source, target) batches".into(),
        ));
    }

    // Generator update.
    let models = &mut state.models;
    let mut tape = Tape::new();
    let g_bind = models.g.bind(&mut tape, true);
    let d1_bind = sw.needs_d1().then(|| models.d1.bind(&mut tape, false));
    let d2_bind = sw.needs_d2().then(|| models.d2.bind(&mut tape, false));

    let xs = tape.constant(source.images.clone());
    let logits_s = models.g.forward(&mut tape, &g_bind, xs)?;
    let probs_s = tape.softmax_channel(logits_s)?;
    let probs_t = if sw.needs_target() || sw.needs_d1() {
        let xt = tape.constant(target.images.clone());
        let logits_t = models.g.forward(&mut tape, &g_bind, xt)?;
        Some(tape.softmax_channel(logits_t)?)
    } else {
        None
    };

    let g0 = losses::supervised_ce(&mut tape, probs_s, source_labels, IGNORE_INDEX, cfg.eps)?;
    let g1_s = match (&d1_bind, sw.use_g1_s) {
        (Some(b), true) => {
            let d = models.d1.forward(&mut tape, b, probs_s)?;
            Some(losses::g_adv1(&mut tape, d, cfg.eps))
        }
        _ => None,
    };
    let d1_on_target = match (&d1_bind, probs_t) {
        (Some(b), Some(pt)) if sw.use_g1_t || sw.needs_confidence() => Some(models.d1.forward(&mut tape, b, pt)?),
        _ => None,
    };
    let g1_t = match (d1_on_target, sw.use_g1_t) {
        (Some(d), true) => Some(losses::g_adv1(&mut tape, d, cfg.eps)),
        _ => None,
    };
    let g2_t = match (&d2_bind, probs_t) {
        (Some(b), Some(pt)) => {
            let d = models.d2.forward(&mut tape, b, pt)?;
            Some(losses::g_adv2(&mut tape, d, cfg.eps))
        }
        _ => None,
    };

    for (term, var) in [("g0", Some(g0)), ("g1_s", g1_s), ("g1_t", g1_t), ("g2_t", g2_t)] {
        if let Some(v) = var {
            finite(term, tape.value(v).item()?, step)?;
        }
    }
    if let Some(d) = d1_on_target {
        if let Some(&bad) = tape.value(d).data().iter().find(|v| !v.is_finite()) {
            finite("d1_confidence", bad, step)?;
        }
    }

    let mut selected_pixels = 0;
    let mut predicted_pixels = vec![0; c];
    if let Some(pt) = probs_t {
        for &label in LabelMap::argmax(tape.value(pt))?.data() {
            predicted_pixels[label as usize] += 1;
        }
    }
    let g3 = match probs_t {
        Some(pt) if sw.use_g3 => {
            let probs_value = tape.value(pt).clone();
            let [n, _, h, w] = probs_value.dims4()?;
            let confidence = match d1_on_target {
                Some(d) => tape.value(d).clone(),
                None => Tensor::zeros(&[n, 1, h, w]),
            };
            let predicted = LabelMap::argmax(&probs_value)?;
            selftrain::update_thresholds(&confidence, &predicted, &mut state.thresholds, step)?;
            let pack = selftrain::build_mask(&confidence, &probs_value, &state.thresholds)?;
            selected_pixels = pack.selected();
            Some(losses::self_training_loss(
                &mut tape,
                pt,
                &pack.one_hot(),
                &pack.mask,
                &state.class_weights.weights,
                cfg.eps,
            )?)
        }
        _ => None,
    };

    let terms = LossTerms {
        g0,
        g1_s,
        g1_t,
        g2_t,
        g3,
    };
    let (total, mut report) = losses::full_loss(&mut tape, &terms, &cfg.weights)?;
    check_report(&report, step)?;
    let grads = tape.backward(total)?;
    models.g.accumulate_grads(&g_bind, &grads)?;
    let lr_g = state.opt_g.step(&mut models.g.params)?;
    models.g.zero_grad();

    let generated_s = tape.value(probs_s).clone();
    let generated_t = probs_t.map(|pt| tape.value(pt).clone());
    drop(tape);

    // D1: generated maps (constants) → 0, ground truth → 1.
    let mut lr_d1 = 0.0;
    if sw.needs_d1() {
        let generated_t = generated_t.as_ref().expect("target forward ran for D1");
        let generated = Tensor::concat_batch(&[&generated_s, generated_t])?;
        let mut tape = Tape::new();
        let bind = models.d1.bind(&mut tape, true);
        let fake = tape.constant(generated);
        let real = tape.constant(source_labels.one_hot(c)?);
        let d_fake = models.d1.forward(&mut tape, &bind, fake)?;
        let d_real = models.d1.forward(&mut tape, &bind, real)?;
        let loss = losses::d1_loss(&mut tape, d_fake, d_real, cfg.eps)?;
        report.d1 = tape.value(loss).item()?;
        finite("d1", report.d1, step)?;
        let grads = tape.backward(loss)?;
        models.d1.accumulate_grads(&bind, &grads)?;
        lr_d1 = state.opt_d1.step(&mut models.d1.params)?;
        models.d1.zero_grad();
    }

    // D2: target predictions → 0, source predictions → 1.
    let mut lr_d2 = 0.0;
    if sw.needs_d2() {
        let generated_t = generated_t.expect("target forward ran for D2");
        let mut tape = Tape::new();
        let bind = models.d2.bind(&mut tape, true);
        let t_in = tape.constant(generated_t);
        let s_in = tape.constant(generated_s);
        let d_t = models.d2.forward(&mut tape, &bind, t_in)?;
        let d_s = models.d2.forward(&mut tape, &bind, s_in)?;
        let loss = losses::d2_loss(&mut tape, d_t, d_s, cfg.eps)?;
        report.d2 = tape.value(loss).item()?;
        finite("d2", report.d2, step)?;
        let grads = tape.backward(loss)?;
        models.d2.accumulate_grads(&bind, &grads)?;
        lr_d2 = state.opt_d2.step(&mut models.d2.params)?;
        models.d2.zero_grad();
    }

    state.step += 1;
    Ok(StepRecord {
        step,
        report,
        lr_g,
        lr_d1,
        lr_d2,
        thresholds: state.thresholds.thresholds().to_vec(),
        selected_pixels,
        predicted_pixels,
    })
}

/// Confusion matrix of `g` on `count` labelled scenes of a split.
pub fn evaluate(
    g: &Network,
    scene: &SceneConfig,
    domain: Domain,
    split: Split,
    count: usize,
) -> Result<ConfusionMatrix> {
    const EVAL_BATCH: usize = 8;
    let mut cm = ConfusionMatrix::new(scene.num_classes);
    let mut stream = scenegen::batch_iterator(scene, domain, split, 1, 0)?;
    let mut remaining = count;
    while remaining > 0 {
        let take = remaining.min(EVAL_BATCH);
        let batches: Vec<SegmentationBatch> = stream.by_ref().take(take).collect();
        let images: Vec<&Tensor> = batches.iter().map(|b| &b.images).collect();
        let truths: Vec<&LabelMap> = batches.iter().filter_map(|b| b.labels.as_ref()).collect();
        let logits = g.infer(&Tensor::concat_batch(&images)?)?;
        cm.accumulate(&LabelMap::argmax(&logits)?, &LabelMap::concat_batch(&truths)?)?;
        remaining -= take;
    }
    Ok(cm)
}

/// Owns the training state and both data streams.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: TrainState,
    source: BatchStream,
    target: BatchStream,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let state = TrainState::new(&cfg)?;
        let source = scenegen::batch_iterator(
            &cfg.scene,
            Domain::Source,
            Split::Train,
            cfg.batch_size,
            cfg.stream_seed(20),
        )?;
        let target = scenegen::batch_iterator(
            &cfg.scene,
            Domain::Target,
            Split::Train,
            cfg.batch_size,
            cfg.stream_seed(21),
        )?;
        Ok(Self {
            cfg,
            state,
            source,
            target,
        })
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let source = self.source.next().expect("endless stream");
        let target = self.target.next().expect("endless stream");
        train_step(&mut self.state, &source, &target, &self.cfg)
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.cfg.iterations
    }

    /// Target-domain confusion matrix on `eval_images` scenes of `split`.
    pub fn evaluate(&self, split: Split) -> Result<ConfusionMatrix> {
        evaluate(
            &self.state.models.g,
            &self.cfg.scene,
            Domain::Target,
            split,
            self.cfg.eval_images,
        )
    }
}

//! Procedural street-like scenes in two appearance domains.
//!
//! A scene seed fixes the geometry (and therefore the label map). The source
//! domain renders it with a clean palette; the target domain pushes the same
//! rendering through a hue rotation, a gamma curve, low-frequency additive
//! noise and a texture-frequency change. Labels never depend on the domain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::{self, SeededRng};
use crate::tensor::{LabelMap, Tensor};

pub const CLASS_NAMES: [&str; 6] = [
    "background",
    "road-band",
    "building-block",
    "circle-object",
    "pole-stripe",
    "rare-blob",
];

pub const BACKGROUND: u8 = 0;
pub const ROAD: u8 = 1;
pub const BUILDING: u8 = 2;
pub const CIRCLE: u8 = 3;
pub const POLE: u8 = 4;
pub const RARE: u8 = 5;

const PALETTE: [[f64; 3]; 6] = [
    [0.55, 0.70, 0.90],
    [0.36, 0.36, 0.40],
    [0.72, 0.46, 0.30],
    [0.22, 0.62, 0.26],
    [0.88, 0.82, 0.22],
    [0.76, 0.22, 0.62],
];

/// Stripe frequency (cycles across the image) and orientation per class.
#[allow(clippy::approx_constant)]
const TEXTURE: [(f64, f64); 6] = [
    (1.0, 1.3),
    (3.0, 0.0),
    (7.0, 1.5708),
    (4.0, 0.8),
    (2.0, 0.0),
    (5.0, 2.2),
];
const TEXTURE_AMPLITUDE: f64 = 0.08;
const SENSOR_NOISE: f64 = 0.02;
const ILLUMINATION_JITTER: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => SPLIT_SPAN,
            Split::Test => 2 * SPLIT_SPAN,
        }
    }

    /// Half-open seed range owned by the split.
    pub fn seed_range(self) -> core::ops::Range<u64> {
        self.base()..self.base() + SPLIT_SPAN
    }
}

const SPLIT_SPAN: u64 = 1 << 40;

/// Appearance change applied to the target domain. All-zero is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainShift {
    pub hue_degrees: f64,
    /// Gamma exponent is `1 + gamma_offset`.
    pub gamma_offset: f64,
    pub noise_amplitude: f64,
    /// Texture frequencies are multiplied by `1 + texture_offset`.
    pub texture_offset: f64,
}

impl DomainShift {
    pub const IDENTITY: DomainShift = DomainShift {
        hue_degrees: 0.0,
        gamma_offset: 0.0,
        noise_amplitude: 0.0,
        texture_offset: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            hue_degrees: 40.0,
            gamma_offset: 0.5,
            noise_amplitude: 0.10,
            texture_offset: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Expected pixel share per class; sums to 1.
    pub class_frequencies: Vec<f64>,
    /// Probability that a scene contains the rare blob.
    pub rare_probability: f64,
    pub shift: DomainShift,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 6,
            class_frequencies: vec![0.352, 0.28, 0.20, 0.10, 0.058, 0.01],
            rare_probability: 0.08,
            shift: DomainShift::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 || self.height % 2 == 1 || self.width % 2 == 1 {
            return Err(Error::InvalidArgument(format!(
                "scene size must be even and at least 8×8, got {}×{}",
                self.height, self.width
            )));
        }
        if !(2..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "scenes support 2..={} classes, got {}",
                CLASS_NAMES.len(),
                self.num_classes
            )));
        }
        if self.class_frequencies.len() != CLASS_NAMES.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} class frequencies, got {}",
                CLASS_NAMES.len(),
                self.class_frequencies.len()
            )));
        }
        let sum: f64 = self.class_frequencies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.class_frequencies.iter().any(|f| *f < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "class frequencies must be non-negative and sum to 1, got sum {sum}"
            )));
        }
        if self.class_frequencies[RARE as usize] >= 0.02 {
            return Err(Error::InvalidArgument(format!(
                "rare-blob frequency must stay below 2%, got {}",
                self.class_frequencies[RARE as usize]
            )));
        }
        if !(self.rare_probability > 0.0 && self.rare_probability <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rare probability must lie in (0, 1], got {}",
                self.rare_probability
            )));
        }
        Ok(())
    }

    pub fn class_names(&self) -> &'static [&'static str] {
        &CLASS_NAMES[..self.num_classes]
    }
}

struct Canvas<'a> {
    labels: &'a mut [u8],
    height: usize,
    width: usize,
    num_classes: usize,
}

impl Canvas<'_> {
    fn paint(&mut self, class: u8, mut inside: impl FnMut(f64, f64) -> bool) {
        if class as usize >= self.num_classes {
            return;
        }
        for y in 0..self.height {
            for x in 0..self.width {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.labels[y * self.width + x] = class;
                }
            }
        }
    }
}

/// Area inflation per class offsetting occlusion by later shapes.
const OVERDRAW: [f64; 6] = [1.0, 1.15, 2.0, 1.1, 1.4, 1.0];

fn jitter(rng: &mut SeededRng, spread: f64) -> f64 {
    rng.gen_range(1.0 - spread..1.0 + spread)
}

fn draw_geometry(seed: u64, cfg: &SceneConfig) -> Vec<u8> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let area = h * w;
    let freq = &cfg.class_frequencies;
    let mut rng = rng::seeded(rng::mix(seed, 0));
    let mut labels = vec![BACKGROUND; cfg.height * cfg.width];
    let mut canvas = Canvas {
        labels: &mut labels,
        height: cfg.height,
        width: cfg.width,
        num_classes: cfg.num_classes,
    };

    // Road band along the bottom with a slight tilt.
    let road_height = freq[ROAD as usize] * OVERDRAW[ROAD as usize] * h * jitter(&mut rng, 0.2);
    let tilt = rng.gen_range(-0.12..0.12);
    let horizon = move |x: f64| h - road_height + tilt * (x - w / 2.0);

    // Buildings resting on the horizon.
    let count = rng.gen_range(1..=3);
    let per_building =
        freq[BUILDING as usize] * OVERDRAW[BUILDING as usize] * area * jitter(&mut rng, 0.25) / count as f64;
    for _ in 0..count {
        let bw = rng.gen_range(w / 5.0..w / 2.5);
        let bh = (per_building / bw).clamp(4.0, h * 0.7);
        let x0 = rng.gen_range(0.0..w - bw);
        let base = horizon(x0 + bw / 2.0) + 1.0;
        canvas.paint(BUILDING, |x, y| x >= x0 && x < x0 + bw && y >= base - bh && y < base);
    }

    canvas.paint(ROAD, |x, y| y >= horizon(x));

    // Poles standing on the horizon.
    let count = rng.gen_range(1..=3);
    let per_pole = freq[POLE as usize] * OVERDRAW[POLE as usize] * area * jitter(&mut rng, 0.25) / count as f64;
    for _ in 0..count {
        let pw = rng.gen_range(3.0..5.0);
        let ph = (per_pole / pw).clamp(4.0, h * 0.85);
        let x0 = rng.gen_range(0.0..w - pw);
        let base = horizon(x0 + pw / 2.0) + 2.0;
        canvas.paint(POLE, |x, y| x >= x0 && x < x0 + pw && y >= base - ph && y < base);
    }

    // Round objects near the horizon.
    let count = rng.gen_range(1..=2);
    let per_circle = freq[CIRCLE as usize] * OVERDRAW[CIRCLE as usize] * area * jitter(&mut rng, 0.25) / count as f64;
    for _ in 0..count {
        let r = libm::sqrt(per_circle / core::f64::consts::PI);
        let cx = rng.gen_range(r..w - r);
        let cy = horizon(cx) + rng.gen_range(-r..r * 0.5);
        canvas.paint(CIRCLE, |x, y| (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r);
    }

    // Rare blob: an ellipse in a small fraction of scenes.
    if rng.gen_bool(cfg.rare_probability) {
        let blob_area = freq[RARE as usize] * area / cfg.rare_probability * jitter(&mut rng, 0.2);
        let aspect = rng.gen_range(0.6..1.6);
        let rx = libm::sqrt(blob_area * aspect / core::f64::consts::PI);
        let ry = blob_area / (core::f64::consts::PI * rx);
        let cx = rng.gen_range(rx.min(w / 2.0)..(w - rx).max(w / 2.0));
        let cy = rng.gen_range(ry.min(h / 2.0)..(h - ry).max(h / 2.0));
        canvas.paint(RARE, |x, y| {
            let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
            dx * dx + dy * dy < 1.0
        });
    }
    labels
}

/// Rotation about the grey axis by `degrees` (Rodrigues' formula).
fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let theta = degrees.to_radians();
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let k = 1.0 / libm::sqrt(3.0);
    let t = 1.0 - c;
    let a = t * k * k;
    [
        [c + a, a - s * k, a + s * k],
        [a + s * k, c + a, a - s * k],
        [a - s * k, a + s * k, c + a],
    ]
}

fn render(seed: u64, cfg: &SceneConfig, labels: &[u8], domain: Domain) -> Vec<f64> {
    let (hh, ww) = (cfg.height, cfg.width);
    let plane = hh * ww;
    let shift = match domain {
        Domain::Source => DomainShift::IDENTITY,
        Domain::Target => cfg.shift,
    };
    let mut rng = rng::seeded(rng::mix(seed, 1));
    let illumination = jitter(&mut rng, ILLUMINATION_JITTER);
    let phases: Vec<f64> = (0..CLASS_NAMES.len())
        .map(|_| rng.gen_range(0.0..core::f64::consts::TAU))
        .collect();
    let texture_scale = 1.0 + shift.texture_offset;
    let mut image = vec![0.0; 3 * plane];
    for y in 0..hh {
        for x in 0..ww {
            let class = labels[y * ww + x] as usize;
            let (freq, angle) = TEXTURE[class];
            let u = (x as f64 * libm::cos(angle) + y as f64 * libm::sin(angle)) / ww as f64;
            let stripe =
                TEXTURE_AMPLITUDE * libm::sin(core::f64::consts::TAU * freq * texture_scale * u + phases[class]);
            for ch in 0..3 {
                let v = PALETTE[class][ch] * illumination + stripe + SENSOR_NOISE * rng::normal(&mut rng);
                image[ch * plane + y * ww + x] = v;
            }
        }
    }
    if domain == Domain::Target && !shift.is_identity() {
        apply_shift(seed, cfg, &shift, &mut image);
    }
    image.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    image
}

fn apply_shift(seed: u64, cfg: &SceneConfig, shift: &DomainShift, image: &mut [f64]) {
    let plane = cfg.height * cfg.width;
    if shift.hue_degrees != 0.0 {
        let m = hue_matrix(shift.hue_degrees);
        for p in 0..plane {
            let rgb = [image[p], image[plane + p], image[2 * plane + p]];
            for (ch, row) in m.iter().enumerate() {
                image[ch * plane + p] = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
            }
        }
    }
    if shift.gamma_offset != 0.0 {
        let gamma = 1.0 + shift.gamma_offset;
        image.iter_mut().for_each(|v| *v = libm::pow(v.clamp(0.0, 1.0), gamma));
    }
    if shift.noise_amplitude != 0.0 {
        let mut rng = rng::seeded(rng::mix(seed, 2));
        let (ch, cw) = ((cfg.height / 8).max(2), (cfg.width / 8).max(2));
        let coarse: Vec<f64> = (0..3 * ch * cw)
            .map(|_| shift.noise_amplitude * rng::normal(&mut rng))
            .collect();
        let smooth = kernels::upsample_forward(&coarse, 3, (ch, cw), (cfg.height, cfg.width));
        image.iter_mut().zip(&smooth).for_each(|(v, n)| *v += n);
    }
}

/// Renders one scene: a 3×H×W image in [0,1] and its H×W labels.
pub fn generate_scene(seed: u64, cfg: &SceneConfig, domain: Domain) -> (Tensor, LabelMap) {
    let labels = draw_geometry(seed, cfg);
    let image = render(seed, cfg, &labels, domain);
    (
        Tensor::new(vec![1, 3, cfg.height, cfg.width], image).expect("sized by config"),
        LabelMap::new([1, cfg.height, cfg.width], labels).expect("sized by config"),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationBatch {
    pub images: Tensor,
    /// Absent for target-domain training batches.
    pub labels: Option<LabelMap>,
    pub domain: Domain,
    pub seeds: Vec<u64>,
}

pub fn render_batch(seeds: &[u64], cfg: &SceneConfig, domain: Domain, keep_labels: bool) -> SegmentationBatch {
    let (h, w) = (cfg.height, cfg.width);
    let mut images = Vec::with_capacity(seeds.len() * 3 * h * w);
    let mut labels = Vec::with_capacity(seeds.len() * h * w);
    for &seed in seeds {
        let (image, label) = generate_scene(seed, cfg, domain);
        images.extend(image.into_data());
        labels.extend(label.into_data());
    }
    SegmentationBatch {
        images: Tensor::new(vec![seeds.len(), 3, h, w], images).expect("sized by config"),
        labels: keep_labels.then(|| LabelMap::new([seeds.len(), h, w], labels).expect("sized by config")),
        domain,
        seeds: seeds.to_vec(),
    }
}

/// Scene seed for sample `index` of a split; splits never share seeds.
pub fn split_seed(split: Split, epoch_seed: u64, index: u64) -> u64 {
    split.base() + rng::mix(epoch_seed, index) % SPLIT_SPAN
}

/// Endless deterministic stream of batches.
#[derive(Clone, Debug)]
pub struct BatchStream {
    cfg: SceneConfig,
    domain: Domain,
    split: Split,
    batch_size: usize,
    epoch_seed: u64,
    next_index: u64,
}

impl Iterator for BatchStream {
    type Item = SegmentationBatch;

    fn next(&mut self) -> Option<SegmentationBatch> {
        let seeds: Vec<u64> = (0..self.batch_size as u64)
            .map(|i| split_seed(self.split, self.epoch_seed, self.next_index + i))
            .collect();
        self.next_index += self.batch_size as u64;
        // Target labels exist only for evaluation splits.
        let keep_labels = !(self.domain == Domain::Target && self.split == Split::Train);
        Some(render_batch(&seeds, &self.cfg, self.domain, keep_labels))
    }
}

pub fn batch_iterator(
    cfg: &SceneConfig,
    domain: Domain,
    split: Split,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<BatchStream> {
    cfg.validate()?;
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(BatchStream {
        cfg: cfg.clone(),
        domain,
        split,
        batch_size,
        epoch_seed,
        next_index: 0,
    })
}

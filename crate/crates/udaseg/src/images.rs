//! Binary PPM (P6) images and PGM (P5) label maps.

use std::fs;
use std::path::{Path, PathBuf};

use udaseg_core::scenegen::{self, Domain, SceneConfig, Split};
use udaseg_core::{LabelMap, Tensor};

use crate::error::{IoContext, Result};

/// Encodes image `index` of an N×3×H×W batch in [0, 1] as P6.
pub fn encode_ppm(images: &Tensor, index: usize) -> Result<Vec<u8>> {
    let [_, c, h, w] = images.dims4()?;
    assert_eq!(c, 3, "PPM needs three channels");
    let plane = h * w;
    let base = index * 3 * plane;
    let data = images.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in 0..plane {
        for ch in 0..3 {
            let v = data[base + ch * plane + p].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Encodes label map `index` as P5 holding raw class ids.
pub fn encode_pgm(labels: &LabelMap, index: usize) -> Vec<u8> {
    let [_, h, w] = labels.shape();
    let plane = h * w;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&labels.data()[index * plane..(index + 1) * plane]);
    out
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// Writes `count` scenes per split and domain under `out/{source,target}/`
/// as `<split>_<index>.ppm` plus `.pgm` where labels are visible: every
/// source split and the target evaluation splits.
pub fn dump_dataset(cfg: &SceneConfig, out: &Path, count: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (domain, dir) in [(Domain::Source, "source"), (Domain::Target, "target")] {
        let dir = out.join(dir);
        fs::create_dir_all(&dir).at(&dir)?;
        for split in [Split::Train, Split::Val, Split::Test] {
            let stream = scenegen::batch_iterator(cfg, domain, split, 1, 0)?;
            for (index, batch) in stream.take(count).enumerate() {
                let stem = format!("{}_{index}", split_name(split));
                let ppm = dir.join(format!("{stem}.ppm"));
                fs::write(&ppm, encode_ppm(&batch.images, 0)?).at(&ppm)?;
                written.push(ppm);
                if let Some(labels) = &batch.labels {
                    let pgm = dir.join(format!("{stem}.pgm"));
                    fs::write(&pgm, encode_pgm(labels, 0)).at(&pgm)?;
                    written.push(pgm);
                }
            }
        }
    }
    Ok(written)
}

//! Dense `f64` tensors and integer label maps.
//!
//! Image-like data uses N×C×H×W layout, row-major, last index fastest.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("shape {shape:?} holds {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(shape_err(
                "Tensor::item",
                format!("expected one element, shape is {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Interprets the shape as N×C×H×W.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err(
                "dims4",
                format!("expected a rank-4 N×C×H×W tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks N×C×H×W tensors with equal C×H×W along the batch axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_batch of nothing".into()))?;
        let [_, c, h, w] = first.dims4()?;
        let mut n_total = 0;
        let mut data = Vec::new();
        for part in parts {
            let [n, pc, ph, pw] = part.dims4()?;
            if (pc, ph, pw) != (c, h, w) {
                return Err(shape_err(
                    "concat_batch",
                    format!("{:?} vs {:?}", first.shape, part.shape),
                ));
            }
            n_total += n;
            data.extend_from_slice(&part.data);
        }
        Tensor::new(vec![n_total, c, h, w], data)
    }
}

/// Per-pixel class labels, N×H×W.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        let expected = shape[0] * shape[1] * shape[2];
        if expected != data.len() {
            return Err(shape_err(
                "LabelMap::new",
                format!("shape {shape:?} holds {expected} labels, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Per-pixel argmax over the channel axis; ties go to the lowest index.
    pub fn argmax(probs: &Tensor) -> Result<Self> {
        let [n, c, h, w] = probs.dims4()?;
        let plane = h * w;
        let mut data = vec![0u8; n * plane];
        let values = probs.data();
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut best = 0usize;
                let mut best_v = values[base + p];
                for k in 1..c {
                    let v = values[base + k * plane + p];
                    if v > best_v {
                        best = k;
                        best_v = v;
                    }
                }
                data[b * plane + p] = best as u8;
            }
        }
        Ok(Self { shape: [n, h, w], data })
    }

    /// One-hot N×C×H×W encoding; ignored pixels become all-zero columns.
    pub fn one_hot(&self, num_classes: usize) -> Result<Tensor> {
        let [n, h, w] = self.shape;
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, num_classes, h, w]);
        let dst = out.data_mut();
        for b in 0..n {
            for p in 0..plane {
                let label = self.data[b * plane + p];
                if label == IGNORE_INDEX {
                    continue;
                }
                if label as usize >= num_classes {
                    return Err(Error::LabelOutOfRange { label, num_classes });
                }
                dst[(b * num_classes + label as usize) * plane + p] = 1.0;
            }
        }
        Ok(out)
    }

    pub fn concat_batch(parts: &[&LabelMap]) -> Result<LabelMap> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_batch of nothing".into()))?;
        let [_, h, w] = first.shape;
        let mut n_total = 0;
        let mut data = Vec::new();
        for part in parts {
            if part.shape[1..] != [h, w] {
                return Err(shape_err(
                    "LabelMap::concat_batch",
                    format!("{:?} vs {:?}", first.shape, part.shape),
                ));
            }
            n_total += part.shape[0];
            data.extend_from_slice(&part.data);
        }
        LabelMap::new([n_total, h, w], data)
    }
}

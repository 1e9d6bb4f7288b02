//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its forward value and the information
//! needed to pull gradients back to its inputs. Node indices only grow, so
//! inputs always precede the nodes that consume them and a single reverse
//! sweep visits each node once.
//!
//! Leaves are either constants or differentiable variables. Ops whose inputs
//! are all constants produce constants; their backward rules are skipped, and
//! a convolution whose weight is constant does not keep its patch matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
        batch: usize,
        out_channels: usize,
        /// Per-image patch matrices, kept only when the weight needs a gradient.
        cols: Option<Vec<f64>>,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid {
        input: Var,
    },
    SoftmaxChannel {
        input: Var,
    },
    Upsample {
        input: Var,
        planes: usize,
        from: (usize, usize),
        to: (usize, usize),
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Mul {
        lhs: Var,
        rhs: Var,
    },
    Affine {
        input: Var,
        scale: f64,
    },
    LnEps {
        input: Var,
        eps: f64,
    },
    MulConst {
        input: Var,
        factor: Vec<f64>,
    },
    Sum {
        input: Var,
    },
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 3] {
        match *self {
            Op::Leaf => [None; 3],
            Op::Conv2d {
                input, weight, bias, ..
            } => [Some(input), Some(weight), Some(bias)],
            Op::Add { lhs, rhs } | Op::Mul { lhs, rhs } => [Some(lhs), Some(rhs), None],
            Op::LeakyRelu { input, .. }
            | Op::Sigmoid { input }
            | Op::SoftmaxChannel { input }
            | Op::Upsample { input, .. }
            | Op::Affine { input, .. }
            | Op::LnEps { input, .. }
            | Op::MulConst { input, .. }
            | Op::Sum { input } => [Some(input), None, None],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every differentiable node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node is a constant or unreachable from the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.all_finite()
                || matches!(op, Op::Leaf)
                || op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|v| !self.nodes[v.0].value.all_finite()),
            "non-finite output from finite inputs in {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf treated as a constant by backward.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4()?;
        if cin != wcin {
            return Err(shape_err(
                "conv2d",
                format!(
                    "input has {cin} channels but weight {:?} expects {wcin}",
                    self.value(weight).shape()
                ),
            ));
        }
        if self.value(bias).shape() != [cout] {
            return Err(shape_err(
                "conv2d",
                format!(
                    "bias shape {:?} does not match {cout} output channels",
                    self.value(bias).shape()
                ),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}×{kw} larger than padded input {h}×{w} (pad {padding})"),
            ));
        }
        let geometry = ConvGeometry {
            in_channels: cin,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let k = geometry.patch_len();
        let plane = geometry.out_plane();
        let keep_cols = self.requires_grad(weight);
        let mut cols_all = if keep_cols {
            vec![0.0; n * k * plane]
        } else {
            Vec::new()
        };
        let mut scratch = if keep_cols { Vec::new() } else { vec![0.0; k * plane] };
        let mut out = vec![0.0; n * cout * plane];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let b = self.value(bias).data();
            for item in 0..n {
                let image = &x[item * cin * h * w..(item + 1) * cin * h * w];
                let cols = if keep_cols {
                    &mut cols_all[item * k * plane..(item + 1) * k * plane]
                } else {
                    &mut scratch[..]
                };
                kernels::im2col(&geometry, image, cols);
                let dst = &mut out[item * cout * plane..(item + 1) * cout * plane];
                for (co, row) in dst.chunks_exact_mut(plane).enumerate() {
                    row.fill(b[co]);
                }
                kernels::gemm(cout, k, plane, wt, false, cols, false, 1.0, dst);
            }
        }
        let requires_grad = self.requires_grad(input) || self.requires_grad(weight) || self.requires_grad(bias);
        let value = Tensor::new(vec![n, cout, geometry.out_h, geometry.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
                batch: n,
                out_channels: cout,
                cols: keep_cols.then_some(cols_all),
            },
            requires_grad,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(input);
        self.push(value, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(input);
        self.push(value, Op::Sigmoid { input }, rg)
    }

    /// Softmax across the channel axis of an N×C×H×W tensor.
    pub fn softmax_channel(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4()?;
        if c < 2 {
            return Err(shape_err(
                "softmax_channel",
                format!("needs at least 2 channels, got {c}"),
            ));
        }
        let data = kernels::softmax_channels(x.data(), n, c, h * w);
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::SoftmaxChannel { input }, rg))
    }

    /// Half-pixel-centre bilinear resize to `out_h`×`out_w` (never shrinking).
    pub fn bilinear_upsample(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4()?;
        if out_h < h || out_w < w {
            return Err(shape_err(
                "bilinear_upsample",
                format!("target {out_h}×{out_w} smaller than input {h}×{w}"),
            ));
        }
        let data = kernels::upsample_forward(x.data(), n * c, (h, w), (out_h, out_w));
        let value = Tensor::new(vec![n, c, out_h, out_w], data)?;
        let rg = self.requires_grad(input);
        Ok(self.push(
            value,
            Op::Upsample {
                input,
                planes: n * c,
                from: (h, w),
                to: (out_h, out_w),
            },
            rg,
        ))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.requires_grad(lhs) || self.requires_grad(rhs);
        Ok(self.push(value, Op::Add { lhs, rhs }, rg))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.requires_grad(lhs) || self.requires_grad(rhs);
        Ok(self.push(value, Op::Mul { lhs, rhs }, rg))
    }

    /// `scale·x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| scale * v + shift).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(input);
        self.push(value, Op::Affine { input, scale }, rg)
    }

    /// `ln(x + eps)`, elementwise.
    pub fn ln_eps(&mut self, input: Var, eps: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| libm::log(v + eps)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(input);
        self.push(value, Op::LnEps { input, eps }, rg)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, input: Var, factor: &Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != factor.shape() {
            return Err(shape_err(
                "mul_const",
                format!("{:?} vs {:?}", x.shape(), factor.shape()),
            ));
        }
        let data = x.data().iter().zip(factor.data()).map(|(a, b)| a * b).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.requires_grad(input);
        Ok(self.push(
            value,
            Op::MulConst {
                input,
                factor: factor.data().to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().sum();
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    /// Arithmetic mean of all elements, as a scalar.
    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len().max(1) as f64;
        let s = self.sum(input);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.requires_grad(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for index in (0..=loss.0).rev() {
            let Some(grad) = grads[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geometry,
                    batch,
                    out_channels,
                    cols,
                } => {
                    let g = geometry;
                    let (cout, k, plane) = (*out_channels, g.patch_len(), g.out_plane());
                    let image_len = g.in_channels * g.height * g.width;
                    if let Some(db) = self.slot(&mut grads, *bias) {
                        for item in 0..*batch {
                            let dy = &grad[item * cout * plane..(item + 1) * cout * plane];
                            for (co, row) in dy.chunks_exact(plane).enumerate() {
                                db[co] += row.iter().sum::<f64>();
                            }
                        }
                    }
                    if let Some(dw) = self.slot(&mut grads, *weight) {
                        let cols = cols.as_ref().expect("patches kept for trainable weight");
                        for item in 0..*batch {
                            let dy = &grad[item * cout * plane..(item + 1) * cout * plane];
                            let c = &cols[item * k * plane..(item + 1) * k * plane];
                            kernels::gemm(cout, plane, k, dy, false, c, true, 1.0, dw);
                        }
                    }
                    if self.requires_grad(*input) {
                        let wt = self.value(*weight).data();
                        let mut dcols = vec![0.0; k * plane];
                        let dx = self.slot(&mut grads, *input).expect("input requires grad");
                        for item in 0..*batch {
                            let dy = &grad[item * cout * plane..(item + 1) * cout * plane];
                            kernels::gemm(k, cout, plane, wt, true, dy, false, 0.0, &mut dcols);
                            let image = &mut dx[item * image_len..(item + 1) * image_len];
                            kernels::col2im_add(g, &dcols, image);
                        }
                    }
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.value(*input).data();
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        for ((d, &v), &gy) in dx.iter_mut().zip(x).zip(&grad) {
                            *d += if v > 0.0 { gy } else { slope * gy };
                        }
                    }
                }
                Op::Sigmoid { input } => {
                    let y = node.value.data();
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        for ((d, &s), &gy) in dx.iter_mut().zip(y).zip(&grad) {
                            *d += gy * s * (1.0 - s);
                        }
                    }
                }
                Op::SoftmaxChannel { input } => {
                    let [n, c, h, w] = node.value.dims4()?;
                    let plane = h * w;
                    let y = node.value.data();
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        for b in 0..n {
                            let base = b * c * plane;
                            for p in 0..plane {
                                let mut dot = 0.0;
                                for k in 0..c {
                                    let i = base + k * plane + p;
                                    dot += y[i] * grad[i];
                                }
                                for k in 0..c {
                                    let i = base + k * plane + p;
                                    dx[i] += y[i] * (grad[i] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Upsample {
                    input,
                    planes,
                    from,
                    to,
                } => {
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        kernels::upsample_backward(&grad, *planes, *from, *to, dx);
                    }
                }
                Op::Add { lhs, rhs } => {
                    for side in [*lhs, *rhs] {
                        if let Some(d) = self.slot(&mut grads, side) {
                            d.iter_mut().zip(&grad).for_each(|(a, b)| *a += b);
                        }
                    }
                }
                Op::Mul { lhs, rhs } => {
                    for (side, other) in [(*lhs, *rhs), (*rhs, *lhs)] {
                        let other = self.value(other).data();
                        if let Some(d) = self.slot(&mut grads, side) {
                            for ((a, &o), &gy) in d.iter_mut().zip(other).zip(&grad) {
                                *a += gy * o;
                            }
                        }
                    }
                }
                Op::Affine { input, scale } => {
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        dx.iter_mut().zip(&grad).for_each(|(a, b)| *a += scale * b);
                    }
                }
                Op::LnEps { input, eps } => {
                    let x = self.value(*input).data();
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        for ((d, &v), &gy) in dx.iter_mut().zip(x).zip(&grad) {
                            *d += gy / (v + eps);
                        }
                    }
                }
                Op::MulConst { input, factor } => {
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        for ((d, &f), &gy) in dx.iter_mut().zip(factor).zip(&grad) {
                            *d += gy * f;
                        }
                    }
                }
                Op::Sum { input } => {
                    let g = grad[0];
                    if let Some(dx) = self.slot(&mut grads, *input) {
                        dx.iter_mut().for_each(|d| *d += g);
                    }
                }
            }
            grads[index] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    /// Gradient buffer for `var`, created on first use; `None` for constants.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], var: Var) -> Option<&'g mut Vec<f64>> {
        if !self.requires_grad(var) {
            return None;
        }
        let len = self.value(var).len();
        Some(grads[var.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

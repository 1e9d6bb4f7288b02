//! Raw numeric kernels shared by the tape ops and the scene renderer.

use alloc::vec;
use alloc::vec::Vec;

/// `c = a·b + beta·c` for row-major `a` (m×k) and `b` (k×n), either of which
/// may be supplied transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: slice lengths are checked above against the (m, k, n) extents
    // and the strides describe dense row-major (or transposed) layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one C×H×W image into a (C·Kh·Kw)×(Ho·Wo) patch matrix.
pub(crate) fn im2col(g: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let src = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *slot = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub(crate) fn col2im_add(g: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let dst = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Source taps for half-pixel-centre bilinear resampling along one axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn bilinear_taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    let max = (src_len - 1) as f64;
    (0..dst_len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Resamples `planes` consecutive h×w planes to out_h×out_w.
pub(crate) fn upsample_forward(
    input: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<f64> {
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = vec![0.0; planes * out_h * out_w];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, ry) in ty.iter().enumerate() {
            let top = &src[ry.lo * w..(ry.lo + 1) * w];
            let bottom = &src[ry.hi * w..(ry.hi + 1) * w];
            for (ox, rx) in tx.iter().enumerate() {
                let upper = top[rx.lo] * (1.0 - rx.frac) + top[rx.hi] * rx.frac;
                let lower = bottom[rx.lo] * (1.0 - rx.frac) + bottom[rx.hi] * rx.frac;
                dst[oy * out_w + ox] = upper * (1.0 - ry.frac) + lower * ry.frac;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(
    grad_out: &[f64],
    planes: usize,
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
    grad_in: &mut [f64],
) {
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    for p in 0..planes {
        let src = &grad_out[p * out_h * out_w..(p + 1) * out_h * out_w];
        let dst = &mut grad_in[p * h * w..(p + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let g = src[oy * out_w + ox];
                let gy0 = g * (1.0 - ry.frac);
                let gy1 = g * ry.frac;
                dst[ry.lo * w + rx.lo] += gy0 * (1.0 - rx.frac);
                dst[ry.lo * w + rx.hi] += gy0 * rx.frac;
                dst[ry.hi * w + rx.lo] += gy1 * (1.0 - rx.frac);
                dst[ry.hi * w + rx.hi] += gy1 * rx.frac;
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Channel softmax over an N×C×(plane) buffer, max-subtracted.
pub(crate) fn softmax_channels(input: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut max = f64::NEG_INFINITY;
            for k in 0..c {
                max = max.max(input[base + k * plane + p]);
            }
            let mut sum = 0.0;
            for k in 0..c {
                let e = libm::exp(input[base + k * plane + p] - max);
                out[base + k * plane + p] = e;
                sum += e;
            }
            for k in 0..c {
                out[base + k * plane + p] /= sum;
            }
        }
    }
    out
}

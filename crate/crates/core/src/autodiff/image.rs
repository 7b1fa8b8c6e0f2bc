//! Image ops on `[N×C×H×W]` tensors.

use alloc::vec;
use alloc::vec::Vec;

use super::{Grads, Op, Tape, Var};
use crate::error::{dim_err, param_err, Result};

/// Output extent of a window sweep, or `None` when the window does not fit.
pub fn conv_output_len(size: usize, kernel: usize, padding: usize, stride: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub padding: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Visits every (input offset, kernel offset, output offset) triple that
    /// lands inside the unpadded input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = self;
        for n in 0..g.batch {
            for o in 0..g.c_out {
                let out_base = (n * g.c_out + o) * g.out_h * g.out_w;
                for c in 0..g.c_in {
                    let in_base = (n * g.c_in + c) * g.h * g.w;
                    let k_base = (o * g.c_in + c) * g.kh * g.kw;
                    for oy in 0..g.out_h {
                        for i in 0..g.kh {
                            let y = (oy * g.stride + i) as isize - g.padding as isize;
                            if y < 0 || y >= g.h as isize {
                                continue;
                            }
                            let y = y as usize;
                            for ox in 0..g.out_w {
                                for j in 0..g.kw {
                                    let x = (ox * g.stride + j) as isize - g.padding as isize;
                                    if x < 0 || x >= g.w as isize {
                                        continue;
                                    }
                                    f(in_base + y * g.w + x as usize, k_base + i * g.kw + j, out_base + oy * g.out_w + ox);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn nchw(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match shape {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        _ => Err(dim_err!("{} must be N×C×H×W, got {:?}", what, shape)),
    }
}

/// Per-axis source indices and weights for half-pixel bilinear upsampling.
fn bilinear_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Tape {
    /// Cross-correlation with zero padding (no kernel flip).
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: usize, stride: usize) -> Result<Var> {
        let (batch, c_in, h, w) = nchw(self.shape(input), "conv2d input")?;
        let (c_out, kc, kh, kw) = nchw(self.shape(kernel), "conv2d kernel")?;
        if kc != c_in {
            return Err(dim_err!(
                "conv2d kernel {:?} expects {} input channels, input {:?} has {}",
                self.shape(kernel),
                kc,
                self.shape(input),
                c_in
            ));
        }
        if self.shape(bias) != [c_out] {
            return Err(dim_err!("conv2d bias {:?} must be [{}]", self.shape(bias), c_out));
        }
        if stride == 0 {
            return Err(param_err!("conv2d stride must be >= 1"));
        }
        let (Some(out_h), Some(out_w)) = (conv_output_len(h, kh, padding, stride), conv_output_len(w, kw, padding, stride))
        else {
            return Err(dim_err!(
                "conv2d kernel {}×{} larger than padded input {}×{} (padding {})",
                kh,
                kw,
                h + 2 * padding,
                w + 2 * padding,
                padding
            ));
        };
        let geom = ConvGeom { batch, c_in, h, w, c_out, kh, kw, padding, stride, out_h, out_w };
        let (xv, kv, bv) = (self.value(input), self.value(kernel), self.value(bias));
        let mut out = vec![0.0; batch * c_out * out_h * out_w];
        for (plane, chunk) in out.chunks_exact_mut(out_h * out_w).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bv[plane % c_out]);
        }
        geom.for_each_tap(|xi, ki, oi| out[oi] += xv[xi] * kv[ki]);
        let op = Op::Conv2d { input: self.idx(input), kernel: self.idx(kernel), bias: self.idx(bias), geom };
        Ok(self.push(vec![batch, c_out, out_h, out_w], out, op))
    }

    /// Max pooling; returns the output and, per output element, the flat
    /// input offset of the selected maximum (first occurrence in row-major
    /// window order on ties).
    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<(Var, Vec<usize>)> {
        let (n, c, h, w) = nchw(self.shape(input), "maxpool2d input")?;
        if k == 0 || stride == 0 {
            return Err(param_err!("maxpool2d window and stride must be >= 1"));
        }
        let (Some(out_h), Some(out_w)) = (conv_output_len(h, k, 0, stride), conv_output_len(w, k, 0, stride)) else {
            return Err(dim_err!("maxpool2d window {}×{} exceeds input {}×{}", k, k, h, w));
        };
        let xv = self.value(input);
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut best = base + oy * stride * w + ox * stride;
                    for i in 0..k {
                        for j in 0..k {
                            let at = base + (oy * stride + i) * w + ox * stride + j;
                            if xv[at] > xv[best] {
                                best = at;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let op = Op::MaxPool2d { a: self.idx(input), argmax: argmax.clone() };
        Ok((self.push(vec![n, c, out_h, out_w], out, op), argmax))
    }

    /// Replicates each pixel into a `factor×factor` block.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(input), "upsample input")?;
        if factor < 1 {
            return Err(param_err!("upsample factor must be >= 1, got {}", factor));
        }
        let (oh, ow) = (h * factor, w * factor);
        let xv = self.value(input);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    out.push(xv[plane * h * w + (y / factor) * w + x / factor]);
                }
            }
        }
        let op = Op::UpsampleNearest { a: self.idx(input), planes: n * c, h, w, factor };
        Ok(self.push(vec![n, c, oh, ow], out, op))
    }

    /// Bilinear upsampling with half-pixel centres, edges clamped.
    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(input), "upsample input")?;
        if factor < 1 {
            return Err(param_err!("upsample factor must be >= 1, got {}", factor));
        }
        let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
        let xv = self.value(input);
        let mut out = Vec::with_capacity(n * c * ty.len() * tx.len());
        for plane in 0..n * c {
            let p = &xv[plane * h * w..(plane + 1) * h * w];
            for &(y0, y1, ly) in &ty {
                for &(x0, x1, lx) in &tx {
                    let top = p[y0 * w + x0] * (1.0 - lx) + p[y0 * w + x1] * lx;
                    let bot = p[y1 * w + x0] * (1.0 - lx) + p[y1 * w + x1] * lx;
                    out.push(top * (1.0 - ly) + bot * ly);
                }
            }
        }
        let op = Op::UpsampleBilinear { a: self.idx(input), planes: n * c, h, w, factor };
        Ok(self.push(vec![n, c, h * factor, w * factor], out, op))
    }

    /// Zero-pads (bottom/right) or crops each plane to `out_h×out_w`.
    pub fn pad_crop(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(input), "pad_crop input")?;
        if out_h == 0 || out_w == 0 {
            return Err(dim_err!("pad_crop target {}×{} must be positive", out_h, out_w));
        }
        let xv = self.value(input);
        let mut out = vec![0.0; n * c * out_h * out_w];
        for plane in 0..n * c {
            for y in 0..h.min(out_h) {
                for x in 0..w.min(out_w) {
                    out[plane * out_h * out_w + y * out_w + x] = xv[plane * h * w + y * w + x];
                }
            }
        }
        let op = Op::PadCrop { a: self.idx(input), planes: n * c, h, w, out_h, out_w };
        Ok(self.push(vec![n, c, out_h, out_w], out, op))
    }
}

pub(super) fn conv2d_backward(input: usize, kernel: usize, bias: usize, geom: &ConvGeom, up: &[f64], g: &mut Grads<'_>) {
    let (xv, kv) = (g.data(input), g.data(kernel));
    if let Some(dx) = g.slot(input) {
        geom.for_each_tap(|xi, ki, oi| dx[xi] += up[oi] * kv[ki]);
    }
    if let Some(dk) = g.slot(kernel) {
        geom.for_each_tap(|xi, ki, oi| dk[ki] += up[oi] * xv[xi]);
    }
    if let Some(db) = g.slot(bias) {
        for (plane, chunk) in up.chunks_exact(geom.out_h * geom.out_w).enumerate() {
            db[plane % geom.c_out] += chunk.iter().sum::<f64>();
        }
    }
}

pub(super) fn maxpool_backward(a: usize, argmax: &[usize], up: &[f64], g: &mut Grads<'_>) {
    if let Some(da) = g.slot(a) {
        for (&at, u) in argmax.iter().zip(up) {
            da[at] += u;
        }
    }
}

pub(super) fn upsample_nearest_backward(
    a: usize,
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    up: &[f64],
    g: &mut Grads<'_>,
) {
    if let Some(da) = g.slot(a) {
        let (oh, ow) = (h * factor, w * factor);
        for plane in 0..planes {
            for y in 0..oh {
                for x in 0..ow {
                    da[plane * h * w + (y / factor) * w + x / factor] += up[plane * oh * ow + y * ow + x];
                }
            }
        }
    }
}

pub(super) fn upsample_bilinear_backward(
    a: usize,
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    up: &[f64],
    g: &mut Grads<'_>,
) {
    if let Some(da) = g.slot(a) {
        let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
        let mut it = up.iter();
        for plane in 0..planes {
            let d = &mut da[plane * h * w..(plane + 1) * h * w];
            for &(y0, y1, ly) in &ty {
                for &(x0, x1, lx) in &tx {
                    let u = *it.next().expect("gradient matches output size");
                    d[y0 * w + x0] += u * (1.0 - ly) * (1.0 - lx);
                    d[y0 * w + x1] += u * (1.0 - ly) * lx;
                    d[y1 * w + x0] += u * ly * (1.0 - lx);
                    d[y1 * w + x1] += u * ly * lx;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn pad_crop_backward(
    a: usize,
    planes: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    up: &[f64],
    g: &mut Grads<'_>,
) {
    if let Some(da) = g.slot(a) {
        for plane in 0..planes {
            for y in 0..h.min(out_h) {
                for x in 0..w.min(out_w) {
                    da[plane * h * w + y * w + x] += up[plane * out_h * out_w + y * out_w + x];
                }
            }
        }
    }
}

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{Grads, Op, Tape, Var};
use crate::error::{dim_err, param_err, Result};
use crate::rng::Rng;

/// Dot product with four independent partial sums.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {} out of range for shape {:?}", axis, shape));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn matrix_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(dim_err!("{} must be a matrix, got shape {:?}", what, shape)),
    }
}

impl Tape {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err!("{}: shapes {:?} and {:?} differ", what, sa, sb));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let n = self.node(a);
        let data = n.data.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        self.push(shape, data, op)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, op))
    }

    /// Matrix product `a · b` of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.shape(a), "matmul lhs")?;
        let (k2, n) = matrix_dims(self.shape(b), "matmul rhs")?;
        if k != k2 {
            return Err(dim_err!(
                "matmul inner dimensions disagree: {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(av[i * k + p], &bv[p * n..(p + 1) * n], row);
            }
        }
        let (ai, bi) = (self.idx(a), self.idx(b));
        Ok(self.push(vec![m, n], out, Op::MatMul { a: ai, b: bi, m, k, n }))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`; the layout of a linear layer.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.shape(a), "matmul_nt lhs")?;
        let (n, k2) = matrix_dims(self.shape(b), "matmul_nt rhs")?;
        if k != k2 {
            return Err(dim_err!(
                "matmul_nt inner dimensions disagree: {:?} · {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            ));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bv[j * k..(j + 1) * k]);
            }
        }
        let (ai, bi) = (self.idx(a), self.idx(b));
        Ok(self.push(vec![m, n], out, Op::MatMulNT { a: ai, b: bi, m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = matrix_dims(self.shape(a), "transpose input")?;
        let av = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = av[r * cols + c];
            }
        }
        let ai = self.idx(a);
        Ok(self.push(vec![cols, rows], out, Op::Transpose { a: ai, rows, cols }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add { a: self.idx(a), b: self.idx(b) };
        self.binary(a, b, "add", |x, y| x + y, op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub { a: self.idx(a), b: self.idx(b) };
        self.binary(a, b, "sub", |x, y| x - y, op)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul { a: self.idx(a), b: self.idx(b) };
        self.binary(a, b, "mul", |x, y| x * y, op)
    }

    /// Adds `bias: [d]` to every length-`d` row along the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(a).last().expect("rank >= 1");
        if self.shape(bias) != [d] {
            return Err(dim_err!(
                "bias of shape {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(a)
            ));
        }
        let bv = self.value(bias);
        let data = self
            .value(a)
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(bv).map(|(x, b)| x + b))
            .collect();
        let shape = self.shape(a).to_vec();
        let op = Op::AddBias { a: self.idx(a), bias: self.idx(bias), d };
        Ok(self.push(shape, data, op))
    }

    /// Adds a constant of the same shape; no gradient flows to `c`.
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(dim_err!(
                "constant of length {} does not match shape {:?}",
                c.len(),
                self.shape(a)
            ));
        }
        let data = self.value(a).iter().zip(c).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let op = Op::AddConst { a: self.idx(a) };
        Ok(self.push(shape, data, op))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let op = Op::Scale { a: self.idx(a), s };
        self.unary(a, |x| x * s, op)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let op = Op::Sum { a: self.idx(a) };
        self.push(vec![1], vec![s], op)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let op = Op::Mean { a: self.idx(a) };
        self.push(vec![1], vec![s], op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let op = Op::Tanh { a: self.idx(a) };
        self.unary(a, libm::tanh, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let op = Op::Relu { a: self.idx(a) };
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, op)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = split_axis(self.shape(a), axis)?;
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = libm::exp(x[at(j)] - max);
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let shape = self.shape(a).to_vec();
        let op = Op::Softmax { a: self.idx(a), outer, len, inner };
        Ok(self.push(shape, out, op))
    }

    /// Standardises each last-axis row, then applies `gamma`, `beta`.
    /// Variance is the population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().expect("rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err!(
                "layer_norm affine parameters {:?}/{:?} do not match last axis of {:?}",
                self.shape(gamma),
                self.shape(beta),
                self.shape(x)
            ));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = xv.len() / d;
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / libm::sqrt(var + eps);
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let op = Op::LayerNorm {
            x: self.idx(x),
            gamma: self.idx(gamma),
            beta: self.idx(beta),
            d,
            xhat,
            rstd,
        };
        Ok(self.push(shape, out, op))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        Tape::check_len(self.value(a).len(), shape)?;
        let data = self.value(a).to_vec();
        let op = Op::Reshape { a: self.idx(a) };
        Ok(self.push(shape.to_vec(), data, op))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (outer, len_in, inner) = split_axis(self.shape(a), axis)?;
        if len == 0 || start + len > len_in {
            return Err(dim_err!(
                "narrow [{}, {}) outside axis {} of {:?}",
                start,
                start + len,
                axis,
                self.shape(a)
            ));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * len_in * inner + start * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape(a).to_vec();
        shape[axis] = len;
        let op = Op::Narrow { a: self.idx(a), outer, len_in, start, len, inner };
        Ok(self.push(shape, out, op))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| param_err!("concat of zero tensors"))?;
        let base_shape = self.shape(first).to_vec();
        let (outer, _, inner) = split_axis(&base_shape, axis)?;
        let mut meta = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base_shape.len()
                && s.iter().zip(&base_shape).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(dim_err!("concat: {:?} incompatible with {:?} on axis {}", s, base_shape, axis));
            }
            meta.push((self.idx(p), s[axis]));
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(pi, len) in &meta {
                let x = &self.nodes[pi].data;
                out.extend_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        Ok(self.push(shape, out, Op::Concat { parts: meta, outer, total, inner }))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity when `rng` is `None` (evaluation)
    /// or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(param_err!("dropout probability must lie in [0, 1), got {}", p));
        }
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(a),
        };
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        let op = Op::Dropout { a: self.idx(a), mask };
        Ok(self.push(shape, data, op))
    }

    /// Mean squared error over every element.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse_loss")?;
        let (p, t) = (self.value(pred), self.value(target));
        let sse: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let mse = sse / p.len() as f64;
        let op = Op::MseLoss { pred: self.idx(pred), target: self.idx(target) };
        Ok(self.push(vec![1], vec![mse], op))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }
}

pub(super) fn backward(op: &Op, out: &[f64], up: &[f64], g: &mut Grads<'_>) {
    match *op {
        Op::MatMul { a, b, m, k, n } => {
            if g.slot(a).is_some() {
                let bv = g.data(b);
                let da = g.slot(a).unwrap();
                for i in 0..m {
                    let ur = &up[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] += dot(ur, &bv[p * n..(p + 1) * n]);
                    }
                }
            }
            if g.slot(b).is_some() {
                let av = g.data(a);
                let db = g.slot(b).unwrap();
                for i in 0..m {
                    for p in 0..k {
                        axpy(av[i * k + p], &up[i * n..(i + 1) * n], &mut db[p * n..(p + 1) * n]);
                    }
                }
            }
        }
        Op::MatMulNT { a, b, m, k, n } => {
            if g.slot(a).is_some() {
                let bv = g.data(b);
                let da = g.slot(a).unwrap();
                for i in 0..m {
                    let row = &mut da[i * k..(i + 1) * k];
                    for j in 0..n {
                        axpy(up[i * n + j], &bv[j * k..(j + 1) * k], row);
                    }
                }
            }
            if g.slot(b).is_some() {
                let av = g.data(a);
                let db = g.slot(b).unwrap();
                for i in 0..m {
                    let ar = &av[i * k..(i + 1) * k];
                    for j in 0..n {
                        axpy(up[i * n + j], ar, &mut db[j * k..(j + 1) * k]);
                    }
                }
            }
        }
        Op::Transpose { a, rows, cols } => {
            if let Some(da) = g.slot(a) {
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] += up[c * rows + r];
                    }
                }
            }
        }
        Op::Add { a, b } => {
            for i in [a, b] {
                if let Some(d) = g.slot(i) {
                    d.iter_mut().zip(up).for_each(|(d, u)| *d += u);
                }
            }
        }
        Op::Sub { a, b } => {
            if let Some(d) = g.slot(a) {
                d.iter_mut().zip(up).for_each(|(d, u)| *d += u);
            }
            if let Some(d) = g.slot(b) {
                d.iter_mut().zip(up).for_each(|(d, u)| *d -= u);
            }
        }
        Op::Mul { a, b } => {
            for (x, other) in [(a, b), (b, a)] {
                if g.slot(x).is_some() {
                    let ov = g.data(other);
                    let d = g.slot(x).unwrap();
                    for ((d, u), o) in d.iter_mut().zip(up).zip(ov) {
                        *d += u * o;
                    }
                }
            }
        }
        Op::AddBias { a, bias, d } => {
            if let Some(da) = g.slot(a) {
                da.iter_mut().zip(up).for_each(|(x, u)| *x += u);
            }
            if let Some(db) = g.slot(bias) {
                for row in up.chunks_exact(d) {
                    db.iter_mut().zip(row).for_each(|(x, u)| *x += u);
                }
            }
        }
        Op::AddConst { a } | Op::Reshape { a } => {
            if let Some(da) = g.slot(a) {
                da.iter_mut().zip(up).for_each(|(x, u)| *x += u);
            }
        }
        Op::Scale { a, s } => {
            if let Some(da) = g.slot(a) {
                da.iter_mut().zip(up).for_each(|(x, u)| *x += s * u);
            }
        }
        Op::Sum { a } => {
            if let Some(da) = g.slot(a) {
                da.iter_mut().for_each(|x| *x += up[0]);
            }
        }
        Op::Mean { a } => {
            if let Some(da) = g.slot(a) {
                let s = up[0] / da.len() as f64;
                da.iter_mut().for_each(|x| *x += s);
            }
        }
        Op::Tanh { a } => {
            if let Some(da) = g.slot(a) {
                for ((d, u), y) in da.iter_mut().zip(up).zip(out) {
                    *d += u * (1.0 - y * y);
                }
            }
        }
        Op::Relu { a } => {
            if let Some(da) = g.slot(a) {
                for ((d, u), y) in da.iter_mut().zip(up).zip(out) {
                    if *y > 0.0 {
                        *d += u;
                    }
                }
            }
        }
        Op::Softmax { a, outer, len, inner } => {
            if let Some(da) = g.slot(a) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let s: f64 = (0..len).map(|j| up[at(j)] * out[at(j)]).sum();
                        for j in 0..len {
                            da[at(j)] += out[at(j)] * (up[at(j)] - s);
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, d, ref xhat, ref rstd } => {
            let gv = g.data(gamma);
            if let Some(dx) = g.slot(x) {
                for (r, &s) in rstd.iter().enumerate() {
                    let base = r * d;
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        let dh = up[base + j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[base + j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = up[base + j] * gv[j];
                        dx[base + j] += s * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                    }
                }
            }
            if let Some(dg) = g.slot(gamma) {
                for (row_u, row_h) in up.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        dg[j] += row_u[j] * row_h[j];
                    }
                }
            }
            if let Some(db) = g.slot(beta) {
                for row in up.chunks_exact(d) {
                    db.iter_mut().zip(row).for_each(|(x, u)| *x += u);
                }
            }
        }
        Op::Narrow { a, outer, len_in, start, len, inner } => {
            if let Some(da) = g.slot(a) {
                for o in 0..outer {
                    let dst = o * len_in * inner + start * inner;
                    let src = o * len * inner;
                    for (d, u) in da[dst..dst + len * inner].iter_mut().zip(&up[src..src + len * inner]) {
                        *d += u;
                    }
                }
            }
        }
        Op::Concat { ref parts, outer, total, inner } => {
            let mut offset = 0;
            for &(pi, len) in parts {
                if let Some(dp) = g.slot(pi) {
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        let dst = o * len * inner;
                        for (d, u) in dp[dst..dst + len * inner].iter_mut().zip(&up[src..src + len * inner]) {
                            *d += u;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Dropout { a, ref mask } => {
            if let Some(da) = g.slot(a) {
                for ((d, u), m) in da.iter_mut().zip(up).zip(mask) {
                    *d += u * m;
                }
            }
        }
        Op::MseLoss { pred, target } => {
            let diff: Vec<f64> = g.data(pred).iter().zip(g.data(target)).map(|(p, t)| p - t).collect();
            let s = 2.0 * up[0] / diff.len() as f64;
            if let Some(dp) = g.slot(pred) {
                dp.iter_mut().zip(&diff).for_each(|(d, e)| *d += s * e);
            }
            if let Some(dt) = g.slot(target) {
                dt.iter_mut().zip(&diff).for_each(|(d, e)| *d -= s * e);
            }
        }
        _ => unreachable!("image ops are dispatched separately"),
    }
}

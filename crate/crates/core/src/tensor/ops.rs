//! Differentiable operations.
//!
//! Broadcasting is limited to exact-shape and scalar-vs-tensor pairs. The
//! few structured broadcasts a transformer needs (bias rows, per-token
//! conditioning) are separate named ops with their own gradient rules.

use std::sync::Arc;

use super::{gemm, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    /// Partial derivatives (d/da, d/db) at (a, b).
    fn partials<T: Element>(self, a: T, b: T) -> (T, T) {
        match self {
            BinaryOp::Add => (T::one(), T::one()),
            BinaryOp::Sub => (T::one(), -T::one()),
            BinaryOp::Mul => (b, a),
            BinaryOp::Div => (T::one() / b, -a / (b * b)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Square,
    Sqrt,
    Exp,
    Sigmoid,
    Silu,
    /// tanh approximation
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl UnaryOp {
    fn apply<T: Element>(self, x: T) -> T {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Square => x * x,
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Silu => x * sigmoid(x),
            UnaryOp::Gelu => {
                let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
        }
    }

    fn derivative<T: Element>(self, x: T, y: T) -> T {
        match self {
            UnaryOp::Neg => -T::one(),
            UnaryOp::Square => x + x,
            UnaryOp::Sqrt => T::of(0.5) / y,
            UnaryOp::Exp => y,
            UnaryOp::Sigmoid => y * (T::one() - y),
            UnaryOp::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
            UnaryOp::Gelu => {
                let c = T::of(GELU_C);
                let a = T::of(GELU_A);
                let th = (c * (x + a * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + th)
                    + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
            }
        }
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl<T: Element> Tensor<T> {
    /// Pointwise binary op on exact-match shapes, or with one side a scalar.
    pub fn elementwise(&self, op: BinaryOp, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (na, nb) = (self.numel(), other.numel());
        let out_shape = if self.shape() == other.shape() {
            self.shape().to_vec()
        } else if na == 1 {
            other.shape().to_vec()
        } else if nb == 1 {
            self.shape().to_vec()
        } else {
            return Err(Error::shape(self.shape(), other.shape()));
        };
        let n = out_shape.iter().product::<usize>();
        let (a_scalar, b_scalar) = (na == 1 && n != 1, nb == 1 && n != 1);
        let ad = self.shared_data();
        let bd = other.shared_data();
        let at = |i: usize| if a_scalar { ad[0] } else { ad[i] };
        let bt = |i: usize| if b_scalar { bd[0] } else { bd[i] };
        let data: Vec<T> = (0..n).map(|i| op.apply(at(i), bt(i))).collect();
        let (ad2, bd2) = (self.shared_data(), other.shared_data());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let mut ga = vec![T::zero(); if a_scalar { 1 } else { n }];
                let mut gb = vec![T::zero(); if b_scalar { 1 } else { n }];
                for i in 0..n {
                    let a = if a_scalar { ad2[0] } else { ad2[i] };
                    let b = if b_scalar { bd2[0] } else { bd2[i] };
                    let (pa, pb) = op.partials(a, b);
                    ga[if a_scalar { 0 } else { i }] = ga[if a_scalar { 0 } else { i }] + g[i] * pa;
                    gb[if b_scalar { 0 } else { i }] = gb[if b_scalar { 0 } else { i }] + g[i] * pb;
                }
                vec![ra.then_some(ga), rb.then_some(gb)]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(BinaryOp::Div, other)
    }

    pub fn unary(&self, op: UnaryOp) -> Tensor<T> {
        let x = self.shared_data();
        let y: Arc<Vec<T>> = Arc::new(x.iter().map(|&v| op.apply(v)).collect());
        let y2 = Arc::clone(&y);
        Tensor::from_op_shared(self.shape().to_vec(), y, vec![self.clone()], move |g| {
            let gx = g
                .iter()
                .zip(x.iter().zip(y2.iter()))
                .map(|(&g, (&x, &y))| g * op.derivative(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(UnaryOp::Neg)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(UnaryOp::Square)
    }

    pub fn silu(&self) -> Tensor<T> {
        self.unary(UnaryOp::Silu)
    }

    pub fn gelu(&self) -> Tensor<T> {
        self.unary(UnaryOp::Gelu)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(UnaryOp::Sigmoid)
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|&g| g * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x + c).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn sum(&self) -> Tensor<T> {
        let n = self.numel();
        let s = self.data().iter().copied().sum();
        Tensor::from_op(Vec::new(), vec![s], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum().scale(T::one() / T::of(n as f64))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.sub(target)?.square().mean())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(self.shape(), shape));
        }
        Ok(Tensor::from_op_shared(
            shape.to_vec(),
            self.shared_data(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidArgument(format!(
                "permutation {axes:?} invalid for rank {rank}"
            )));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        }
        // For each output flat index, the input flat index.
        let n = self.numel();
        let mut src = vec![0usize; n];
        let mut idx = vec![0usize; rank];
        for s in src.iter_mut() {
            *s = idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum();
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let x = self.data();
        let data = src.iter().map(|&s| x[s]).collect();
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); n];
            for (o, &s) in src.iter().enumerate() {
                gx[s] = g[o];
            }
            vec![Some(gx)]
        }))
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "matmul expects 2-d operands, got {sa:?} and {sb:?}"
            )));
        }
        if sa[1] != sb[0] {
            return Err(Error::InnerExtent {
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (a, b) = (self.shared_data(), other.shared_data());
        let mut c = vec![T::zero(); m * n];
        gemm(m, k, n, &a, false, &b, false, &mut c, false);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            vec![m, n],
            c,
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = ra.then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(m, n, k, g, false, &b, true, &mut ga, false);
                    ga
                });
                let gb = rb.then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(k, m, n, &a, true, g, false, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Batched `[b×m×k] · [b×k×n]`, optionally using the transpose of the right operand
    /// (stored `[b×n×k]`).
    pub fn bmm(&self, other: &Tensor<T>, transpose_rhs: bool) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape(sa, sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_rhs { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::InnerExtent {
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (a, b) = (self.shared_data(), other.shared_data());
        let mut c = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a[i * m * k..(i + 1) * m * k],
                false,
                &b[i * k * n..(i + 1) * k * n],
                transpose_rhs,
                &mut c[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            vec![batch, m, n],
            c,
            vec![self.clone(), other.clone()],
            move |g| {
                let mut ga = ra.then(|| vec![T::zero(); batch * m * k]);
                let mut gb = rb.then(|| vec![T::zero(); batch * k * n]);
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &a[i * m * k..(i + 1) * m * k];
                    let bi = &b[i * k * n..(i + 1) * k * n];
                    if let Some(ga) = ga.as_mut() {
                        // dA = G · B^T  (B logical k×n)
                        gemm(m, n, k, gi, false, bi, !transpose_rhs, &mut ga[i * m * k..(i + 1) * m * k], false);
                    }
                    if let Some(gb) = gb.as_mut() {
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if transpose_rhs {
                            // stored n×k: dB^T = G^T · A
                            gemm(n, m, k, gi, true, ai, false, out, false);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, out, false);
                        }
                    }
                }
                vec![ga, gb]
            },
        ))
    }

    /// Add `row` (shape `[d]`) to every length-`d` row along the last axis.
    pub fn add_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        let d = last_dim(self.shape());
        if row.shape() != [d] {
            return Err(Error::shape(self.shape(), row.shape()));
        }
        let r = row.shared_data();
        let data = self
            .data()
            .chunks(d.max(1))
            .flat_map(|c| c.iter().zip(r.iter()).map(|(&x, &b)| x + b))
            .collect();
        let (rx, rr) = (self.requires_grad(), row.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), row.clone()],
            move |g| {
                let gr = rr.then(|| {
                    let mut gr = vec![T::zero(); d];
                    for c in g.chunks(d.max(1)) {
                        gr.iter_mut().zip(c).for_each(|(a, &b)| *a = *a + b);
                    }
                    gr
                });
                vec![rx.then(|| g.to_vec()), gr]
            },
        ))
    }

    /// Multiply every length-`d` row along the last axis by `row` elementwise.
    pub fn mul_row(&self, row: &Tensor<T>) -> Result<Tensor<T>> {
        let d = last_dim(self.shape());
        if row.shape() != [d] {
            return Err(Error::shape(self.shape(), row.shape()));
        }
        let x = self.shared_data();
        let r = row.shared_data();
        let data = x
            .chunks(d.max(1))
            .flat_map(|c| c.iter().zip(r.iter()).map(|(&x, &w)| x * w))
            .collect();
        let (rx, rr) = (self.requires_grad(), row.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), row.clone()],
            move |g| {
                let gx = rx.then(|| {
                    g.chunks(d.max(1))
                        .flat_map(|c| c.iter().zip(r.iter()).map(|(&g, &w)| g * w))
                        .collect()
                });
                let gr = rr.then(|| {
                    let mut gr = vec![T::zero(); d];
                    for (gc, xc) in g.chunks(d.max(1)).zip(x.chunks(d.max(1))) {
                        for j in 0..d {
                            gr[j] = gr[j] + gc[j] * xc[j];
                        }
                    }
                    gr
                });
                vec![gx, gr]
            },
        ))
    }

    /// `[B×d]` → `[B×L×d]` by repeating each row for `tokens` positions.
    pub fn expand_tokens(&self, tokens: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "expand_tokens expects [B×d], got {s:?}"
            )));
        }
        let (b, d) = (s[0], s[1]);
        let x = self.data();
        let mut data = Vec::with_capacity(b * tokens * d);
        for i in 0..b {
            for _ in 0..tokens {
                data.extend_from_slice(&x[i * d..(i + 1) * d]);
            }
        }
        Ok(Tensor::from_op(vec![b, tokens, d], data, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); b * d];
            for i in 0..b {
                for l in 0..tokens {
                    let src = &g[(i * tokens + l) * d..(i * tokens + l + 1) * d];
                    gx[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, &s)| *a = *a + s);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Rows of a `[V×d]` table selected by `indices`, giving `[n×d]`.
    pub fn embedding(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!("embedding table must be 2-d, got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!("embedding index {bad} >= {v}")));
        }
        let table = self.data();
        let data = indices
            .iter()
            .flat_map(|&i| table[i * d..(i + 1) * d].iter().copied())
            .collect();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(vec![indices.len(), d], data, vec![self.clone()], move |g| {
            let mut gt = vec![T::zero(); v * d];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..d {
                    gt[i * d + j] = gt[i * d + j] + g[r * d + j];
                }
            }
            vec![Some(gt)]
        }))
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&self) -> Tensor<T> {
        let d = last_dim(self.shape()).max(1);
        let mut y = self.to_vec();
        for row in y.chunks_mut(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let y = Arc::new(y);
        let y2 = Arc::clone(&y);
        Tensor::from_op_shared(self.shape().to_vec(), y, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for ((gr, yr), out) in g.chunks(d).zip(y2.chunks(d)).zip(gx.chunks_mut(d)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for j in 0..d {
                    out[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// `x / sqrt(mean(x²) + eps)` along the last axis, without gain.
    pub fn rms_normalize(&self, eps: f64) -> Tensor<T> {
        let d = last_dim(self.shape()).max(1);
        let eps = T::of(eps);
        let dt = T::of(d as f64);
        let x = self.data();
        let mut y = Vec::with_capacity(x.len());
        let mut inv = Vec::with_capacity(x.len() / d);
        for row in x.chunks(d) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dt;
            let r = T::one() / (ms + eps).sqrt();
            inv.push(r);
            y.extend(row.iter().map(|&v| v * r));
        }
        let y = Arc::new(y);
        let y2 = Arc::clone(&y);
        Tensor::from_op_shared(self.shape().to_vec(), y, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for (((gr, yr), out), &r) in g.chunks(d).zip(y2.chunks(d)).zip(gx.chunks_mut(d)).zip(&inv) {
                let m = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dt;
                for j in 0..d {
                    out[j] = (gr[j] - yr[j] * m) * r;
                }
            }
            vec![Some(gx)]
        })
    }

    /// `(x - mean) / sqrt(var + eps)` along the last axis, without affine terms.
    pub fn layer_normalize(&self, eps: f64) -> Tensor<T> {
        let d = last_dim(self.shape()).max(1);
        let eps = T::of(eps);
        let dt = T::of(d as f64);
        let x = self.data();
        let mut y = Vec::with_capacity(x.len());
        let mut inv = Vec::with_capacity(x.len() / d);
        for row in x.chunks(d) {
            let mu = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dt;
            let r = T::one() / (var + eps).sqrt();
            inv.push(r);
            y.extend(row.iter().map(|&v| (v - mu) * r));
        }
        let y = Arc::new(y);
        let y2 = Arc::clone(&y);
        Tensor::from_op_shared(self.shape().to_vec(), y, vec![self.clone()], move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for (((gr, yr), out), &r) in g.chunks(d).zip(y2.chunks(d)).zip(gx.chunks_mut(d)).zip(&inv) {
                let gm = gr.iter().copied().sum::<T>() / dt;
                let gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dt;
                for j in 0..d {
                    out[j] = (gr[j] - gm - yr[j] * gy) * r;
                }
            }
            vec![Some(gx)]
        })
    }

    /// Rotary position embedding on a `[..., L, d_head]` tensor.
    ///
    /// Pair `(x[2i], x[2i+1])` at position `p` rotates by `p · base^(-2i/d_head)`.
    pub fn rope(&self, positions: &[f64], base: f64) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::InvalidArgument(format!("rope needs [..., L, d], got {s:?}")));
        }
        let (l, dh) = (s[s.len() - 2], s[s.len() - 1]);
        if dh % 2 != 0 {
            return Err(Error::InvalidArgument(format!("rope head width {dh} must be even")));
        }
        if positions.len() != l {
            return Err(Error::InvalidArgument(format!(
                "rope got {} positions for sequence length {l}",
                positions.len()
            )));
        }
        let half = dh / 2;
        let mut cos = Vec::with_capacity(l * half);
        let mut sin = Vec::with_capacity(l * half);
        for &p in positions {
            for i in 0..half {
                let theta = base.powf(-2.0 * i as f64 / dh as f64);
                let (sn, cs) = (p * theta).sin_cos();
                cos.push(T::of(cs));
                sin.push(T::of(sn));
            }
        }
        let rotate = move |x: &[T], inverse: bool| -> Vec<T> {
            let mut out = vec![T::zero(); x.len()];
            for (r, (src, dst)) in x.chunks(dh).zip(out.chunks_mut(dh)).enumerate() {
                let pos = r % l;
                for i in 0..half {
                    let c = cos[pos * half + i];
                    let s = if inverse { -sin[pos * half + i] } else { sin[pos * half + i] };
                    let (a, b) = (src[2 * i], src[2 * i + 1]);
                    dst[2 * i] = a * c - b * s;
                    dst[2 * i + 1] = a * s + b * c;
                }
            }
            out
        };
        let data = rotate(self.data(), false);
        Ok(Tensor::from_op(s.to_vec(), data, vec![self.clone()], move |g| {
            vec![Some(rotate(g, true))]
        }))
    }

    /// Mean Huber distance with threshold `eta`.
    pub fn huber(&self, target: &Tensor<T>, eta: f64) -> Result<Tensor<T>> {
        if self.shape() != target.shape() {
            return Err(Error::shape(self.shape(), target.shape()));
        }
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!("huber threshold must be > 0, got {eta}")));
        }
        let n = self.numel();
        let e = T::of(eta);
        let half = T::of(0.5);
        let r: Vec<T> = self
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let total: T = r
            .iter()
            .map(|&r| {
                let a = r.abs();
                if a <= e {
                    half * r * r
                } else {
                    e * (a - half * e)
                }
            })
            .sum();
        let nt = T::of(n.max(1) as f64);
        let (ra, rb) = (self.requires_grad(), target.requires_grad());
        Ok(Tensor::from_op(
            Vec::new(),
            vec![total / nt],
            vec![self.clone(), target.clone()],
            move |g| {
                let ga: Vec<T> = r
                    .iter()
                    .map(|&r| {
                        let d = if r.abs() <= e { r } else { e * r.signum() };
                        g[0] * d / nt
                    })
                    .collect();
                let gb = rb.then(|| ga.iter().map(|&v| -v).collect());
                vec![ra.then_some(ga), gb]
            },
        ))
    }
}

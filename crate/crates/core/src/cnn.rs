//! From-scratch trainable 1-D convolutional network.
//!
//! Tensors are `(channels, detectors, time)`; the detector axis is 2
//! everywhere and is never mixed by any layer: convolutions slide along
//! time only, with weights shared across detectors. The fixed architecture
//! is seven convolutions, three max-pools, and one fully connected layer;
//! kernel widths (32, 16, 16, 8, 8, 4, 4) and pool widths (8, 6, 4) are
//! forced by the published layer lengths 4096 -> 4065 -> 508 -> 493 -> 478
//! -> 471 -> 78 -> 71 -> 68 -> 65 -> 16.
//!
//! Everything is generic over [`Scalar`]: production weights are `f32`,
//! gradient checks instantiate the identical code at `f64`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Kernel widths of the seven convolutional layers.
pub const KERNEL_WIDTHS: [usize; 7] = [32, 16, 16, 8, 8, 4, 4];
/// Output channels of the seven convolutional layers.
pub const CONV_CHANNELS: [usize; 7] = [8, 16, 16, 32, 64, 128, 128];
/// Pool widths of the three max-pooling layers.
pub const POOL_WIDTHS: [usize; 3] = [8, 6, 4];
/// Flattened feature count entering the fully connected layer.
pub const FLAT_DIM: usize = 4096;
/// Shape of the final convolutional layer's output.
pub const FEATURE_MAP_SHAPE: (usize, usize, usize) = (128, 2, 65);
/// Network input shape.
pub const INPUT_SHAPE: (usize, usize, usize) = (1, 2, 4096);

/// Dense (channels, detectors, time) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub data: Vec<T>,
    pub shape: (usize, usize, usize),
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self { data: vec![T::zero(); shape.0 * shape.1 * shape.2], shape }
    }

    pub fn from_vec(data: Vec<T>, shape: (usize, usize, usize)) -> Result<Self> {
        if data.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::Shape(format!(
                "{} values cannot fill shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { data, shape })
    }

    #[inline]
    pub fn row(&self, ch: usize, det: usize) -> &[T] {
        let t = self.shape.2;
        let base = (ch * self.shape.1 + det) * t;
        &self.data[base..base + t]
    }

    #[inline]
    pub fn row_mut(&mut self, ch: usize, det: usize) -> &mut [T] {
        let t = self.shape.2;
        let base = (ch * self.shape.1 + det) * t;
        &mut self.data[base..base + t]
    }

    /// Widen (or narrow) the scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            data: self.data.iter().map(|&v| U::from_f64_c(v.to_f64_c())).collect(),
            shape: self.shape,
        }
    }
}

const LANES: usize = 8;

/// Dot product with lane-wise accumulation and a fixed-order final reduce;
/// vectorizes well and gives identical results at any SIMD width.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [T::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        for l in 0..LANES {
            acc[l] = acc[l] + a[base + l] * b[base + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..n {
        tail = tail + a[i] * b[i];
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

#[inline]
fn sum_slice<T: Scalar>(a: &[T]) -> T {
    let n = a.len();
    let mut acc = [T::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        for l in 0..LANES {
            acc[l] = acc[l] + a[base + l];
        }
    }
    let mut tail = T::zero();
    for v in &a[chunks * LANES..] {
        tail = tail + *v;
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// `out += w * x` over equal-length slices.
#[inline]
fn axpy<T: Scalar>(out: &mut [T], w: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o = *o + w * v;
    }
}

// The three convolution kernels are monomorphized per kernel width (the
// architecture only uses 4, 8, 16, 32) so the inner loops unroll with
// constant bounds and the accumulator arrays stay register-sized.

/// `out[t] += sum_j w[j] * x[t+j]` in one pass over `t`.
#[inline]
fn fir_accumulate_k<T: Scalar, const K: usize>(out: &mut [T], w: &[T], x: &[T]) {
    let t_out = out.len();
    let chunks = t_out / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        let mut acc = [T::zero(); LANES];
        for j in 0..K {
            let wj = w[j];
            let xs = &x[base + j..base + j + LANES];
            for l in 0..LANES {
                acc[l] = acc[l] + wj * xs[l];
            }
        }
        let o = &mut out[base..base + LANES];
        for l in 0..LANES {
            o[l] = o[l] + acc[l];
        }
    }
    for t in chunks * LANES..t_out {
        let mut s = T::zero();
        for (j, &wj) in w.iter().enumerate() {
            s = s + wj * x[t + j];
        }
        out[t] = out[t] + s;
    }
}

fn fir_accumulate<T: Scalar>(out: &mut [T], w: &[T], x: &[T]) {
    match w.len() {
        4 => fir_accumulate_k::<T, 4>(out, w, x),
        8 => fir_accumulate_k::<T, 8>(out, w, x),
        16 => fir_accumulate_k::<T, 16>(out, w, x),
        32 => fir_accumulate_k::<T, 32>(out, w, x),
        // Any other width: per-position accumulation.
        _ => {
            let t_out = out.len();
            for (j, &wj) in w.iter().enumerate() {
                axpy(out, wj, &x[j..j + t_out]);
            }
        }
    }
}

/// `dw[j] += sum_t g[t] * x[t+j]` for every kernel position in one pass.
#[inline]
fn dw_accumulate_k<T: Scalar, const K: usize>(dw: &mut [T], g: &[T], x: &[T]) {
    let t_out = g.len();
    let mut acc = [[T::zero(); LANES]; K];
    let chunks = t_out / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        let gs = &g[base..base + LANES];
        for (j, a) in acc.iter_mut().enumerate() {
            let xs = &x[base + j..base + j + LANES];
            for l in 0..LANES {
                a[l] = a[l] + gs[l] * xs[l];
            }
        }
    }
    for (j, a) in acc.iter().enumerate() {
        let mut tail = T::zero();
        for t in chunks * LANES..t_out {
            tail = tail + g[t] * x[t + j];
        }
        let s01 = a[0] + a[1];
        let s23 = a[2] + a[3];
        let s45 = a[4] + a[5];
        let s67 = a[6] + a[7];
        dw[j] = dw[j] + ((s01 + s23) + (s45 + s67)) + tail;
    }
}

fn dw_accumulate<T: Scalar>(dw: &mut [T], g: &[T], x: &[T]) {
    match dw.len() {
        4 => dw_accumulate_k::<T, 4>(dw, g, x),
        8 => dw_accumulate_k::<T, 8>(dw, g, x),
        16 => dw_accumulate_k::<T, 16>(dw, g, x),
        32 => dw_accumulate_k::<T, 32>(dw, g, x),
        _ => {
            for (j, d) in dw.iter_mut().enumerate() {
                *d = *d + dot(g, &x[j..j + g.len()]);
            }
        }
    }
}

/// `dx[s] += sum_j w[j] * g[s-j]` (transpose of the valid convolution);
/// the full-overlap interior runs in one lane pass reading `w` reversed.
#[inline]
fn dx_accumulate_k<T: Scalar, const K: usize>(dx: &mut [T], w: &[T], g: &[T]) {
    let t_out = g.len();
    let t_in = dx.len();
    debug_assert_eq!(t_in, t_out + K - 1);
    for s in 0..(K - 1).min(t_in) {
        let mut acc = T::zero();
        for j in 0..=s {
            if s - j < t_out {
                acc = acc + w[j] * g[s - j];
            }
        }
        dx[s] = dx[s] + acc;
    }
    if t_out >= K {
        let interior = &mut dx[K - 1..t_out];
        let chunks = interior.len() / LANES;
        for c in 0..chunks {
            let base = c * LANES;
            let mut acc = [T::zero(); LANES];
            for m in 0..K {
                let wrev = w[K - 1 - m];
                let gs = &g[base + m..base + m + LANES];
                for l in 0..LANES {
                    acc[l] = acc[l] + wrev * gs[l];
                }
            }
            let o = &mut interior[base..base + LANES];
            for l in 0..LANES {
                o[l] = o[l] + acc[l];
            }
        }
        for u in chunks * LANES..interior.len() {
            let mut s = T::zero();
            for m in 0..K {
                s = s + w[K - 1 - m] * g[u + m];
            }
            interior[u] = interior[u] + s;
        }
    }
    for s in t_out.max(K - 1)..t_in {
        let mut acc = T::zero();
        for j in (s - t_out + 1)..K.min(s + 1) {
            acc = acc + w[j] * g[s - j];
        }
        dx[s] = dx[s] + acc;
    }
}

fn dx_accumulate<T: Scalar>(dx: &mut [T], w: &[T], g: &[T]) {
    match w.len() {
        4 => dx_accumulate_k::<T, 4>(dx, w, g),
        8 => dx_accumulate_k::<T, 8>(dx, w, g),
        16 => dx_accumulate_k::<T, 16>(dx, w, g),
        32 => dx_accumulate_k::<T, 32>(dx, w, g),
        _ => {
            for (j, &wj) in w.iter().enumerate() {
                axpy(&mut dx[j..j + g.len()], wj, g);
            }
        }
    }
}

/// 1-D convolution along time, weights shared across the detector axis.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel_w: usize,
    /// `(out_ch, in_ch, kernel_w)` row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel_w: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel_w;
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = (0..out_ch * in_ch * kernel_w)
            .map(|_| T::from_f64_c(rng.gen_range(-limit..limit)))
            .collect();
        Self { in_ch, out_ch, kernel_w, weights, bias: vec![T::zero(); out_ch] }
    }
}

fn conv_forward_k<T: Scalar, const K: usize>(conv: &Conv1d<T>, x: &Tensor3<T>) -> Tensor3<T> {
    let (_, det, t_in) = x.shape;
    let t_out = t_in - K + 1;
    let mut out = Tensor3::zeros((conv.out_ch, det, t_out));
    for o in 0..conv.out_ch {
        let b = conv.bias[o];
        for d in 0..det {
            out.row_mut(o, d).iter_mut().for_each(|v| *v = b);
        }
        for i in 0..conv.in_ch {
            let wbase = (o * conv.in_ch + i) * K;
            let wrow = &conv.weights[wbase..wbase + K];
            for d in 0..det {
                fir_accumulate_k::<T, K>(out.row_mut(o, d), wrow, x.row(i, d));
            }
        }
    }
    out
}

/// Valid, stride-1 convolution along time (no activation applied).
pub fn conv_forward<T: Scalar>(conv: &Conv1d<T>, x: &Tensor3<T>) -> Result<Tensor3<T>> {
    let (in_ch, _det, t_in) = x.shape;
    if in_ch != conv.in_ch {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {in_ch}",
            conv.in_ch
        )));
    }
    if conv.kernel_w > t_in {
        return Err(Error::Shape(format!(
            "kernel width {} exceeds time length {t_in}",
            conv.kernel_w
        )));
    }
    Ok(match conv.kernel_w {
        2 => conv_forward_k::<T, 2>(conv, x),
        3 => conv_forward_k::<T, 3>(conv, x),
        4 => conv_forward_k::<T, 4>(conv, x),
        8 => conv_forward_k::<T, 8>(conv, x),
        16 => conv_forward_k::<T, 16>(conv, x),
        32 => conv_forward_k::<T, 32>(conv, x),
        k => {
            let (_, det, _) = x.shape;
            let t_out = t_in - k + 1;
            let mut out = Tensor3::zeros((conv.out_ch, det, t_out));
            for o in 0..conv.out_ch {
                let b = conv.bias[o];
                for d in 0..det {
                    out.row_mut(o, d).iter_mut().for_each(|v| *v = b);
                }
                for i in 0..conv.in_ch {
                    let wbase = (o * conv.in_ch + i) * k;
                    let wrow = &conv.weights[wbase..wbase + k];
                    for d in 0..det {
                        fir_accumulate(out.row_mut(o, d), wrow, x.row(i, d));
                    }
                }
            }
            out
        }
    })
}

#[doc(hidden)]
pub fn conv_backward_bench<T: Scalar>(
    conv: &Conv1d<T>,
    x: &Tensor3<T>,
    g_out: &Tensor3<T>,
) -> (Vec<T>, Vec<T>, Tensor3<T>) {
    conv_backward(conv, x, g_out)
}

fn conv_backward_k<T: Scalar, const K: usize>(
    conv: &Conv1d<T>,
    x: &Tensor3<T>,
    g_out: &Tensor3<T>,
) -> (Vec<T>, Vec<T>, Tensor3<T>) {
    let (_, det, t_in) = x.shape;
    let mut dw = vec![T::zero(); conv.weights.len()];
    let mut db = vec![T::zero(); conv.out_ch];
    let mut dx = Tensor3::zeros((conv.in_ch, det, t_in));
    for o in 0..conv.out_ch {
        for d in 0..det {
            let grow = g_out.row(o, d);
            db[o] = db[o] + sum_slice(grow);
            for i in 0..conv.in_ch {
                let wbase = (o * conv.in_ch + i) * K;
                dw_accumulate_k::<T, K>(&mut dw[wbase..wbase + K], grow, x.row(i, d));
                dx_accumulate_k::<T, K>(dx.row_mut(i, d), &conv.weights[wbase..wbase + K], grow);
            }
        }
    }
    (dw, db, dx)
}

fn conv_backward<T: Scalar>(
    conv: &Conv1d<T>,
    x: &Tensor3<T>,
    g_out: &Tensor3<T>,
) -> (Vec<T>, Vec<T>, Tensor3<T>) {
    match conv.kernel_w {
        2 => conv_backward_k::<T, 2>(conv, x, g_out),
        3 => conv_backward_k::<T, 3>(conv, x, g_out),
        4 => conv_backward_k::<T, 4>(conv, x, g_out),
        8 => conv_backward_k::<T, 8>(conv, x, g_out),
        16 => conv_backward_k::<T, 16>(conv, x, g_out),
        32 => conv_backward_k::<T, 32>(conv, x, g_out),
        k => {
            let (_, det, t_in) = x.shape;
            let mut dw = vec![T::zero(); conv.weights.len()];
            let mut db = vec![T::zero(); conv.out_ch];
            let mut dx = Tensor3::zeros((conv.in_ch, det, t_in));
            for o in 0..conv.out_ch {
                for d in 0..det {
                    let grow = g_out.row(o, d);
                    db[o] = db[o] + sum_slice(grow);
                    for i in 0..conv.in_ch {
                        let wbase = (o * conv.in_ch + i) * k;
                        dw_accumulate(&mut dw[wbase..wbase + k], grow, x.row(i, d));
                        dx_accumulate(dx.row_mut(i, d), &conv.weights[wbase..wbase + k], grow);
                    }
                }
            }
            (dw, db, dx)
        }
    }
}

/// Non-overlapping max pooling along time; the trailing remainder is dropped.
pub fn maxpool_forward<T: Scalar>(x: &Tensor3<T>, pool_w: usize) -> Result<Tensor3<T>> {
    if pool_w == 0 {
        return Err(Error::Parameter("pool width must be at least 1".into()));
    }
    let (ch, det, t_in) = x.shape;
    let t_out = t_in / pool_w;
    let mut out = Tensor3::zeros((ch, det, t_out));
    for c in 0..ch {
        for d in 0..det {
            let xrow = x.row(c, d);
            let orow = out.row_mut(c, d);
            for (t, o) in orow.iter_mut().enumerate() {
                let w = &xrow[t * pool_w..t * pool_w + pool_w];
                let mut m = w[0];
                for &v in &w[1..] {
                    if v > m {
                        m = v;
                    }
                }
                *o = m;
            }
        }
    }
    Ok(out)
}

fn maxpool_backward<T: Scalar>(x: &Tensor3<T>, pool_w: usize, g_out: &Tensor3<T>) -> Tensor3<T> {
    let (ch, det, t_in) = x.shape;
    let t_out = g_out.shape.2;
    let mut dx = Tensor3::zeros((ch, det, t_in));
    for c in 0..ch {
        for d in 0..det {
            let xrow = x.row(c, d);
            let grow = g_out.row(c, d);
            let dxrow = dx.row_mut(c, d);
            for t in 0..t_out {
                let w = &xrow[t * pool_w..t * pool_w + pool_w];
                let mut arg = 0usize;
                let mut m = w[0];
                for (j, &v) in w.iter().enumerate().skip(1) {
                    if v > m {
                        m = v;
                        arg = j;
                    }
                }
                dxrow[t * pool_w + arg] = dxrow[t * pool_w + arg] + grow[t];
            }
        }
    }
    dx
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `(out_dim, in_dim)` row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..out_dim * in_dim)
            .map(|_| T::from_f64_c(rng.gen_range(-limit..limit)))
            .collect();
        Self { in_dim, out_dim, weights, bias: vec![T::zero(); out_dim] }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut m = logits[0];
    for &v in &logits[1..] {
        if v > m {
            m = v;
        }
    }
    let exps: Vec<T> = logits.iter().map(|&v| (v - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Affine map followed by softmax.
pub fn dense_softmax_forward<T: Scalar>(dense: &Dense<T>, flat: &[T]) -> Result<Vec<T>> {
    if flat.len() != dense.in_dim {
        return Err(Error::Shape(format!(
            "dense expects {} inputs, got {}",
            dense.in_dim,
            flat.len()
        )));
    }
    let logits: Vec<T> = (0..dense.out_dim)
        .map(|o| dense.bias[o] + dot(&dense.weights[o * dense.in_dim..(o + 1) * dense.in_dim], flat))
        .collect();
    Ok(softmax(&logits))
}

/// Cross-entropy of a probability vector against an integer label.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> T {
    let p = probs[label].max(T::from_f64_c(1e-12));
    -p.ln()
}

/// One network layer; ReLU is applied after every convolution by the
/// network driver, not stored as a separate layer.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv1d<T>),
    MaxPool(usize),
    Flatten,
    Dense(Dense<T>),
}

/// Model variant; only the classifier head differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Half,
    Third,
}

impl Variant {
    pub fn n_classes(self) -> usize {
        match self {
            Variant::Baseline | Variant::Half => 2,
            Variant::Third => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Half => "half",
            Variant::Third => "third",
        }
    }
}

/// The convolutional stack plus classifier head.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    pub n_classes: usize,
}

struct ForwardState<T> {
    /// Input of each conv/pool/flatten layer, then the final pooled tensor.
    inputs: Vec<Tensor3<T>>,
    flat: Vec<T>,
    probs: Vec<T>,
}

/// One recorded layer output, for shape audits and feature-map export.
#[derive(Debug, Clone)]
pub struct TraceEntry<T> {
    pub label: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Network<T> {
    /// Build the fixed architecture with seeded He-uniform initialization.
    pub fn with_table_architecture(n_classes: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        let mut in_ch = 1;
        let mut conv_idx = 0;
        let mut pool_idx = 0;
        // conv, pool, conv, conv, conv, pool, conv, conv, conv, pool
        for &is_pool in [0u8, 1, 0, 0, 0, 1, 0, 0, 0, 1].iter() {
            if is_pool == 1 {
                layers.push(Layer::MaxPool(POOL_WIDTHS[pool_idx]));
                pool_idx += 1;
            } else {
                let out_ch = CONV_CHANNELS[conv_idx];
                layers.push(Layer::Conv(Conv1d::new(in_ch, out_ch, KERNEL_WIDTHS[conv_idx], rng)));
                in_ch = out_ch;
                conv_idx += 1;
            }
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense(Dense::new(FLAT_DIM, n_classes, rng)));
        Self { layers, n_classes }
    }

    fn check_input(&self, x: &Tensor3<T>) -> Result<()> {
        if x.shape != INPUT_SHAPE {
            return Err(Error::Shape(format!(
                "network input must be {:?}, got {:?}",
                INPUT_SHAPE, x.shape
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor3<T>, keep: bool) -> Result<ForwardState<T>> {
        let mut inputs: Vec<Tensor3<T>> = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut cur = x.clone();
        let mut flat = Vec::new();
        let mut probs = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(conv) => {
                    let mut out = conv_forward(conv, &cur)?;
                    for v in out.data.iter_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    if keep {
                        inputs.push(cur);
                    }
                    cur = out;
                }
                Layer::MaxPool(p) => {
                    let out = maxpool_forward(&cur, *p)?;
                    if keep {
                        inputs.push(cur);
                    }
                    cur = out;
                }
                Layer::Flatten => {
                    flat = cur.data.clone();
                    if keep {
                        inputs.push(cur.clone());
                    }
                }
                Layer::Dense(dense) => {
                    probs = dense_softmax_forward(dense, &flat)?;
                }
            }
        }
        inputs.push(cur);
        Ok(ForwardState { inputs, flat, probs })
    }

    /// Class probabilities for one input window.
    pub fn forward(&self, x: &Tensor3<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.run(x, false)?.probs)
    }

    /// Probabilities plus the post-ReLU output of the final convolutional
    /// layer; values identical to a plain forward pass.
    pub fn forward_capture(&self, x: &Tensor3<T>) -> Result<(Vec<T>, Tensor3<T>)> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut last_conv: Option<Tensor3<T>> = None;
        let mut flat = Vec::new();
        let mut probs = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(conv) => {
                    let mut out = conv_forward(conv, &cur)?;
                    for v in out.data.iter_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    cur = out;
                    last_conv = Some(cur.clone());
                }
                Layer::MaxPool(p) => cur = maxpool_forward(&cur, *p)?,
                Layer::Flatten => flat = cur.data.clone(),
                Layer::Dense(dense) => probs = dense_softmax_forward(dense, &flat)?,
            }
        }
        let maps = last_conv.expect("architecture has convolutional layers");
        Ok((probs, maps))
    }

    /// Every layer output with a label, for shape audits and map export.
    pub fn forward_trace(&self, x: &Tensor3<T>) -> Result<Vec<TraceEntry<T>>> {
        self.check_input(x)?;
        let mut entries = vec![TraceEntry {
            label: "input".into(),
            shape: vec![x.shape.0, x.shape.1, x.shape.2],
            data: x.data.clone(),
        }];
        let mut cur = x.clone();
        let mut flat = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(conv) => {
                    let mut out = conv_forward(conv, &cur)?;
                    for v in out.data.iter_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    cur = out;
                    entries.push(TraceEntry {
                        label: "conv".into(),
                        shape: vec![cur.shape.0, cur.shape.1, cur.shape.2],
                        data: cur.data.clone(),
                    });
                }
                Layer::MaxPool(p) => {
                    cur = maxpool_forward(&cur, *p)?;
                    entries.push(TraceEntry {
                        label: "maxpool".into(),
                        shape: vec![cur.shape.0, cur.shape.1, cur.shape.2],
                        data: cur.data.clone(),
                    });
                }
                Layer::Flatten => {
                    flat = cur.data.clone();
                    entries.push(TraceEntry {
                        label: "flatten".into(),
                        shape: vec![flat.len()],
                        data: flat.clone(),
                    });
                }
                Layer::Dense(dense) => {
                    let logits: Vec<T> = (0..dense.out_dim)
                        .map(|o| {
                            dense.bias[o]
                                + dot(&dense.weights[o * dense.in_dim..(o + 1) * dense.in_dim], &flat)
                        })
                        .collect();
                    entries.push(TraceEntry {
                        label: "dense".into(),
                        shape: vec![logits.len()],
                        data: logits.clone(),
                    });
                    let probs = softmax(&logits);
                    entries.push(TraceEntry {
                        label: "softmax".into(),
                        shape: vec![probs.len()],
                        data: probs,
                    });
                }
            }
        }
        Ok(entries)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.weights.len() + c.bias.len(),
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Parameters in canonical order: per layer, weights then bias.
    pub fn export_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.extend_from_slice(&c.weights);
                    out.extend_from_slice(&c.bias);
                }
                Layer::Dense(d) => {
                    out.extend_from_slice(&d.weights);
                    out.extend_from_slice(&d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn import_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(c) => {
                    let (nw, nb) = (c.weights.len(), c.bias.len());
                    c.weights.copy_from_slice(&params[at..at + nw]);
                    at += nw;
                    c.bias.copy_from_slice(&params[at..at + nb]);
                    at += nb;
                }
                Layer::Dense(d) => {
                    let (nw, nb) = (d.weights.len(), d.bias.len());
                    d.weights.copy_from_slice(&params[at..at + nw]);
                    at += nw;
                    d.bias.copy_from_slice(&params[at..at + nb]);
                    at += nb;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Cross-entropy loss for one labelled window (no shape restriction,
    /// so gradient harnesses can drive small instances).
    pub fn loss(&self, x: &Tensor3<T>, label: usize) -> Result<T> {
        Ok(cross_entropy(&self.run(x, false)?.probs, label))
    }

    /// Loss plus the gradient of every parameter, flattened in the same
    /// canonical order as [`Network::export_params`].
    pub fn loss_and_grad(&self, x: &Tensor3<T>, label: usize) -> Result<(T, Vec<T>)> {
        let state = self.run(x, true)?;
        let loss = cross_entropy(&state.probs, label);

        // Softmax + cross-entropy gradient on the logits.
        let mut g_logits = state.probs.clone();
        g_logits[label] = g_logits[label] - T::one();

        let dense = match self.layers.last() {
            Some(Layer::Dense(d)) => d,
            _ => return Err(Error::Shape("network must end with a dense layer".into())),
        };
        let mut dw_dense = vec![T::zero(); dense.weights.len()];
        let mut g_flat = vec![T::zero(); dense.in_dim];
        for o in 0..dense.out_dim {
            let g = g_logits[o];
            axpy(&mut dw_dense[o * dense.in_dim..(o + 1) * dense.in_dim], g, &state.flat);
            axpy(&mut g_flat, g, &dense.weights[o * dense.in_dim..(o + 1) * dense.in_dim]);
        }

        // Walk the conv/pool stack backwards. inputs[i] is the input of
        // layer i; inputs[i + 1] is therefore layer i's output.
        let last_tensor = state.inputs.last().expect("forward state");
        let mut g_cur = Tensor3::from_vec(g_flat, last_tensor.shape)?;
        let mut rev_grads: Vec<Vec<Vec<T>>> = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            match layer {
                Layer::Dense(_) | Layer::Flatten => continue,
                Layer::MaxPool(p) => {
                    g_cur = maxpool_backward(&state.inputs[idx], *p, &g_cur);
                    rev_grads.push(vec![]);
                }
                Layer::Conv(conv) => {
                    let post = &state.inputs[idx + 1];
                    for (g, &pv) in g_cur.data.iter_mut().zip(post.data.iter()) {
                        if pv <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    let (dw, db, dx) = conv_backward(conv, &state.inputs[idx], &g_cur);
                    g_cur = dx;
                    rev_grads.push(vec![dw, db]);
                }
            }
        }

        let mut flat_grad = Vec::with_capacity(self.param_count());
        for lg in rev_grads.into_iter().rev() {
            for g in lg {
                flat_grad.extend_from_slice(&g);
            }
        }
        flat_grad.extend_from_slice(&dw_dense);
        flat_grad.extend_from_slice(&g_logits);
        Ok((loss, flat_grad))
    }
}

/// Layer description persisted in the checkpoint manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerManifest {
    Conv { in_ch: usize, out_ch: usize, kernel_w: usize },
    MaxPool { pool_w: usize },
    Flatten,
    Dense { in_dim: usize, out_dim: usize },
}

/// Checkpoint metadata stored as `model.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub variant: Variant,
    pub n_classes: usize,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub layers: Vec<LayerManifest>,
}

/// Serialized model: manifest plus a flat `f32` weight blob in manifest
/// order (`weights.f32le`).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub weights: Vec<f32>,
}

impl Checkpoint {
    pub fn from_network(
        net: &Network<f32>,
        variant: Variant,
        seed: u64,
        epoch: usize,
        train_loss: f64,
    ) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => LayerManifest::Conv {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    kernel_w: c.kernel_w,
                },
                Layer::MaxPool(p) => LayerManifest::MaxPool { pool_w: *p },
                Layer::Flatten => LayerManifest::Flatten,
                Layer::Dense(d) => LayerManifest::Dense { in_dim: d.in_dim, out_dim: d.out_dim },
            })
            .collect();
        Checkpoint {
            manifest: CheckpointManifest {
                format: "cnn-checkpoint-v1".into(),
                variant,
                n_classes: net.n_classes,
                seed,
                epoch,
                train_loss,
                layers,
            },
            weights: net.export_params(),
        }
    }

    /// Rebuild the runnable network.
    pub fn to_network(&self) -> Result<Network<f32>> {
        let mut layers = Vec::new();
        for lm in &self.manifest.layers {
            layers.push(match lm {
                LayerManifest::Conv { in_ch, out_ch, kernel_w } => Layer::Conv(Conv1d {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel_w: *kernel_w,
                    weights: vec![0.0; in_ch * out_ch * kernel_w],
                    bias: vec![0.0; *out_ch],
                }),
                LayerManifest::MaxPool { pool_w } => Layer::MaxPool(*pool_w),
                LayerManifest::Flatten => Layer::Flatten,
                LayerManifest::Dense { in_dim, out_dim } => Layer::Dense(Dense {
                    in_dim: *in_dim,
                    out_dim: *out_dim,
                    weights: vec![0.0; in_dim * out_dim],
                    bias: vec![0.0; *out_dim],
                }),
            });
        }
        let mut net = Network { layers, n_classes: self.manifest.n_classes };
        net.import_params(&self.weights)?;
        Ok(net)
    }

    /// Write `model.json` and `weights.f32le` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        dataio::write_json(&dir.join("model.json"), &self.manifest)?;
        dataio::write_f32le(&dir.join("weights.f32le"), &self.weights)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = dataio::read_json(&dir.join("model.json"))?;
        let weights = dataio::read_f32le(&dir.join("weights.f32le"))?;
        let expect: usize = manifest
            .layers
            .iter()
            .map(|l| match l {
                LayerManifest::Conv { in_ch, out_ch, kernel_w } => {
                    in_ch * out_ch * kernel_w + out_ch
                }
                LayerManifest::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
                _ => 0,
            })
            .sum();
        if weights.len() != expect {
            return Err(Error::Format(format!(
                "weight blob holds {} values, manifest expects {expect}",
                weights.len()
            )));
        }
        Ok(Checkpoint { manifest, weights })
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Fraction of samples used for training (head of the set).
    pub train_fraction: f64,
    /// Fraction used for validation (after the training block).
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Trained model plus its per-epoch log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochStats>,
}

/// Mean loss and accuracy of `net` over the indexed windows.
pub fn evaluate(net: &Network<f32>, set: &dataio::WindowSet, indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for &i in indices {
        let x = set.window_tensor(i)?;
        let probs = net.forward(&x)?;
        loss += cross_entropy(&probs, set.labels[i] as usize).to_f64_c();
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if pred == set.labels[i] as usize {
            correct += 1;
        }
    }
    Ok((loss / indices.len() as f64, correct as f64 / indices.len() as f64))
}

/// Train the fixed architecture on labelled windows; returns the checkpoint
/// of the epoch with the lowest training loss.
///
/// Per-sample gradients inside a batch may run in parallel; they're reduced
/// in index order, so results are identical at any worker count.
pub fn train_cnn(
    set: &dataio::WindowSet,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<TrainOutcome> {
    use rayon::prelude::*;

    if set.n == 0 {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let n_classes = variant.n_classes();
    if let Some(&bad) = set.labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::Parameter(format!(
            "label {bad} out of range for {n_classes}-class variant"
        )));
    }

    let n_train = (((set.n as f64) * cfg.train_fraction).floor() as usize).clamp(1, set.n);
    let n_val = ((set.n as f64) * cfg.val_fraction).floor() as usize;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..(n_train + n_val).min(set.n)).collect();

    let variant_tag = match variant {
        Variant::Baseline => 0u64,
        Variant::Half => 1,
        Variant::Third => 2,
    };
    let mut init_rng = rng::stream(cfg.seed, "cnn-init", variant_tag);
    let mut net = Network::<f32>::with_table_architecture(n_classes, &mut init_rng);

    let mut params = net.export_params();
    let mut m = vec![0.0f32; params.len()];
    let mut v = vec![0.0f32; params.len()];
    let lr = cfg.learning_rate as f32;
    let b1 = cfg.beta1 as f32;
    let b2 = cfg.beta2 as f32;
    let eps = cfg.adam_eps as f32;
    let mut step = 0usize;

    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        let mut shuffle_rng = rng::stream(cfg.seed, "cnn-shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f32, Vec<f32>)> = batch
                .par_iter()
                .map(|&i| {
                    let x = set.window_tensor(i).expect("window shape");
                    net.loss_and_grad(&x, set.labels[i] as usize).expect("gradient")
                })
                .collect();
            let scale = 1.0f32 / batch.len() as f32;
            let mut grad = vec![0.0f32; params.len()];
            for (loss, g) in &results {
                epoch_loss += *loss as f64;
                axpy(&mut grad, scale, g);
            }

            step += 1;
            let bc1 = 1.0 - b1.powi(step as i32);
            let bc2 = 1.0 - b2.powi(step as i32);
            for i in 0..params.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                params[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
            net.import_params(&params)?;
        }
        let train_loss = epoch_loss / train_idx.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {}", epoch + 1)));
        }
        let (val_loss, val_accuracy) = evaluate(&net, set, &val_idx)?;
        log.push(EpochStats { epoch: epoch + 1, train_loss, val_loss, val_accuracy });
        if train_loss < best_loss {
            best_loss = train_loss;
            best_params = params.clone();
            best_epoch = epoch + 1;
        }
    }

    net.import_params(&best_params)?;
    let checkpoint = Checkpoint::from_network(&net, variant, cfg.seed, best_epoch, best_loss);
    Ok(TrainOutcome { checkpoint, log })
}

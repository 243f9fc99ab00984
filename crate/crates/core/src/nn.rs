//! Dense and convolutional layers with hand-written backward passes.
//!
//! Layers store row-major weights (`out x in`) and operate on row-major
//! batches (`n x in`). Backward passes accumulate into a gradient layer of the
//! same shape, so a zeroed clone of a network doubles as its gradient buffer.

use rand::Rng;

use crate::real::{gemm, matmul_dy_w, matmul_dyt_x, matmul_xwt, Real};

/// A named view of one parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Deterministic, ordered access to every parameter tensor of a module.
pub trait Parameters<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>);
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>);

    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        self.collect_mut(&mut out);
        out
    }

    fn fill_zero(&mut self)
    where
        T: Real,
    {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn sum_squares(&self) -> f64
    where
        T: Real,
    {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v.f64() * v.f64())
            .sum()
    }

    fn all_finite(&self) -> bool
    where
        T: Real,
    {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform_vec<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Vec<T> {
    (0..len).map(|_| T::c(rng.random_range(-bound..=bound))).collect()
}

#[inline]
pub fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

#[inline]
pub fn leaky<T: Real>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::c(20.0) {
        x
    } else if x < T::c(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform `±1/sqrt(in)` initialization for weight and bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: uniform_vec(rng, in_dim * out_dim, bound),
            bias: uniform_vec(rng, out_dim, bound),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut y = vec![T::zero(); n * self.out_dim];
        self.forward_into(x, n, &mut y);
        y
    }

    pub fn forward_into(&self, x: &[T], n: usize, y: &mut [T]) {
        for row in y.chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias);
        }
        matmul_xwt(x, &self.weight, n, self.in_dim, self.out_dim, y, true);
    }

    /// Single-vector forward pass.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| *a * *b).sum::<T>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad`; writes the input gradient
    /// into `dx` when requested.
    pub fn backward(&self, x: &[T], dy: &[T], n: usize, grad: &mut Linear<T>, dx: Option<&mut [T]>) {
        matmul_dyt_x(dy, x, n, self.in_dim, self.out_dim, &mut grad.weight);
        for row in dy.chunks_exact(self.out_dim) {
            for (g, d) in grad.bias.iter_mut().zip(row) {
                *g += *d;
            }
        }
        if let Some(dx) = dx {
            matmul_dy_w(dy, &self.weight, n, self.in_dim, self.out_dim, dx);
        }
    }

    /// Single-vector backward pass; returns the input gradient.
    pub fn backward_vec(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let mut dx = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let d = dy[o];
            grad.bias[o] += d;
            if d == T::zero() {
                continue;
            }
            let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let gw = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                gw[i] += d * x[i];
                dx[i] += d * w[i];
            }
        }
        dx
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        out.push(TensorRef {
            name: join(prefix, "weight"),
            shape: vec![self.out_dim, self.in_dim],
            data: &self.weight,
        });
        out.push(TensorRef {
            name: join(prefix, "bias"),
            shape: vec![self.out_dim],
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Linear layer over the concatenation `[x_sample, code]`, where `code` is
/// shared by every row of the batch. Mathematically identical to a plain
/// layer on the concatenated input; the code contribution is computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct CondLinear<T> {
    pub sample: Linear<T>,
    pub code_dim: usize,
    pub code_weight: Vec<T>,
}

impl<T: Real> CondLinear<T> {
    pub fn new<R: Rng + ?Sized>(sample_dim: usize, code_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((sample_dim + code_dim).max(1) as f64).sqrt();
        let sample = Linear {
            in_dim: sample_dim,
            out_dim,
            weight: uniform_vec(rng, sample_dim * out_dim, bound),
            bias: uniform_vec(rng, out_dim, bound),
        };
        Self {
            sample,
            code_dim,
            code_weight: uniform_vec(rng, code_dim * out_dim, bound),
        }
    }

    pub fn zeros(sample_dim: usize, code_dim: usize, out_dim: usize) -> Self {
        Self {
            sample: Linear::zeros(sample_dim, out_dim),
            code_dim,
            code_weight: vec![T::zero(); code_dim * out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.sample.out_dim
    }

    /// Bias plus code contribution, shared by every row.
    pub fn shared_offset(&self, code: &[T]) -> Vec<T> {
        assert_eq!(code.len(), self.code_dim);
        let out = self.sample.out_dim;
        (0..out)
            .map(|o| {
                let w = &self.code_weight[o * self.code_dim..(o + 1) * self.code_dim];
                self.sample.bias[o] + w.iter().zip(code).map(|(a, b)| *a * *b).sum::<T>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[T], n: usize, code: &[T]) -> Vec<T> {
        let offset = self.shared_offset(code);
        let mut y = vec![T::zero(); n * self.out_dim()];
        for row in y.chunks_exact_mut(self.out_dim()) {
            row.copy_from_slice(&offset);
        }
        matmul_xwt(x, &self.sample.weight, n, self.sample.in_dim, self.out_dim(), &mut y, true);
        y
    }

    /// Accumulates parameter gradients and the shared-code gradient.
    pub fn backward(
        &self,
        x: &[T],
        code: &[T],
        dy: &[T],
        n: usize,
        grad: &mut CondLinear<T>,
        dx: Option<&mut [T]>,
        dcode: &mut [T],
    ) {
        let out = self.out_dim();
        let mut dsum = vec![T::zero(); out];
        for row in dy.chunks_exact(out) {
            for (s, d) in dsum.iter_mut().zip(row) {
                *s += *d;
            }
        }
        matmul_dyt_x(dy, x, n, self.sample.in_dim, out, &mut grad.sample.weight);
        for (g, s) in grad.sample.bias.iter_mut().zip(&dsum) {
            *g += *s;
        }
        for o in 0..out {
            let s = dsum[o];
            let w = &self.code_weight[o * self.code_dim..(o + 1) * self.code_dim];
            let gw = &mut grad.code_weight[o * self.code_dim..(o + 1) * self.code_dim];
            for i in 0..self.code_dim {
                gw[i] += s * code[i];
                dcode[i] += s * w[i];
            }
        }
        if let Some(dx) = dx {
            matmul_dy_w(dy, &self.sample.weight, n, self.sample.in_dim, out, dx);
        }
    }
}

impl<T: Real> Parameters<T> for CondLinear<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        self.sample.collect(prefix, out);
        out.push(TensorRef {
            name: join(prefix, "code_weight"),
            shape: vec![self.sample.out_dim, self.code_dim],
            data: &self.code_weight,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.sample.collect_mut(out);
        out.push(&mut self.code_weight);
    }
}

/// 2-D convolution over a single CHW image, lowered to a GEMM via im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_ch x (in_ch * kernel * kernel)`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Saved im2col matrix of a forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight: uniform_vec(rng, out_ch * fan_in, bound),
            bias: uniform_vec(rng, out_ch, bound),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
            ..self.clone()
        }
    }

    pub fn output_size(&self, in_size: usize) -> usize {
        (in_size + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = oh * ow;
        let mut cols = vec![T::zero(); self.in_ch * k * k * p];
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let p = oh * ow;
        let mut x = vec![T::zero(); self.in_ch * h * w];
        for c in 0..self.in_ch {
            let plane = &mut x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the `out_ch x oh x ow` output (pre-activation) and the cache.
    pub fn forward(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, ConvCache<T>) {
        assert_eq!(x.len(), self.in_ch * h * w);
        let oh = self.output_size(h);
        let ow = self.output_size(w);
        let cols = self.im2col(x, h, w, oh, ow);
        let p = oh * ow;
        let kk = self.in_ch * self.kernel * self.kernel;
        let mut y = vec![T::zero(); self.out_ch * p];
        for (o, row) in y.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias[o]);
        }
        gemm(self.out_ch, kk, p, &self.weight, false, &cols, false, &mut y, true);
        (
            y,
            ConvCache {
                in_h: h,
                in_w: w,
                out_h: oh,
                out_w: ow,
                cols,
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, cache: &ConvCache<T>, dy: &[T], grad: &mut Conv2d<T>) -> Vec<T> {
        let p = cache.out_h * cache.out_w;
        let kk = self.in_ch * self.kernel * self.kernel;
        assert_eq!(dy.len(), self.out_ch * p);
        gemm(self.out_ch, p, kk, dy, false, &cache.cols, true, &mut grad.weight, true);
        for (o, row) in dy.chunks_exact(p).enumerate() {
            grad.bias[o] += row.iter().copied().sum::<T>();
        }
        let mut dcols = vec![T::zero(); kk * p];
        gemm(kk, self.out_ch, p, &self.weight, true, dy, false, &mut dcols, false);
        self.col2im(&dcols, cache.in_h, cache.in_w, cache.out_h, cache.out_w)
    }
}

impl<T: Real> Parameters<T> for Conv2d<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, T>>) {
        out.push(TensorRef {
            name: join(prefix, "weight"),
            shape: vec![self.out_ch, self.in_ch, self.kernel, self.kernel],
            data: &self.weight,
        });
        out.push(TensorRef {
            name: join(prefix, "bias"),
            shape: vec![self.out_ch],
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

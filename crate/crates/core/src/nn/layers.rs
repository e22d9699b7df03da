//! Layer kinds with forward and backward passes.
//!
//! Layout conventions: images are `[batch, channels, time, freq]`, sequences
//! `[batch, time, features]`, vectors `[batch, features]`. Forward passes take
//! `&self` and, in training mode, return the cache their backward pass needs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Param, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// State threaded through a forward pass. Training mode carries the dropout
/// generator.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> ForwardCtx<'a> {
    pub fn infer() -> Self {
        Self {
            mode: Mode::Infer,
            rng: None,
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            mode: Mode::Train,
            rng: Some(rng),
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }
}

fn expect_rank<T>(x: &Tensor<T>, rank: usize, layer: &str) -> Result<(), ModelError> {
    if x.shape.len() != rank {
        return Err(ModelError::Shape(format!(
            "{layer} expects a rank-{rank} input, got shape {:?}",
            x.shape
        )));
    }
    Ok(())
}

/// What a training-mode forward pass hands to the matching backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    /// Inference mode: nothing kept.
    Empty,
    Input(Tensor<T>),
    Output(Tensor<T>),
    Shape(Vec<usize>),
    Argmax { indices: Vec<usize>, shape: Vec<usize> },
    Mask(Vec<T>),
    Norm(BnCache<T>),
    Gru(GruCache<T>),
}

macro_rules! take_cache {
    ($cache:expr, $variant:ident, $layer:literal) => {
        match $cache {
            Cache::$variant(v) => v,
            _ => panic!(concat!($layer, " backward without a training forward pass")),
        }
    };
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
        .collect()
}

// ---------------------------------------------------------------- conv

/// Valid-padding 2-D convolution with stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out, in, k, k]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let limit = (6.0 / fan_in as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::new(
                format!("{prefix}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                uniform(rng, out_channels * fan_in, limit),
            ),
            bias: Param::zeros(format!("{prefix}.bias"), vec![out_channels]),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        (h >= self.kernel && w >= self.kernel).then(|| (h - self.kernel + 1, w - self.kernel + 1))
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let k = self.kernel;
        let (ho, wo) = (h - k + 1, w - k + 1);
        let p = ho * wo;
        for c in 0..self.in_channels {
            for i in 0..k {
                for j in 0..k {
                    let row = (c * k + i) * k + j;
                    for oh in 0..ho {
                        let src = c * h * w + (oh + i) * w + j;
                        let dst = row * p + oh * wo;
                        cols[dst..dst + wo].copy_from_slice(&x[src..src + wo]);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let k = self.kernel;
        let (ho, wo) = (h - k + 1, w - k + 1);
        let p = ho * wo;
        for c in 0..self.in_channels {
            for i in 0..k {
                for j in 0..k {
                    let row = (c * k + i) * k + j;
                    for oh in 0..ho {
                        let src = row * p + oh * wo;
                        let dst = c * h * w + (oh + i) * w + j;
                        for (d, &s) in dx[dst..dst + wo].iter_mut().zip(&cols[src..src + wo]) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        expect_rank(x, 4, "conv2d")?;
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if c != self.in_channels {
            return Err(ModelError::Shape(format!(
                "conv2d expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let (ho, wo) = self
            .output_hw(h, w)
            .ok_or_else(|| ModelError::Shape(format!("conv2d input {h}x{w} smaller than kernel")))?;
        let p = ho * wo;
        let ckk = c * self.kernel * self.kernel;
        let cout = self.out_channels;
        let mut out = Tensor::zeros(vec![n, cout, ho, wo]);
        let mut cols = vec![T::zero(); ckk * p];
        let in_stride = c * h * w;
        for b in 0..n {
            self.im2col(&x.data[b * in_stride..(b + 1) * in_stride], h, w, &mut cols);
            let y = &mut out.data[b * cout * p..(b + 1) * cout * p];
            T::gemm(cout, ckk, p, T::one(), &self.weight.value, ckk, 1, &cols, p, 1, T::zero(), y, p, 1);
            for (o, row) in y.chunks_exact_mut(p).enumerate() {
                let bias = self.bias.value[o];
                row.iter_mut().for_each(|v| *v = *v + bias);
            }
        }
        let cache = if ctx.is_train() { Cache::Input(x.clone()) } else { Cache::Empty };
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let x = take_cache!(cache, Input, "conv2d");
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (ho, wo) = (grad.dim(2), grad.dim(3));
        let p = ho * wo;
        let ckk = c * self.kernel * self.kernel;
        let cout = self.out_channels;
        let mut dx = Tensor::zeros(x.shape.clone());
        let mut cols = vec![T::zero(); ckk * p];
        let mut dcols = vec![T::zero(); ckk * p];
        let in_stride = c * h * w;
        for b in 0..n {
            let dy = &grad.data[b * cout * p..(b + 1) * cout * p];
            self.im2col(&x.data[b * in_stride..(b + 1) * in_stride], h, w, &mut cols);
            T::gemm(cout, p, ckk, T::one(), dy, p, 1, &cols, 1, p, T::one(), &mut self.weight.grad, ckk, 1);
            for (o, row) in dy.chunks_exact(p).enumerate() {
                let s = row.iter().fold(T::zero(), |a, &v| a + v);
                self.bias.grad[o] = self.bias.grad[o] + s;
            }
            T::gemm(ckk, cout, p, T::one(), &self.weight.value, 1, ckk, dy, p, 1, T::zero(), &mut dcols, p, 1);
            self.col2im(&dcols, h, w, &mut dx.data[b * in_stride..(b + 1) * in_stride]);
        }
        dx
    }
}

// ---------------------------------------------------------------- batch norm

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    /// Unbiased batch variance, used for the running estimate.
    batch_var: Vec<T>,
    shape: Vec<usize>,
}

/// Per-channel batch normalization over `[N, C, ...]` inputs.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{prefix}.gamma"), vec![channels], vec![T::one(); channels]),
            beta: Param::zeros(format!("{prefix}.beta"), vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    fn layout(&self, x: &Tensor<T>) -> Result<(usize, usize), ModelError> {
        if x.shape.len() < 2 || x.dim(1) != self.channels {
            return Err(ModelError::Shape(format!(
                "batch norm over {} channels got shape {:?}",
                self.channels, x.shape
            )));
        }
        Ok((x.dim(0), x.shape[2..].iter().product()))
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        let (n, spatial) = self.layout(x)?;
        let c = self.channels;
        let mut out = x.clone();
        let eps = T::from_f64_lossy(BN_EPS);
        if !ctx.is_train() {
            for ch in 0..c {
                let inv = (self.running_var[ch] + eps).sqrt().recip();
                let (g, b, m) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean[ch]);
                for s in 0..n {
                    let off = (s * c + ch) * spatial;
                    for v in &mut out.data[off..off + spatial] {
                        *v = g * (*v - m) * inv + b;
                    }
                }
            }
            return Ok((out, Cache::Empty));
        }
        let count = (n * spatial) as f64;
        let mut x_hat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut batch_mean = vec![T::zero(); c];
        let mut batch_var = vec![T::zero(); c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for s in 0..n {
                let off = (s * c + ch) * spatial;
                sum += x.data[off..off + spatial].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for s in 0..n {
                let off = (s * c + ch) * spatial;
                sq += x.data[off..off + spatial]
                    .iter()
                    .map(|v| (v.to_f64_lossy() - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count;
            let inv = T::from_f64_lossy(1.0 / (var + BN_EPS).sqrt());
            inv_std[ch] = inv;
            let mean_t = T::from_f64_lossy(mean);
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for s in 0..n {
                let off = (s * c + ch) * spatial;
                for i in off..off + spatial {
                    let xh = (x.data[i] - mean_t) * inv;
                    x_hat[i] = xh;
                    out.data[i] = g * xh + b;
                }
            }
            batch_mean[ch] = mean_t;
            batch_var[ch] = T::from_f64_lossy(if count > 1.0 { sq / (count - 1.0) } else { var });
        }
        Ok((
            out,
            Cache::Norm(BnCache {
                x_hat,
                inv_std,
                batch_mean,
                batch_var,
                shape: x.shape.clone(),
            }),
        ))
    }

    /// Folds the batch statistics of a training pass into the running
    /// estimates used at inference.
    pub fn update_running(&mut self, cache: &Cache<T>) {
        let Cache::Norm(stats) = cache else { return };
        let momentum = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - momentum;
        for ch in 0..self.channels {
            self.running_mean[ch] = keep * self.running_mean[ch] + momentum * stats.batch_mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + momentum * stats.batch_var[ch];
        }
    }

    pub fn backward(&mut self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let cache = take_cache!(cache, Norm, "batch norm");
        let n = cache.shape[0];
        let c = self.channels;
        let spatial: usize = cache.shape[2..].iter().product();
        let m = T::from_usize(n * spatial).unwrap();
        let mut dx = Tensor::zeros(cache.shape.clone());
        for ch in 0..c {
            let g = self.gamma.value[ch];
            let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
            for s in 0..n {
                let off = (s * c + ch) * spatial;
                for i in off..off + spatial {
                    sum_dy = sum_dy + grad.data[i];
                    sum_dy_xh = sum_dy_xh + grad.data[i] * cache.x_hat[i];
                }
            }
            self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xh;
            self.beta.grad[ch] = self.beta.grad[ch] + sum_dy;
            let scale = g * cache.inv_std[ch] / m;
            for s in 0..n {
                let off = (s * c + ch) * spatial;
                for i in off..off + spatial {
                    dx.data[i] = scale * (m * grad.data[i] - sum_dy - cache.x_hat[i] * sum_dy_xh);
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------- pooling

/// Non-overlapping max pooling over the last two axes; remainders are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub pool_time: usize,
    pub pool_freq: usize,
}

impl MaxPool2d {
    pub fn new(pool_time: usize, pool_freq: usize) -> Self {
        Self {
            pool_time,
            pool_freq,
        }
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        expect_rank(x, 4, "max pool")?;
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (ho, wo) = (h / self.pool_time, w / self.pool_freq);
        if ho == 0 || wo == 0 {
            return Err(ModelError::Shape(format!(
                "max pool {}x{} on {h}x{w} input",
                self.pool_time, self.pool_freq
            )));
        }
        let mut out = Tensor::zeros(vec![n, c, ho, wo]);
        let mut argmax = vec![0usize; out.len()];
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + i * self.pool_time * w + j * self.pool_freq;
                    for di in 0..self.pool_time {
                        for dj in 0..self.pool_freq {
                            let idx = base + (i * self.pool_time + di) * w + j * self.pool_freq + dj;
                            if x.data[idx] > x.data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.data[o] = x.data[best];
                    argmax[o] = best;
                    o += 1;
                }
            }
        }
        let cache = if ctx.is_train() {
            Cache::Argmax {
                indices: argmax,
                shape: x.shape.clone(),
            }
        } else {
            Cache::Empty
        };
        Ok((out, cache))
    }

    pub fn backward<T: Real>(&self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let Cache::Argmax { indices: argmax, shape } = cache else {
            panic!("max pool backward without a training forward pass");
        };
        let mut dx = Tensor::zeros(shape);
        for (g, &i) in grad.data.iter().zip(&argmax) {
            dx.data[i] = dx.data[i] + *g;
        }
        dx
    }
}

/// Mean over time and frequency: `[N, C, H, W] -> [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool;

impl GlobalAvgPool {
    pub fn forward<T: Real>(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        expect_rank(x, 4, "global average pool")?;
        let (n, c) = (x.dim(0), x.dim(1));
        let spatial = x.dim(2) * x.dim(3);
        let inv = T::from_usize(spatial).unwrap().recip();
        let data = x
            .data
            .chunks_exact(spatial)
            .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let cache = if ctx.is_train() { Cache::Shape(x.shape.clone()) } else { Cache::Empty };
        Ok((Tensor::new(vec![n, c], data), cache))
    }

    pub fn backward<T: Real>(&self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let shape = take_cache!(cache, Shape, "global average pool");
        let spatial = shape[2] * shape[3];
        let inv = T::from_usize(spatial).unwrap().recip();
        let mut dx = Tensor::zeros(shape);
        for (plane, &g) in dx.data.chunks_exact_mut(spatial).zip(&grad.data) {
            plane.iter_mut().for_each(|v| *v = g * inv);
        }
        dx
    }
}

/// Mean over frequency, keeping time as the sequence axis:
/// `[N, C, T, F] -> [N, T, C]`.
#[derive(Debug, Clone, Default)]
pub struct FreqMean;

impl FreqMean {
    pub fn forward<T: Real>(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        expect_rank(x, 4, "frequency mean")?;
        let (n, c, t, f) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let inv = T::from_usize(f).unwrap().recip();
        let mut out = Tensor::zeros(vec![n, t, c]);
        for b in 0..n {
            for ch in 0..c {
                for s in 0..t {
                    let off = ((b * c + ch) * t + s) * f;
                    let m = x.data[off..off + f].iter().fold(T::zero(), |a, &v| a + v) * inv;
                    out.data[(b * t + s) * c + ch] = m;
                }
            }
        }
        let cache = if ctx.is_train() { Cache::Shape(x.shape.clone()) } else { Cache::Empty };
        Ok((out, cache))
    }

    pub fn backward<T: Real>(&self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let shape = take_cache!(cache, Shape, "frequency mean");
        let (n, c, t, f) = (shape[0], shape[1], shape[2], shape[3]);
        let inv = T::from_usize(f).unwrap().recip();
        let mut dx = Tensor::zeros(shape);
        for b in 0..n {
            for ch in 0..c {
                for s in 0..t {
                    let g = grad.data[(b * t + s) * c + ch] * inv;
                    let off = ((b * c + ch) * t + s) * f;
                    dx.data[off..off + f].iter_mut().for_each(|v| *v = g);
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------- elementwise

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Elu,
}

#[derive(Debug, Clone)]
pub struct Activation {
    pub kind: ActivationKind,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind }
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        let y = match self.kind {
            ActivationKind::Relu => x.map(|v| v.max(T::zero())),
            ActivationKind::Elu => x.map(|v| if v > T::zero() { v } else { v.exp_m1() }),
        };
        let cache = if ctx.is_train() { Cache::Output(y.clone()) } else { Cache::Empty };
        Ok((y, cache))
    }

    pub fn backward<T: Real>(&self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let y = take_cache!(cache, Output, "activation");
        let data = grad
            .data
            .iter()
            .zip(&y.data)
            .map(|(&g, &y)| match self.kind {
                ActivationKind::Relu => {
                    if y > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }
                ActivationKind::Elu => {
                    if y > T::zero() {
                        g
                    } else {
                        g * (y + T::one())
                    }
                }
            })
            .collect();
        Tensor::new(grad.shape.clone(), data)
    }
}

/// Inverted dropout; identity in inference mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate));
        Self { rate }
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        if !ctx.is_train() {
            return Ok((x.clone(), Cache::Empty));
        }
        if self.rate == 0.0 {
            return Ok((x.clone(), Cache::Mask(vec![T::one(); x.len()])));
        }
        let rng = ctx.rng.as_deref_mut().expect("training mode without a generator");
        let keep = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok((Tensor::new(x.shape.clone(), data), Cache::Mask(mask)))
    }

    pub fn backward<T: Real>(&self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let mask = take_cache!(cache, Mask, "dropout");
        let data = grad.data.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
        Tensor::new(grad.shape.clone(), data)
    }
}

// ---------------------------------------------------------------- dense

/// Affine map `y = x W^T + b` on `[N, in]` inputs.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out, in]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Dense<T> {
    /// `gain` is 6 for layers followed by a rectifier, 3 for linear outputs.
    pub fn new(prefix: &str, inputs: usize, outputs: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let limit = (gain / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: Param::new(
                format!("{prefix}.weight"),
                vec![outputs, inputs],
                uniform(rng, inputs * outputs, limit),
            ),
            bias: Param::zeros(format!("{prefix}.bias"), vec![outputs]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        expect_rank(x, 2, "dense")?;
        if x.dim(1) != self.inputs {
            return Err(ModelError::Shape(format!(
                "dense expects {} inputs, got {}",
                self.inputs,
                x.dim(1)
            )));
        }
        let n = x.dim(0);
        let (i, o) = (self.inputs, self.outputs);
        let mut y = Tensor::zeros(vec![n, o]);
        for row in y.data.chunks_exact_mut(o) {
            row.copy_from_slice(&self.bias.value);
        }
        T::gemm(n, i, o, T::one(), &x.data, i, 1, &self.weight.value, 1, i, T::one(), &mut y.data, o, 1);
        let cache = if ctx.is_train() { Cache::Input(x.clone()) } else { Cache::Empty };
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let x = take_cache!(cache, Input, "dense");
        let n = x.dim(0);
        let (i, o) = (self.inputs, self.outputs);
        T::gemm(o, n, i, T::one(), &grad.data, 1, o, &x.data, i, 1, T::one(), &mut self.weight.grad, i, 1);
        for row in grad.data.chunks_exact(o) {
            for (b, &g) in self.bias.grad.iter_mut().zip(row) {
                *b = *b + g;
            }
        }
        let mut dx = Tensor::zeros(vec![n, i]);
        T::gemm(n, o, i, T::one(), &grad.data, o, 1, &self.weight.value, i, 1, T::zero(), &mut dx.data, i, 1);
        dx
    }
}

// ---------------------------------------------------------------- GRU

#[derive(Debug, Clone)]
struct GruStep<T> {
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    rh: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct GruCache<T> {
    x: Tensor<T>,
    steps: Vec<GruStep<T>>,
}

/// Gated recurrent unit over `[N, T, I]` sequences with zero initial state
/// and a single bias per gate:
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * n + z * h
/// ```
///
/// Returns every hidden state (`[N, T, H]`) or only the last (`[N, H]`).
#[derive(Debug, Clone)]
pub struct Gru<T> {
    pub inputs: usize,
    pub hidden: usize,
    pub return_sequences: bool,
    /// `[3H, I]`, gate order z, r, n.
    pub w: Param<T>,
    /// `[3H, H]`
    pub u: Param<T>,
    /// `[3H]`
    pub b: Param<T>,
}

impl<T: Real> Gru<T> {
    pub fn new(prefix: &str, inputs: usize, hidden: usize, return_sequences: bool, rng: &mut ChaCha8Rng) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let g = 3 * hidden;
        Self {
            inputs,
            hidden,
            return_sequences,
            w: Param::new(format!("{prefix}.w"), vec![g, inputs], uniform(rng, g * inputs, limit)),
            u: Param::new(format!("{prefix}.u"), vec![g, hidden], uniform(rng, g * hidden, limit)),
            b: Param::zeros(format!("{prefix}.b"), vec![g]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        expect_rank(x, 3, "gru")?;
        let (n, t, i) = (x.dim(0), x.dim(1), x.dim(2));
        if i != self.inputs {
            return Err(ModelError::Shape(format!(
                "gru expects {} features, got {i}",
                self.inputs
            )));
        }
        let h = self.hidden;
        let g = 3 * h;
        // Input projections for every step at once.
        let mut xw = vec![T::zero(); n * t * g];
        for row in xw.chunks_exact_mut(g) {
            row.copy_from_slice(&self.b.value);
        }
        T::gemm(n * t, i, g, T::one(), &x.data, i, 1, &self.w.value, 1, i, T::one(), &mut xw, g, 1);

        let u = &self.u.value;
        let u_n = &u[2 * h * h..];
        let train = ctx.is_train();
        let mut steps = Vec::with_capacity(if train { t } else { 0 });
        let mut out = Tensor::zeros(if self.return_sequences { vec![n, t, h] } else { vec![n, h] });
        let mut h_prev = vec![T::zero(); n * h];
        let mut hu = vec![T::zero(); n * 2 * h];
        let mut hn = vec![T::zero(); n * h];
        for s in 0..t {
            T::gemm(n, h, 2 * h, T::one(), &h_prev, h, 1, u, 1, h, T::zero(), &mut hu, 2 * h, 1);
            let mut z = vec![T::zero(); n * h];
            let mut r = vec![T::zero(); n * h];
            let mut rh = vec![T::zero(); n * h];
            for b in 0..n {
                let base = (b * t + s) * g;
                for k in 0..h {
                    let zi = sigmoid(xw[base + k] + hu[b * 2 * h + k]);
                    let ri = sigmoid(xw[base + h + k] + hu[b * 2 * h + h + k]);
                    z[b * h + k] = zi;
                    r[b * h + k] = ri;
                    rh[b * h + k] = ri * h_prev[b * h + k];
                }
            }
            T::gemm(n, h, h, T::one(), &rh, h, 1, u_n, 1, h, T::zero(), &mut hn, h, 1);
            let mut cand = vec![T::zero(); n * h];
            let mut h_new = vec![T::zero(); n * h];
            for b in 0..n {
                let base = (b * t + s) * g + 2 * h;
                for k in 0..h {
                    let idx = b * h + k;
                    let nv = (xw[base + k] + hn[idx]).tanh();
                    cand[idx] = nv;
                    h_new[idx] = (T::one() - z[idx]) * nv + z[idx] * h_prev[idx];
                }
            }
            if self.return_sequences {
                for b in 0..n {
                    out.data[(b * t + s) * h..(b * t + s + 1) * h].copy_from_slice(&h_new[b * h..(b + 1) * h]);
                }
            }
            let prev = std::mem::replace(&mut h_prev, h_new);
            if train {
                steps.push(GruStep {
                    h_prev: prev,
                    z,
                    r,
                    n: cand,
                    rh,
                });
            }
        }
        if !self.return_sequences {
            out.data.copy_from_slice(&h_prev);
        }
        let cache = if train {
            Cache::Gru(GruCache { x: x.clone(), steps })
        } else {
            Cache::Empty
        };
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let cache = take_cache!(cache, Gru, "gru");
        let x = &cache.x;
        let (n, t, i) = (x.dim(0), x.dim(1), x.dim(2));
        let h = self.hidden;
        let g = 3 * h;
        let one = T::one();
        let u = &self.u.value;
        let u_n = &u[2 * h * h..];
        let (du_zr, du_n) = self.u.grad.split_at_mut(2 * h * h);

        let mut dxw = vec![T::zero(); n * t * g];
        let mut dh_next = vec![T::zero(); n * h];
        let mut da_n = vec![T::zero(); n * h];
        let mut g_zr = vec![T::zero(); n * 2 * h];
        let mut drh = vec![T::zero(); n * h];
        let mut dh_prev = vec![T::zero(); n * h];
        for s in (0..t).rev() {
            let st = &cache.steps[s];
            for b in 0..n {
                for k in 0..h {
                    let idx = b * h + k;
                    let upstream = if self.return_sequences {
                        grad.data[(b * t + s) * h + k]
                    } else if s == t - 1 {
                        grad.data[idx]
                    } else {
                        T::zero()
                    };
                    let dh = upstream + dh_next[idx];
                    let (z, nv, hp) = (st.z[idx], st.n[idx], st.h_prev[idx]);
                    let dn = dh * (one - z);
                    let dz = dh * (hp - nv);
                    dh_prev[idx] = dh * z;
                    let dan = dn * (one - nv * nv);
                    da_n[idx] = dan;
                    dxw[(b * t + s) * g + 2 * h + k] = dan;
                    g_zr[b * 2 * h + k] = dz * z * (one - z);
                }
            }
            T::gemm(h, n, h, one, &da_n, 1, h, &st.rh, h, 1, one, du_n, h, 1);
            T::gemm(n, h, h, one, &da_n, h, 1, u_n, h, 1, T::zero(), &mut drh, h, 1);
            for b in 0..n {
                for k in 0..h {
                    let idx = b * h + k;
                    let r = st.r[idx];
                    let dr = drh[idx] * st.h_prev[idx];
                    dh_prev[idx] = dh_prev[idx] + drh[idx] * r;
                    let dar = dr * r * (one - r);
                    g_zr[b * 2 * h + h + k] = dar;
                    let base = (b * t + s) * g;
                    dxw[base + k] = g_zr[b * 2 * h + k];
                    dxw[base + h + k] = dar;
                }
            }
            T::gemm(2 * h, n, h, one, &g_zr, 1, 2 * h, &st.h_prev, h, 1, one, du_zr, h, 1);
            T::gemm(n, 2 * h, h, one, &g_zr, 2 * h, 1, &u[..2 * h * h], h, 1, one, &mut dh_prev, h, 1);
            std::mem::swap(&mut dh_next, &mut dh_prev);
        }
        T::gemm(g, n * t, i, one, &dxw, 1, g, &x.data, i, 1, one, &mut self.w.grad, i, 1);
        for row in dxw.chunks_exact(g) {
            for (b, &d) in self.b.grad.iter_mut().zip(row) {
                *b = *b + d;
            }
        }
        let mut dx = Tensor::zeros(x.shape.clone());
        T::gemm(n * t, g, i, one, &dxw, g, 1, &self.w.value, i, 1, T::zero(), &mut dx.data, i, 1);
        dx
    }
}

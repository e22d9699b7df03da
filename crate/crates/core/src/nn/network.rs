use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    Activation, BatchNorm, Cache, Conv2d, Dense, Dropout, ForwardCtx, FreqMean, GlobalAvgPool, Gru, MaxPool2d,
};
use super::spec::{pool_schedule, LayerSpec, ModelSpec};
use super::{Buffer, ModelError, Param, Real, Tensor};

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Activation(Activation),
    MaxPool(MaxPool2d),
    Dropout(Dropout),
    GlobalAvgPool(GlobalAvgPool),
    FreqMean(FreqMean),
    Gru(Gru<T>),
    Dense(Dense<T>),
}

impl<T: Real> Layer<T> {
    pub fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache<T>), ModelError> {
        match self {
            Layer::Conv(l) => l.forward(x, ctx),
            Layer::BatchNorm(l) => l.forward(x, ctx),
            Layer::Activation(l) => l.forward(x, ctx),
            Layer::MaxPool(l) => l.forward(x, ctx),
            Layer::Dropout(l) => l.forward(x, ctx),
            Layer::GlobalAvgPool(l) => l.forward(x, ctx),
            Layer::FreqMean(l) => l.forward(x, ctx),
            Layer::Gru(l) => l.forward(x, ctx),
            Layer::Dense(l) => l.forward(x, ctx),
        }
    }

    pub fn backward(&mut self, cache: Cache<T>, grad: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.backward(cache, grad),
            Layer::BatchNorm(l) => l.backward(cache, grad),
            Layer::Activation(l) => l.backward(cache, grad),
            Layer::MaxPool(l) => l.backward(cache, grad),
            Layer::Dropout(l) => l.backward(cache, grad),
            Layer::GlobalAvgPool(l) => l.backward(cache, grad),
            Layer::FreqMean(l) => l.backward(cache, grad),
            Layer::Gru(l) => l.backward(cache, grad),
            Layer::Dense(l) => l.backward(cache, grad),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Gru(l) => vec![&l.w, &l.u, &l.b],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Gru(l) => vec![&mut l.w, &mut l.u, &mut l.b],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Activation(_) => "activation",
            Layer::MaxPool(_) => "max_pool",
            Layer::Dropout(_) => "dropout",
            Layer::GlobalAvgPool(_) => "global_avg_pool",
            Layer::FreqMean(_) => "freq_mean",
            Layer::Gru(_) => "gru",
            Layer::Dense(_) => "dense",
        }
    }
}

/// Per-layer caches of one training-mode forward pass.
pub struct Tape<T>(Vec<Cache<T>>);

/// A built layer stack for `[N, 1, frames, coeffs]` inputs producing `[N, 4]`.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: ModelSpec,
    pub frames: usize,
    pub coeffs: usize,
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Builds and initializes the network deterministically from `seed`.
    pub fn build(spec: &ModelSpec, frames: usize, coeffs: usize, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let pools = pool_schedule(&spec.conv_kernels(), frames, coeffs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let (mut channels, mut t, mut f) = (1usize, frames, coeffs);
        let (mut conv_i, mut gru_i, mut dense_i) = (0, 0, 0);
        let n_gru = spec.layers.iter().filter(|l| matches!(l, LayerSpec::Gru { .. })).count();
        let n_dense = spec.layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count();
        // Width of the vector (or per-step vector) entering the next layer.
        let mut width = 0usize;
        let mut head_started = false;
        for layer in &spec.layers {
            match *layer {
                LayerSpec::Conv { kernel, filters } => {
                    layers.push(Layer::Conv(Conv2d::new(
                        &format!("conv{conv_i}"),
                        channels,
                        filters,
                        kernel,
                        &mut rng,
                    )));
                    if spec.batch_norm {
                        layers.push(Layer::BatchNorm(BatchNorm::new(&format!("bn{conv_i}"), filters)));
                    }
                    layers.push(Layer::Activation(Activation::new(spec.activation)));
                    let (pt, pf) = pools[conv_i];
                    layers.push(Layer::MaxPool(MaxPool2d::new(pt, pf)));
                    if spec.dropout > 0.0 {
                        layers.push(Layer::Dropout(Dropout::new(spec.dropout)));
                    }
                    channels = filters;
                    t = (t - kernel + 1) / pt;
                    f = (f - kernel + 1) / pf;
                    conv_i += 1;
                }
                LayerSpec::Gru { units } => {
                    if gru_i == 0 {
                        layers.push(Layer::FreqMean(FreqMean));
                        width = channels;
                    }
                    let last = gru_i + 1 == n_gru;
                    layers.push(Layer::Gru(Gru::new(&format!("gru{gru_i}"), width, units, !last, &mut rng)));
                    width = units;
                    gru_i += 1;
                }
                LayerSpec::Dense { units } => {
                    if !head_started {
                        head_started = true;
                        if n_gru == 0 {
                            layers.push(Layer::GlobalAvgPool(GlobalAvgPool));
                            width = channels;
                        }
                    }
                    let last = dense_i + 1 == n_dense;
                    let gain = if last { 3.0 } else { 6.0 };
                    layers.push(Layer::Dense(Dense::new(&format!("dense{dense_i}"), width, units, gain, &mut rng)));
                    if !last {
                        layers.push(Layer::Activation(Activation::new(spec.activation)));
                    }
                    width = units;
                    dense_i += 1;
                }
            }
        }
        debug_assert!(t >= 1 && f >= 1);
        Ok(Self {
            spec: spec.clone(),
            frames,
            coeffs,
            layers,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        let expected = [x.shape.first().copied().unwrap_or(0), 1, self.frames, self.coeffs];
        if x.shape.len() != 4 || x.shape[1..] != expected[1..] || x.shape[0] == 0 {
            return Err(ModelError::Shape(format!(
                "network expects input [N, 1, {}, {}], got {:?}",
                self.frames, self.coeffs, x.shape
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass; batch norm uses running statistics.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(x)?;
        let mut ctx = ForwardCtx::infer();
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, &mut ctx)?.0;
        }
        Ok(h)
    }

    /// Training-mode forward pass. Updates batch-norm running statistics and
    /// returns the tape needed by [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>, rng: &mut ChaCha8Rng) -> Result<(Tensor<T>, Tape<T>), ModelError> {
        self.check_input(x)?;
        let mut ctx = ForwardCtx::train(rng);
        let mut h = x.clone();
        let mut tape = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(&h, &mut ctx)?;
            if !out.is_finite() {
                return Err(ModelError::NonFinite(format!("{} output", layer.kind())));
            }
            if let Layer::BatchNorm(bn) = layer {
                bn.update_running(&cache);
            }
            tape.push(cache);
            h = out;
        }
        Ok((h, Tape(tape)))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, tape: Tape<T>, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter_mut().zip(tape.0).rev() {
            g = layer.backward(cache, &g);
        }
        g
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Number of trainable scalars (batch-norm scale and shift included,
    /// running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Batch-norm running statistics, named after their layer.
    pub fn buffers(&self) -> Vec<Buffer<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::BatchNorm(bn) = layer {
                let prefix = bn.gamma.name.trim_end_matches(".gamma");
                out.push(Buffer {
                    name: format!("{prefix}.running_mean"),
                    value: bn.running_mean.clone(),
                });
                out.push(Buffer {
                    name: format!("{prefix}.running_var"),
                    value: bn.running_var.clone(),
                });
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                let prefix = bn.gamma.name.trim_end_matches(".gamma").to_string();
                out.push((format!("{prefix}.running_mean"), &mut bn.running_mean));
                out.push((format!("{prefix}.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    /// Copies all parameter values and running statistics.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params()
            .iter()
            .map(|p| p.value.clone())
            .chain(self.buffers().into_iter().map(|b| b.value))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) {
        let mut it = snapshot.iter();
        for p in self.params_mut() {
            p.value.clone_from(it.next().expect("snapshot too short"));
        }
        for (_, b) in self.buffers_mut() {
            b.clone_from(it.next().expect("snapshot too short"));
        }
        assert!(it.next().is_none(), "snapshot too long");
    }
}

/// Mean squared error over all `N x 4` outputs and its gradient.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), ModelError> {
    if pred.shape != target.shape {
        return Err(ModelError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape, target.shape
        )));
    }
    let n = pred.len() as f64;
    let loss = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p.to_f64_lossy() - t.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / n;
    if !loss.is_finite() {
        return Err(ModelError::NonFinite("loss".into()));
    }
    let scale = T::from_f64_lossy(2.0 / n);
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| scale * (p - t))
        .collect();
    Ok((loss, Tensor::new(pred.shape.clone(), grad)))
}

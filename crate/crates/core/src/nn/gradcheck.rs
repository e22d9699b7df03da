//! Central finite-difference checks of the analytic backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::ForwardCtx;
use super::network::{mse_loss, Layer, Network};
use super::{ModelError, Tensor};

pub const FD_STEP: f64 = 1e-6;

/// Denominator floor: tensors whose true gradient is zero (a bias feeding
/// batch norm) would otherwise compare two rounding noises. Central
/// differences carry roughly `eps * loss / FD_STEP` (about 1e-10) of noise.
pub const NORM_FLOOR: f64 = 1e-5;

/// Comparison for one tensor:
/// `||analytic - numeric|| / max(||analytic|| + ||numeric||, NORM_FLOOR)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub tensor: String,
    pub rel_error: f64,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / (norm(analytic) + norm(numeric)).max(NORM_FLOOR)
}

/// Seeded standard-normal tensor.
pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
}

fn central<F: FnMut(f64) -> f64>(orig: f64, mut f: F) -> f64 {
    (f(orig + FD_STEP) - f(orig - FD_STEP)) / (2.0 * FD_STEP)
}

const MASK_SEED: u64 = 0x5eed;

fn layer_objective(layer: &Layer<f64>, x: &Tensor<f64>, w: &Tensor<f64>) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(MASK_SEED);
    let (y, _) = layer.forward(x, &mut ForwardCtx::train(&mut rng))?;
    Ok(y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum())
}

/// Checks input and parameter gradients of one layer in training mode under
/// the objective `sum(w * layer(x))` with a seeded random `w`. Dropout masks
/// are redrawn from the same seed for every evaluation.
pub fn check_layer(layer: &mut Layer<f64>, x: &Tensor<f64>, seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(MASK_SEED);
    let (y, cache) = layer.forward(x, &mut ForwardCtx::train(&mut rng))?;
    let w = random_tensor(y.shape.clone(), seed);
    layer.params_mut().into_iter().for_each(|p| p.zero_grad());
    let dx = layer.backward(cache, &w);

    let mut out = Vec::new();
    let mut xp = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data[i];
        let g = central(orig, |v| {
            xp.data[i] = v;
            layer_objective(layer, &xp, &w).expect("shapes already checked")
        });
        xp.data[i] = orig;
        numeric.push(g);
    }
    out.push(GradCheck {
        tensor: "input".into(),
        rel_error: relative_error(&dx.data, &numeric),
    });

    let n_params = layer.params().len();
    for pi in 0..n_params {
        let (name, analytic) = {
            let p = &layer.params()[pi];
            (p.name.clone(), p.grad.clone())
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let orig = layer.params()[pi].value[k];
            let g = central(orig, |v| {
                layer.params_mut()[pi].value[k] = v;
                layer_objective(layer, x, &w).expect("shapes already checked")
            });
            layer.params_mut()[pi].value[k] = orig;
            numeric.push(g);
        }
        out.push(GradCheck {
            tensor: name,
            rel_error: relative_error(&analytic, &numeric),
        });
    }
    Ok(out)
}

fn network_loss(net: &mut Network<f64>, x: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(MASK_SEED);
    let (pred, _) = net.forward_train(x, &mut rng)?;
    Ok(mse_loss(&pred, target)?.0)
}

/// Checks every parameter gradient of the full network under the MSE loss
/// in training mode.
pub fn check_network(net: &mut Network<f64>, x: &Tensor<f64>, target: &Tensor<f64>) -> Result<Vec<GradCheck>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(MASK_SEED);
    net.zero_grad();
    let (pred, tape) = net.forward_train(x, &mut rng)?;
    let (_, grad) = mse_loss(&pred, target)?;
    net.backward(tape, &grad);

    let n_params = net.params().len();
    let mut out = Vec::with_capacity(n_params);
    for pi in 0..n_params {
        let (name, analytic) = {
            let p = &net.params()[pi];
            (p.name.clone(), p.grad.clone())
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..analytic.len() {
            let orig = net.params()[pi].value[k];
            let mut eval = |v: f64| -> Result<f64, ModelError> {
                net.params_mut()[pi].value[k] = v;
                network_loss(net, x, target)
            };
            let g = (eval(orig + FD_STEP)? - eval(orig - FD_STEP)?) / (2.0 * FD_STEP);
            net.params_mut()[pi].value[k] = orig;
            numeric.push(g);
        }
        out.push(GradCheck {
            tensor: name,
            rel_error: relative_error(&analytic, &numeric),
        });
    }
    Ok(out)
}

use serde::{Deserialize, Serialize};

use super::{Param, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[&Param<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update using each parameter's accumulated gradient.
pub fn adam_step<T: Real>(params: &mut [&mut Param<T>], state: &mut AdamState<T>, cfg: &AdamConfig) {
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let step_size = T::from_f64_lossy(cfg.learning_rate / (1.0 - b1.powi(t)));
    let v_corr = T::from_f64_lossy(1.0 / (1.0 - b2.powi(t)));
    let (b1, b2, eps) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2), T::from_f64_lossy(cfg.epsilon));
    let one = T::one();
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.len(), m.len(), "optimizer state shape mismatch for {}", p.name);
        for i in 0..p.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            p.value[i] = p.value[i] - step_size * m[i] / ((v[i] * v_corr).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-4, 0.3, 250.0, -7.0] {
            let mut p = Param::new("p", vec![1], vec![0.5f64]);
            p.grad[0] = g;
            let mut state = AdamState::new(&[&p]);
            adam_step(&mut [&mut p], &mut state, &AdamConfig::default());
            // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
            let expected = 0.001 * g / (g.abs() + 1e-8);
            assert!((0.5 - p.value[0] - expected).abs() < 1e-15);
            assert_eq!(state.step, 1);
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Param::new("p", vec![3], vec![1.0f32, -2.0, 3.0]);
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &mut state, &AdamConfig::default());
        assert_eq!(p.value, vec![1.0, -2.0, 3.0]);
    }
}

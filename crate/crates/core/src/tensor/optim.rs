//! AdamW with decoupled weight decay, and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::scalar::{s, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment buffers shaped like the parameters plus the step
/// counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct AdamWState<S> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamWState<S> {
    pub fn new(params: &[&Tensor<S>]) -> AdamWState<S> {
        AdamWState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One decoupled-weight-decay update:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn adamw_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[&Tensor<S>],
    state: &mut AdamWState<S>,
    config: &AdamWConfig,
) {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.m.len(), "state sized for different params");
    state.step += 1;
    let t = state.step as f64;
    let b1 = s::<S>(config.beta1);
    let b2 = s::<S>(config.beta2);
    let one = S::one();
    let bias1 = s::<S>(1.0 - config.beta1.powf(t));
    let bias2 = s::<S>(1.0 - config.beta2.powf(t));
    let lr = s::<S>(config.lr);
    let eps = s::<S>(config.eps);
    let wd = s::<S>(config.weight_decay);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.shape(), g.shape(), "param {i}: grad shape mismatch");
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((pj, &gj), (mj, vj)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mj = b1 * *mj + (one - b1) * gj;
            *vj = b2 * *vj + (one - b2) * gj * gj;
            let m_hat = *mj / bias1;
            let v_hat = *vj / bias2;
            *pj -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *pj);
        }
    }
}

/// Halves the learning rate every `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub initial_lr: f64,
    pub gamma: f64,
    pub period: usize,
}

impl StepLr {
    pub fn new(initial_lr: f64) -> StepLr {
        StepLr {
            initial_lr,
            gamma: 0.5,
            period: 10,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * self.gamma.powi((epoch / self.period.max(1)) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_with_unit_gradient_moves_by_lr() {
        let mut p = Tensor::<f64>::zeros(&[1]);
        let g = Tensor::<f64>::full(&[1], 1.0);
        let mut state = AdamWState::new(&[&p]);
        let config = AdamWConfig {
            lr: 0.001,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut [&mut p], &[&g], &mut state, &config);
        // m_hat / sqrt(v_hat) = 1 after bias correction.
        assert!((p.data()[0] + 0.001).abs() < 1e-6, "{}", p.data()[0]);
    }

    #[test]
    fn zero_gradient_with_decay_is_pure_decay() {
        let mut p = Tensor::<f64>::full(&[2], 2.0);
        let g = Tensor::<f64>::zeros(&[2]);
        let mut state = AdamWState::new(&[&p]);
        let config = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        adamw_step(&mut [&mut p], &[&g], &mut state, &config);
        for &v in p.data() {
            assert!((v - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn updates_are_replayable() {
        let run = || {
            let mut p = Tensor::<f64>::full(&[3], 1.0);
            let g = Tensor::<f64>::from_vec(&[3], vec![0.5, -0.25, 1.0]).unwrap();
            let mut state = AdamWState::new(&[&p]);
            let config = AdamWConfig::default();
            adamw_step(&mut [&mut p], &[&g], &mut state, &config);
            adamw_step(&mut [&mut p], &[&g], &mut state, &config);
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_schedule_halves_every_period() {
        let sched = StepLr::new(0.8);
        assert_eq!(sched.lr_at(0), 0.8);
        assert_eq!(sched.lr_at(9), 0.8);
        assert_eq!(sched.lr_at(10), 0.4);
        assert_eq!(sched.lr_at(25), 0.2);
    }
}

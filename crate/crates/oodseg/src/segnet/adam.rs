//! Bias-corrected ADAM updates.

use serde::{Deserialize, Serialize};

use super::net::{Gradients, NetParams};
use super::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 1,
            epochs: 30,
            seed: 0,
        }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
    step: u64,
}

impl AdamState {
    pub fn new<S: Scalar>(params: &NetParams<S>) -> AdamState {
        let zeros = |p: &NetParams<S>| {
            p.convs
                .iter()
                .map(|c| (vec![0.0; c.kernel.len()], vec![0.0; c.bias.len()]))
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One ADAM update; moments are held in f64 regardless of the parameter
/// precision.
pub fn adam_step<S: Scalar>(
    params: &mut NetParams<S>,
    grads: &Gradients<S>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (ci, conv) in params.convs.iter_mut().enumerate() {
        let update = |p: &mut [S], g: &[S], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                let gi = g[i].to_f64();
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let delta = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                p[i] = S::from_f64(p[i].to_f64() - delta);
            }
        };
        update(
            &mut conv.kernel,
            &grads.convs[ci].kernel,
            &mut state.m[ci].0,
            &mut state.v[ci].0,
        );
        update(
            &mut conv.bias,
            &grads.convs[ci].bias,
            &mut state.m[ci].1,
            &mut state.v[ci].1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::net::{build_net, HeadGrads};
    use crate::segnet::NetConfig;
    use crate::tensor::rng::Rng;
    use crate::tensor::Tensor;

    fn small_net() -> NetParams<f64> {
        let cfg = NetConfig {
            channels: vec![2, 4],
            levels: 2,
            ..NetConfig::default()
        };
        build_net(&cfg, &mut Rng::new(4)).unwrap()
    }

    fn const_grads(params: &NetParams<f64>, value: f64) -> Gradients<f64> {
        Gradients {
            convs: params
                .convs
                .iter()
                .map(|c| HeadGrads {
                    kernel: vec![value; c.kernel.len()],
                    bias: vec![value; c.bias.len()],
                })
                .collect(),
            input: Tensor::zeros(&[2, 2, 2], crate::tensor::DType::F64),
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut params = small_net();
        let before: Vec<Vec<f64>> = params.convs.iter().map(|c| c.kernel.clone()).collect();
        let grads = const_grads(&params, 0.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &TrainConfig::default());
        for (c, b) in params.convs.iter().zip(before) {
            assert_eq!(c.kernel, b);
        }
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        let mut params = small_net();
        let before = params.convs[0].kernel.clone();
        let grads = const_grads(&params, 0.37);
        let mut state = AdamState::new(&params);
        let cfg = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg);
        for (after, b) in params.convs[0].kernel.iter().zip(before) {
            let delta = (after - b).abs();
            assert!(
                (delta - cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate,
                "delta {delta}"
            );
        }
    }

    #[test]
    fn identical_calls_from_identical_state_agree() {
        let mut pa = small_net();
        let mut pb = small_net();
        let grads = const_grads(&pa, -0.11);
        let mut sa = AdamState::new(&pa);
        let mut sb = AdamState::new(&pb);
        let cfg = TrainConfig::default();
        for _ in 0..3 {
            adam_step(&mut pa, &grads, &mut sa, &cfg);
            adam_step(&mut pb, &grads, &mut sb, &cfg);
        }
        for (a, b) in pa.convs.iter().zip(&pb.convs) {
            assert_eq!(a.kernel, b.kernel);
            assert_eq!(a.bias, b.bias);
        }
    }
}

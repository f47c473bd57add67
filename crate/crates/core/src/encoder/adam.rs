use thiserror::Error;

use super::config::TrainConfig;
use super::params::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("gradient shapes do not match parameter shapes")]
pub struct ShapeMismatch;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<(), ShapeMismatch> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(ShapeMismatch);
    }
    state.t += 1;
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let one = T::one();
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.epsilon);
    let c1 = one - T::lit(config.beta1.powi(state.t as i32));
    let c2 = one - T::lit(config.beta2.powi(state.t as i32));

    let g_tensors: Vec<_> = grads.tensors().into_iter().map(|(_, m)| m.data.clone()).collect();
    let mut ms = Vec::new();
    state.m.visit_mut(|i, m| {
        for (mv, &g) in m.data.iter_mut().zip(&g_tensors[i]) {
            *mv = b1 * *mv + (one - b1) * g;
        }
        ms.push(m.data.clone());
    });
    let mut vs = Vec::new();
    state.v.visit_mut(|i, v| {
        for (vv, &g) in v.data.iter_mut().zip(&g_tensors[i]) {
            *vv = b2 * *vv + (one - b2) * g * g;
        }
        vs.push(v.data.clone());
    });
    params.visit_mut(|i, p| {
        for ((pv, &m), &v) in p.data.iter_mut().zip(&ms[i]).zip(&vs[i]) {
            let m_hat = m / c1;
            let v_hat = v / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::ModelConfig;

    fn params() -> ModelParams<f64> {
        ModelParams::init(ModelConfig {
            vocab_size: 5,
            embed_dim: 4,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 4,
            max_seq_len: 8,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.cls_b.data[0] = 1.0;
        g.cls_b.data[1] = -3.0;
        let cfg = TrainConfig { learning_rate: 1e-3, ..Default::default() };
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * sign(g) / (1 + eps/|g|)
        let step0 = before.cls_b.data[0] - p.cls_b.data[0];
        let step1 = before.cls_b.data[1] - p.cls_b.data[1];
        assert!((step0 - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((step1 + 1e-3 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(p.cls_w, before.cls_w);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = params();
        let mut g = p.zeros_like();
        g.cls_b = crate::encoder::tensor::Matrix::zeros(1, 3);
        let mut s = AdamState::new(&p);
        assert_eq!(adam_step(&mut p, &g, &mut s, &TrainConfig::default()), Err(ShapeMismatch));
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = params();
            let mut s = AdamState::new(&p);
            let mut g = p.zeros_like();
            g.visit_mut(|i, m| {
                for (j, v) in m.data.iter_mut().enumerate() {
                    *v = ((i * 31 + j) % 7) as f64 - 3.0;
                }
            });
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut s, &TrainConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}

//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: ModelParams<T>,
    pub second_moment: ModelParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) || !(config.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam hyperparameters {config:?}")));
        }
        Ok(Self { config, step: 0, first_moment: params.zeros_like(), second_moment: params.zeros_like() })
    }
}

/// One Adam update of `params` in place:
/// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2) g²`,
/// `p ← p - lr · m̂ / (√v̂ + ε)` with `m̂ = m / (1-β1^t)`, `v̂ = v / (1-β2^t)`.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) {
        return Err(Error::shape("adam_step", format!("{:?}", params.shapes()), format!("{:?}", grads.shapes())));
    }
    for (ti, g) in grads.tensors().into_iter().enumerate() {
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient tensor {ti} entry {k}")));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let correction1 = T::one() - T::of(c.beta1.powi(t));
    let correction2 = T::one() - T::of(c.beta2.powi(t));
    let (lr, eps) = (T::of(c.lr), T::of(c.eps));

    let m_all = state.first_moment.tensors_mut();
    let v_all = state.second_moment.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(m_all).zip(v_all) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;

    fn scalar_params(v: f64) -> ModelParams<f64> {
        ModelParams {
            encoder: vec![DenseMatrix::from_vec(1, 1, vec![v]).unwrap()],
            classifier_weight: DenseMatrix::from_vec(1, 2, vec![v, v]).unwrap(),
            classifier_bias: vec![v, v],
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = scalar_params(0.3);
        let g = p.zeros_like();
        let mut s = AdamState::new(&p, AdamConfig::default()).unwrap();
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, scalar_params(0.3));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        for g0 in [0.7, -2.5, 1e-3] {
            let mut p = scalar_params(1.0);
            let mut g = p.zeros_like();
            g.encoder[0].set(0, 0, g0);
            let cfg = AdamConfig::default();
            let mut s = AdamState::new(&p, cfg).unwrap();
            adam_step(&mut p, &g, &mut s).unwrap();
            let step = p.encoder[0].get(0, 0) - 1.0;
            let expected = -cfg.lr * g0 / (g0.abs() + cfg.eps);
            assert!((step - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_tensors_update_identically() {
        let mut p = scalar_params(0.5);
        let mut g = p.zeros_like();
        g.classifier_weight = DenseMatrix::from_vec(1, 2, vec![0.2, 0.2]).unwrap();
        g.classifier_bias = vec![0.2, 0.2];
        let mut s = AdamState::new(&p, AdamConfig::default()).unwrap();
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p.classifier_weight.as_slice(), p.classifier_bias.as_slice());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_params(0.5);
        let mut g = p.zeros_like();
        g.classifier_bias[1] = f64::NAN;
        let mut s = AdamState::new(&p, AdamConfig::default()).unwrap();
        assert!(matches!(adam_step(&mut p, &g, &mut s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bad_hyperparameters() {
        let p = scalar_params(0.0);
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        assert!(AdamState::new(&p, cfg).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Learning rate 1e-4 with momentums 0.5 / 0.999.
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one group of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update of `params` against `grads`.
///
/// A non-finite gradient component rejects the whole step and leaves both
/// `params` and `state` untouched.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::AdamMismatch {
            param: params.len().min(grads.len()),
            detail: format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(TensorError::AdamMismatch {
                param: i,
                detail: format!("param {:?}, grad {:?}", p.shape(), g.shape()),
            });
        }
        if let Some(index) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(TensorError::NonFiniteGradient { param: i, index });
        }
    }

    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gr;
            *vi = beta2 * *vi + (1.0 - beta2) * gr * gr;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = one(1.0);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &one(1.0), &mut s).unwrap();
        // m̂ = 1, v̂ = 1, so Δ = lr / (1 + eps).
        let expected = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert!((p[0].item() - (1.0 - 1e-4)).abs() < 1e-11);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::row(vec![0.3, -2.0, 5.0])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let g = vec![Tensor::row(vec![1.0, -1.0, 0.5])];
        adam_step(&mut p, &g, &mut s).unwrap();
        let before = p.clone();
        let m_before = s.m[0].clone();
        let zero = vec![Tensor::zeros(&[1, 3])];
        adam_step(&mut p, &zero, &mut s).unwrap();
        // with nonzero moments the parameter still moves; from a fresh state it must not
        let mut q = before.clone();
        let mut fresh = AdamState::new(AdamConfig::default(), &q);
        for _ in 0..5 {
            adam_step(&mut q, &zero, &mut fresh).unwrap();
        }
        assert_eq!(q, before);
        for (a, b) in s.m[0].iter().zip(&m_before) {
            assert!(a.abs() < b.abs());
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::row(vec![0.3, -2.0])];
        let before = p.clone();
        let mut s = AdamState::new(cfg, &p);
        adam_step(&mut p, &[Tensor::row(vec![7.0, -3.0])], &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut p = vec![Tensor::row(vec![0.3, -2.0])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Tensor::row(vec![1.0, 1.0])], &mut s).unwrap();
        let (p0, s0) = (p.clone(), s.clone());
        let err = adam_step(&mut p, &[Tensor::row(vec![1.0, f64::NAN])], &mut s).unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient { param: 0, index: 1 });
        assert_eq!(p, p0);
        assert_eq!(s, s0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::row(vec![0.3, -2.0])];
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(adam_step(&mut p, &[Tensor::row(vec![1.0])], &mut s).is_err());
    }
}

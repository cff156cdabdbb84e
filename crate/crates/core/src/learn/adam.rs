use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam state, shaped like the parameter blocks it updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Vec<f64>>,
    #[serde(skip)]
    pub v: Vec<Vec<f64>>,
}

impl OptState {
    /// Fresh state with the usual defaults `β1 = 0.9`, `β2 = 0.999`, `eps = 1e-8`.
    pub fn new(blocks: &[Vec<f64>], lr: f64) -> Self {
        Self::with_betas(blocks, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(blocks: &[Vec<f64>], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = blocks.iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn check_shape(&self, theta: &[Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        let same = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
        };
        if !same(theta, grads) || !same(theta, &self.m) || !same(theta, &self.v) {
            return Err(Error::Shape(
                "parameters, gradients and optimizer state differ in shape".into(),
            ));
        }
        Ok(())
    }
}

/// One bias-corrected Adam step without weight decay.
pub fn adam_update(theta: &mut [Vec<f64>], grads: &[Vec<f64>], state: &mut OptState) -> Result<()> {
    state.check_shape(theta, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for (((th, g), m), v) in theta
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..th.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            th[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step counter, one slot per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update, applied in place.
///
/// A missing gradient (`None`) counts as zero. The moment buffers are
/// allocated on the first call.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::Dimension("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.len() != p.numel() {
            return Err(Error::Dimension(format!("parameter {i} changed size")));
        }
        let Some(g) = g else {
            // zero gradient still decays the moments
            for ((w, mi), vi) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi *= cfg.beta1;
                *vi *= cfg.beta2;
                *w -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
            }
            continue;
        };
        if g.numel() != p.numel() {
            return Err(Error::Dimension(format!(
                "gradient {i} has {} entries, parameter has {}",
                g.numel(),
                p.numel()
            )));
        }
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            *w -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = [Tensor::vector(vec![1.5, -2.0])];
        let mut state = AdamState::new();
        for _ in 0..10 {
            adam_step(p.iter_mut(), &[Some(Tensor::zeros(&[2]))], &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p[0].data(), &[1.5, -2.0]);
        adam_step(p.iter_mut(), &[None], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut p = [Tensor::vector(vec![0.0, 0.0, 0.0])];
        let g = Tensor::vector(vec![3.0, -1e-3, 250.0]);
        adam_step(p.iter_mut(), &[Some(g)], &mut AdamState::new(), &cfg).unwrap();
        let d = p[0].data();
        assert!((d[0] + 0.01).abs() < 1e-9);
        assert!((d[1] - 0.01).abs() < 1e-7);
        assert!((d[2] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimises_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut p = [Tensor::scalar(0.0)];
        let mut state = AdamState::new();
        for _ in 0..500 {
            let w = p[0].data()[0];
            let g = Tensor::scalar(2.0 * (w - 3.0));
            adam_step(p.iter_mut(), &[Some(g)], &mut state, &cfg).unwrap();
        }
        assert!((p[0].data()[0] - 3.0).abs() < 1e-3, "{}", p[0].data()[0]);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = [Tensor::zeros(&[2])];
        let r = adam_step(p.iter_mut(), &[Some(Tensor::zeros(&[3]))], &mut AdamState::new(), &AdamConfig::default());
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}

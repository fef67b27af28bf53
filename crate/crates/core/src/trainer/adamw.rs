//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, ParamGrads};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of `params` in place:
    ///
    /// ```text
    /// p <- p - lr * wd * p
    /// m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
    /// p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    /// ```
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), found: params.len() });
        }
        if grads.len() != params.len() {
            return Err(Error::DimensionMismatch { expected: params.len(), found: grads.len() });
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *p -= lr * weight_decay * *p;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }

    /// Applies [`AdamW::update`] to every generator weight and bias, in
    /// [`GeneratorParams::flatten`] order.
    pub fn update_generator(&mut self, params: &mut GeneratorParams, grads: &ParamGrads, lr: f64, weight_decay: f64) -> Result<()> {
        let mut flat = params.flatten();
        self.update(&mut flat, &grads.flatten(), lr, weight_decay)?;
        let mut it = flat.into_iter();
        for layer in params.layers_mut() {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("flattened length checked above");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut opt = AdamW::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            opt.update(&mut p, &[0.0; 3], 1e-3, 0.0).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_closed_form() {
        // At t = 1, m_hat = g and v_hat = g^2.
        for g in [0.3, -2.0, 1e-3] {
            let mut opt = AdamW::new(1);
            let mut p = vec![0.7];
            opt.update(&mut p, &[g], 0.01, 0.1).unwrap();
            let want = 0.7 * (1.0 - 0.01 * 0.1) - 0.01 * g / (g.abs() + EPSILON);
            assert!((p[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let mut opt = AdamW::new(2);
        assert!(opt.update(&mut [0.0; 3], &[0.0; 3], 0.1, 0.0).is_err());
        assert!(opt.update(&mut [0.0; 2], &[0.0; 1], 0.1, 0.0).is_err());
    }
}

//! ADAM with bias correction, one (m, v) pair per parameter tensor.

use super::tensor::Tensor;
use super::{NumericsError, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamParams {
    fn default() -> AdamParams {
        AdamParams { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f32) -> AdamParams {
        AdamParams { lr, ..AdamParams::default() }
    }
}

pub struct AdamState {
    hp: AdamParams,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(hp: AdamParams, sizes: &[usize]) -> AdamState {
        AdamState {
            hp,
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every parameter tensor; `params[i]` pairs with
    /// `grads[i]` and with the i-th size given at construction.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumericsError::invalid(
                "adam_step",
                format!("state tracks {} tensors, got {}/{}", self.m.len(), params.len(), grads.len()),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.hp.beta1.powi(t);
        let bc2 = 1.0 - self.hp.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.numel() != self.m[i].len() || g.numel() != self.m[i].len() {
                return Err(NumericsError::AdamShapeMismatch {
                    index: i,
                    param: p.shape().to_vec(),
                    other: g.shape().to_vec(),
                });
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.hp.beta1 * m[j] + (1.0 - self.hp.beta1) * gj;
                v[j] = self.hp.beta2 * v[j] + (1.0 - self.hp.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                pd[j] -= self.hp.lr * mhat / (vhat.sqrt() + self.hp.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // One step from zero state reduces to p -= lr·g/(|g|+eps) regardless of
    // the betas, because both bias corrections cancel exactly.
    #[test]
    fn first_step_direction_and_magnitude() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::new(vec![3], vec![0.3, -0.1, 0.0]).unwrap()];
        let hp = AdamParams::with_lr(0.01);
        let mut adam = AdamState::new(hp, &[3]);
        adam.step(&mut p, &g).unwrap();
        let d = p[0].data();
        assert!((d[0] - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-6);
        assert!((d[1] - (-2.0 + 0.01 * 0.1 / (0.1 + 1e-8))).abs() < 1e-6);
        assert!((d[2] - 0.5).abs() < 1e-7);
    }

    // Hand-rolled two-step trace with bias correction, checked to 1e-6.
    #[test]
    fn two_steps_match_reference_recurrence() {
        let hp = AdamParams { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = vec![Tensor::new(vec![1], vec![2.0]).unwrap()];
        let mut adam = AdamState::new(hp, &[1]);

        let mut rp = 2.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for t in 1..=2 {
            let g = rp * 0.5; // pretend loss = 0.25 p², grad = 0.5 p
            adam.step(&mut p, &[Tensor::new(vec![1], vec![g as f32]).unwrap()]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            rp -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!((p[0].item() as f64 - rp).abs() < 1e-6, "step {t}");
        }
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn rejects_mismatched_gradient_shape() {
        let mut p = vec![Tensor::zeros(vec![2, 2])];
        let g = vec![Tensor::zeros(vec![3])];
        let mut adam = AdamState::new(AdamParams::default(), &[4]);
        assert!(matches!(
            adam.step(&mut p, &g),
            Err(NumericsError::AdamShapeMismatch { index: 0, .. })
        ));
    }
}

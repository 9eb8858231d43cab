use laglm_tensor::Tensor;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], weight_decay: f64) -> Self {
        Self {
            weight_decay,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
                if self.weight_decay != 0.0 {
                    *w -= lr * self.weight_decay * *w;
                }
                *w -= lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = Adam::new(&p, 0.0);
        // d/dθ ½θ² = θ.
        let g = vec![Tensor::scalar(1.0)];
        opt.step(&mut p, &g, 0.1).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + ADAM_EPS);
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert!((p[0].item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = vec![Tensor::vector(vec![0.5, -2.0])];
        let mut opt = Adam::new(&p, 0.0);
        opt.step(&mut p, &[Tensor::zeros([2])], 0.1).unwrap();
        assert_eq!(p[0].data(), &[0.5, -2.0]);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut opt = Adam::new(&p, 0.5);
        opt.step(&mut p, &[Tensor::scalar(0.0)], 0.1).unwrap();
        assert!((p[0].item() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut opt = Adam::new(&p, 0.0);
        assert!(opt.step(&mut p, &[Tensor::scalar(f64::NAN)], 0.1).is_err());
        assert_eq!(p[0].item(), 2.0);
    }
}

//! Gradient-based optimizers: ADAM with bias correction and plain SGD.

use crate::error::{GeError, Result};
use crate::tensor::Tensor;

/// Per-parameter ADAM state. One optimizer owns one parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, param_sizes: &[usize]) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(learning_rate: f64, params: &[Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        Adam::new(learning_rate, &sizes)
    }

    /// Bias-corrected update: m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2 ;
    /// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    /// `grads[i]` may be None (no gradient flowed); the parameter is skipped
    /// but moments stay aligned.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(GeError::Shape(format!(
                "optimizer tracks {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = match grads[i] {
                Some(g) => g,
                None => continue,
            };
            if g.shape != p.shape {
                return Err(GeError::Shape(format!(
                    "gradient shape {:?} does not match parameter shape {:?}",
                    g.shape, p.shape
                )));
            }
            if !g.all_finite() {
                return Err(GeError::Numeric("non-finite gradient in adam_step".into()));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
            if !p.all_finite() {
                return Err(GeError::Numeric("non-finite parameter after adam_step".into()));
            }
        }
        Ok(())
    }
}

/// theta <- theta - lr * g
pub fn sgd_step(params: &mut [Tensor], grads: &[Option<&Tensor>], lr: f64) -> Result<()> {
    for (p, g) in params.iter_mut().zip(grads) {
        let g = match g {
            Some(g) => g,
            None => continue,
        };
        if g.shape != p.shape {
            return Err(GeError::Shape(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                g.shape, p.shape
            )));
        }
        if !g.all_finite() {
            return Err(GeError::Numeric("non-finite gradient in sgd_step".into()));
        }
        for j in 0..p.data.len() {
            p.data[j] -= lr * g.data[j];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_hand_computed() {
        let mut adam = Adam::new(0.1, &[1]);
        let mut params = vec![Tensor::scalar(0.0)];
        let g = Tensor::scalar(1.0);
        adam.step(&mut params, &[Some(&g)]).unwrap();
        // m=0.1, v=0.001, m_hat=1, v_hat=1 -> theta = -0.1/(1+1e-8)
        let want = -0.1 / (1.0 + 1e-8);
        assert!((params[0].item() - want).abs() < 1e-15);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut adam = Adam::new(0.1, &[3]);
        let mut params = vec![Tensor::from_vec(vec![1.0, -2.0, 0.5])];
        let g = Tensor::zeros(&[3]);
        adam.step(&mut params, &[Some(&g)]).unwrap();
        assert_eq!(params[0].data, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // f(theta) = theta^2, gradient 2*theta
        let mut adam = Adam::new(0.1, &[1]);
        let mut params = vec![Tensor::scalar(1.0)];
        for _ in 0..200 {
            let g = Tensor::scalar(2.0 * params[0].item());
            adam.step(&mut params, &[Some(&g)]).unwrap();
        }
        assert!(params[0].item().abs() < 1e-3);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut adam = Adam::new(0.05, &[2]);
            let mut params = vec![Tensor::from_vec(vec![0.3, -0.7])];
            for i in 0..50 {
                let g = Tensor::from_vec(vec![
                    params[0].data[0] + (i as f64 * 0.01),
                    params[0].data[1] * 2.0,
                ]);
                adam.step(&mut params, &[Some(&g)]).unwrap();
            }
            params[0].data.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_non_finite_grad() {
        let mut adam = Adam::new(0.1, &[1]);
        let mut params = vec![Tensor::scalar(0.0)];
        let g = Tensor::scalar(f64::NAN);
        assert!(matches!(
            adam.step(&mut params, &[Some(&g)]),
            Err(GeError::Numeric(_))
        ));
    }

    #[test]
    fn sgd_basics() {
        let mut params = vec![Tensor::scalar(2.0)];
        let g = Tensor::scalar(1.0);
        sgd_step(&mut params, &[Some(&g)], 0.0).unwrap();
        assert_eq!(params[0].item(), 2.0);
        sgd_step(&mut params, &[Some(&g)], 0.5).unwrap();
        assert_eq!(params[0].item(), 1.5);
    }

    #[test]
    fn sgd_quadratic_descent_converges() {
        // f = theta^2 / 2, gradient theta; converges for lr < 1
        let mut params = vec![Tensor::scalar(1.0)];
        for _ in 0..500 {
            let g = Tensor::scalar(params[0].item());
            sgd_step(&mut params, &[Some(&g)], 0.5).unwrap();
        }
        assert!(params[0].item().abs() < 1e-6);
    }
}

//! AdaDelta: adapts per-parameter step sizes from running averages of
//! squared gradients and squared updates, so no learning rate is tuned.

use super::{Scalar, Tensor, TensorError};

/// Per-parameter optimizer state: running averages E[g^2] and E[dx^2],
/// both initialized to exact zero. Accumulator math runs in 64-bit.
pub struct AdaDelta {
    pub rho: f64,
    pub epsilon: f64,
    accum_grad: Vec<Vec<f64>>,
    accum_update: Vec<Vec<f64>>,
}

impl AdaDelta {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn new(parameter_sizes: &[usize]) -> Self {
        Self {
            rho: Self::DEFAULT_RHO,
            epsilon: Self::DEFAULT_EPSILON,
            accum_grad: parameter_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            accum_update: parameter_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn with_hyperparameters(parameter_sizes: &[usize], rho: f64, epsilon: f64) -> Self {
        let mut opt = Self::new(parameter_sizes);
        opt.rho = rho;
        opt.epsilon = epsilon;
        opt
    }

    /// One update over all parameters:
    ///
    /// ```text
    /// E[g^2]  <- rho E[g^2]  + (1 - rho) g^2
    /// dx      = -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    /// E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
    /// x       <- x + dx
    /// ```
    pub fn step<S: Scalar>(
        &mut self,
        params: &mut [Tensor<S>],
        grads: &[Vec<S>],
    ) -> Result<(), TensorError> {
        if params.len() != self.accum_grad.len() || grads.len() != params.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "optimizer state for {} parameters, got {} params / {} grads",
                self.accum_grad.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((param, grad), (eg, eu)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.accum_grad.iter_mut().zip(&mut self.accum_update))
        {
            if param.numel() != grad.len() {
                return Err(TensorError::ShapeMismatch(format!(
                    "parameter numel {} vs gradient len {}",
                    param.numel(),
                    grad.len()
                )));
            }
            for ((x, &gs), (eg_i, eu_i)) in
                param.data_mut().iter_mut().zip(grad).zip(eg.iter_mut().zip(eu.iter_mut()))
            {
                let g = gs.to_f64();
                *eg_i = self.rho * *eg_i + (1.0 - self.rho) * g * g;
                let dx = -((*eu_i + self.epsilon).sqrt() / (*eg_i + self.epsilon).sqrt()) * g;
                *eu_i = self.rho * *eu_i + (1.0 - self.rho) * dx * dx;
                *x = S::from_f64(x.to_f64() + dx);
            }
        }
        Ok(())
    }

    pub fn accumulators(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.accum_grad[index], &self.accum_update[index])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::<f64>::from_vec(&[2], vec![1.5, -2.0])];
        let mut opt = AdaDelta::new(&[2]);
        // Pre-load accumulators, then a zero-grad step must only decay them.
        opt.step(&mut params, &[vec![1.0, -1.0]]).unwrap();
        let before = params[0].data().to_vec();
        let (eg_before, _) = {
            let (a, b) = opt.accumulators(0);
            (a.to_vec(), b.to_vec())
        };
        opt.step(&mut params, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(params[0].data(), &before[..]);
        let (eg_after, _) = opt.accumulators(0);
        for (b, a) in eg_before.iter().zip(eg_after) {
            assert!((a - b * AdaDelta::DEFAULT_RHO).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_matches_hand_formula_and_opposes_gradient() {
        let g = 3.0f64;
        let mut params = vec![Tensor::<f64>::from_vec(&[1], vec![0.7])];
        let mut opt = AdaDelta::new(&[1]);
        opt.step(&mut params, &[vec![g]]).unwrap();
        let rho = AdaDelta::DEFAULT_RHO;
        let eps = AdaDelta::DEFAULT_EPSILON;
        let expected_dx = -(eps.sqrt() / ((1.0 - rho) * g * g + eps).sqrt()) * g;
        assert!((params[0].data()[0] - (0.7 + expected_dx)).abs() < 1e-15);
        assert!(expected_dx < 0.0, "step must oppose the gradient");
    }

    #[test]
    fn optimizes_scalar_quadratic() {
        // f(x) = x^2, gradient 2x, from x = 5.
        let mut params = vec![Tensor::<f64>::from_vec(&[1], vec![5.0])];
        let mut opt = AdaDelta::new(&[1]);
        let mut trajectory = vec![5.0f64];
        for _ in 0..200 {
            let x = params[0].data()[0];
            opt.step(&mut params, &[vec![2.0 * x]]).unwrap();
            trajectory.push(params[0].data()[0]);
        }
        let last = trajectory.last().unwrap().abs();
        assert!(last < 5.0);
        for k in 0..trajectory.len() - 20 {
            assert!(
                trajectory[k + 20].abs() <= trajectory[k].abs() + 1e-12,
                "|x| increased across window at {k}"
            );
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let mut params = vec![Tensor::<f64>::zeros(&[3])];
        let mut opt = AdaDelta::new(&[3]);
        assert!(opt.step(&mut params, &[vec![0.0; 2]]).is_err());
        assert!(opt.step(&mut params, &[]).is_err());
    }
}

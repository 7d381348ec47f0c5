use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{s, Scalar};

use super::params::ParamStore;

/// Adam optimizer state: bias-corrected first and second moments per
/// parameter, stored in the parameter store's registration order.
#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub step: u64,
    m: Vec<Matrix<S>>,
    v: Vec<Matrix<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(ps: &ParamStore<S>, lr: f64) -> Self {
        let m = (0..ps.len())
            .map(|i| Matrix::zeros(ps.value_at(i).rows(), ps.value_at(i).cols()))
            .collect();
        let v = (0..ps.len())
            .map(|i| Matrix::zeros(ps.value_at(i).rows(), ps.value_at(i).cols()))
            .collect();
        OptimizerState {
            lr: s(lr),
            beta1: s(0.9),
            beta2: s(0.999),
            eps: s(1e-8),
            step: 0,
            m,
            v,
        }
    }

    /// One bias-corrected update from the gradients currently in the store.
    pub fn step(&mut self, ps: &mut ParamStore<S>) -> Result<()> {
        if self.m.len() != ps.len() {
            return Err(Error::Config("optimizer state does not match store".into()));
        }
        for i in 0..ps.len() {
            if !ps.grad_at(i).all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in '{}'",
                    ps.names()[i]
                )));
            }
        }
        self.step += 1;
        ps.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        for i in 0..ps.len() {
            let g = ps.grad_at(i).clone();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, &gj) in g.data().iter().enumerate() {
                let mj = self.beta1 * m.data()[j] + (S::one() - self.beta1) * gj;
                let vj = self.beta2 * v.data()[j] + (S::one() - self.beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let update = self.lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                ps.value_at_mut(i).data_mut()[j] -= update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", Matrix::from_vec(1, 2, vec![0.7, -0.3]).unwrap())
            .unwrap();
        let before = ps.value("w").unwrap().clone();
        let mut opt = OptimizerState::new(&ps, 0.05);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.value("w").unwrap(), &before);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", Matrix::from_vec(1, 1, vec![1.0]).unwrap())
            .unwrap();
        let mut opt = OptimizerState::new(&ps, 0.05);
        for _ in 0..200 {
            ps.zero_grads();
            let w = ps.value("w").unwrap().get(0, 0);
            ps.add_grad("w", &Matrix::from_vec(1, 1, vec![2.0 * w]).unwrap())
                .unwrap();
            opt.step(&mut ps).unwrap();
        }
        assert!(ps.value("w").unwrap().get(0, 0).abs() < 0.1);
    }

    #[test]
    fn step_counter_increments_once_per_call() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", Matrix::zeros(1, 1)).unwrap();
        let mut opt = OptimizerState::new(&ps, 0.01);
        opt.step(&mut ps).unwrap();
        opt.step(&mut ps).unwrap();
        assert_eq!(opt.step, 2);
        assert_eq!(ps.step, 2);
    }

    #[test]
    fn nan_gradient_is_numeric_error() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", Matrix::zeros(1, 1)).unwrap();
        ps.add_grad("w", &Matrix::from_vec(1, 1, vec![f64::NAN]).unwrap())
            .unwrap();
        let mut opt = OptimizerState::new(&ps, 0.01);
        assert!(matches!(opt.step(&mut ps), Err(Error::Numeric(_))));
    }
}

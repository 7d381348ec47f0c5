use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::Scalar;

use super::params::ParamStore;

/// Affine map Y = X Wᵀ + b with exact analytic gradients. W is out×in,
/// b is 1×out; the layer owns only the parameter names.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<S: Scalar>(
        ps: &mut ParamStore<S>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        ps.register_init(&w, out_dim, in_dim, in_dim, rng)?;
        ps.register_init(&b, 1, out_dim, in_dim, rng)?;
        Ok(Linear {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<S: Scalar>(&self, ps: &ParamStore<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "linear '{}' expects {} inputs, got {}",
                self.w,
                self.in_dim,
                x.cols()
            )));
        }
        let mut y = x.matmul_nt(ps.value(&self.w)?)?;
        y.add_row_broadcast(ps.value(&self.b)?)?;
        Ok(y)
    }

    /// Accumulates dW and db into the store; returns dX.
    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParamStore<S>,
        x: &Matrix<S>,
        dy: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        if dy.cols() != self.out_dim || dy.rows() != x.rows() {
            return Err(Error::Shape("linear backward shape mismatch".into()));
        }
        let dw = dy.matmul_tn(x)?;
        ps.add_grad(&self.w, &dw)?;
        ps.add_grad(&self.b, &dy.col_sum())?;
        dy.matmul(ps.value(&self.w)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("id.w", Matrix::identity(3)).unwrap();
        ps.register("id.b", Matrix::zeros(1, 3)).unwrap();
        let lin = Linear {
            w: "id.w".into(),
            b: "id.b".into(),
            in_dim: 3,
            out_dim: 3,
        };
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -4.0, 5.0, 0.5]).unwrap();
        assert_eq!(lin.forward(&ps, &x).unwrap(), x);
    }

    #[test]
    fn zero_row_input_gives_zero_row_output() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from(3);
        let lin = Linear::init(&mut ps, "l", 4, 2, &mut rng).unwrap();
        let x = Matrix::<f64>::zeros(0, 4);
        let y = lin.forward(&ps, &x).unwrap();
        assert_eq!(y.rows(), 0);
        assert_eq!(y.cols(), 2);
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from(3);
        let lin = Linear::init(&mut ps, "l", 4, 2, &mut rng).unwrap();
        let x = Matrix::<f64>::zeros(1, 5);
        assert!(matches!(lin.forward(&ps, &x), Err(Error::Shape(_))));
    }
}

use crate::error::{Error, Result};
use crate::num::Scalar;

use super::params::ParamStore;

/// Central-difference verification of analytic gradients.
///
/// The caller populates `ps` gradients analytically (one backward pass of the
/// function under test) before calling; `f` must be a pure forward evaluation
/// of the same scalar function. Returns the worst relative error over all
/// parameter coordinates.
pub fn grad_check<S, F>(ps: &mut ParamStore<S>, mut f: F, eps: f64) -> Result<f64>
where
    S: Scalar,
    F: FnMut(&mut ParamStore<S>) -> Result<S>,
{
    if eps <= 0.0 {
        return Err(Error::Config("grad_check epsilon must be positive".into()));
    }
    let eps_s = S::from_f64(eps).unwrap();
    let mut worst = 0.0f64;
    for i in 0..ps.len() {
        let coords = ps.value_at(i).data().len();
        for j in 0..coords {
            let orig = ps.value_at(i).data()[j];
            ps.value_at_mut(i).data_mut()[j] = orig + eps_s;
            let up = f(ps)?;
            ps.value_at_mut(i).data_mut()[j] = orig - eps_s;
            let down = f(ps)?;
            ps.value_at_mut(i).data_mut()[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric("non-finite loss during grad_check".into()));
            }
            let numeric = (up - down).to_f64_lossy() / (2.0 * eps);
            let analytic = ps.grad_at(i).data()[j].to_f64_lossy();
            let denom = analytic.abs().max(numeric.abs()).max(1e-2);
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::numcore::linear::Linear;
    use crate::seed::rng_from;

    #[test]
    fn linear_sum_passes() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from(11);
        let lin = Linear::init(&mut ps, "l", 4, 3, &mut rng).unwrap();
        let mut x = Matrix::zeros(3, 4);
        for (k, v) in x.data_mut().iter_mut().enumerate() {
            *v = (k as f64 * 0.37).sin();
        }

        // analytic: d(sum Y)/dY = ones
        ps.zero_grads();
        let y = lin.forward(&ps, &x).unwrap();
        let mut dy = Matrix::zeros(y.rows(), y.cols());
        dy.fill(1.0);
        lin.backward(&mut ps, &x, &dy).unwrap();

        let err = grad_check(
            &mut ps,
            |ps| {
                let y = lin.forward(ps, &x)?;
                Ok(y.data().iter().sum())
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel error {err}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", Matrix::zeros(2, 2)).unwrap();
        ps.zero_grads();
        let err = grad_check(&mut ps, |_| Ok(7.0), 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn zero_epsilon_is_config_error() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", Matrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            grad_check(&mut ps, |_| Ok(0.0), 0.0),
            Err(Error::Config(_))
        ));
    }
}

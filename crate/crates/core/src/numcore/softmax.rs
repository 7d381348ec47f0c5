use crate::matrix::Matrix;
use crate::num::Scalar;

/// Numerically stable log-softmax of one row (max subtraction).
pub fn log_softmax_row<S: Scalar>(x: &[S]) -> Vec<S> {
    let m = x.iter().cloned().fold(S::neg_infinity(), S::max);
    let z: S = x.iter().map(|&v| (v - m).exp()).sum();
    let lz = m + z.ln();
    x.iter().map(|&v| v - lz).collect()
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(&log_softmax_row(x.row(i)));
    }
    out
}

/// Backward through log-softmax: given the outputs y = log_softmax(x) and the
/// upstream dY, returns dX with dx_j = dy_j - exp(y_j) * sum_k dy_k.
pub fn log_softmax_backward<S: Scalar>(y: &Matrix<S>, dy: &Matrix<S>) -> Matrix<S> {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let total: S = dy.row(i).iter().cloned().sum();
        for j in 0..y.cols() {
            dx.set(i, j, dy.get(i, j) - y.get(i, j).exp() * total);
        }
    }
    dx
}

pub fn softmax_row<S: Scalar>(x: &[S]) -> Vec<S> {
    log_softmax_row(x).iter().map(|&v| v.exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_input_is_uniform() {
        let y = log_softmax_row(&[0.0f64; 4]);
        for v in y {
            assert!((v - (-(4.0f64).ln())).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_invariance() {
        let x = [0.3f64, -1.2, 2.5, 0.0, 7.0];
        let a = log_softmax_row(&x);
        let b = log_softmax_row(&x.map(|v| v + 123.456));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn exp_sums_to_one() {
        let x = [100.0f64, -100.0, 0.5, 3.0];
        let sum: f64 = log_softmax_row(&x).iter().map(|v| v.exp()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

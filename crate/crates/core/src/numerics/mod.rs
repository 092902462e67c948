//! Dense matrices, seeded random streams and a finite-difference gradient oracle.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::RngStream;

use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<T: Scalar>(mut f: impl FnMut(&[T]) -> T, x: &[T], h: T) -> Result<Vec<T>> {
    ensure!(
        h > T::zero(),
        Parameter,
        "finite-difference step must be > 0"
    );
    let mut probe = x.to_vec();
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "objective not finite around coordinate {i}: f(+h)={up}, f(-h)={down}"
            )));
        }
        grad.push((up - down) / two_h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square() {
        let g = finite_diff_grad(|x: &[f64]| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_gives_zero() {
        let g = finite_diff_grad(|_: &[f64]| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn bilinear_partials() {
        let g = finite_diff_grad(|x: &[f64]| x[0] * x[1], &[2.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let r = finite_diff_grad(|x: &[f64]| 1.0 / x[0], &[0.0], 1e-5);
        assert!(r.is_ok());
        let r = finite_diff_grad(|x: &[f64]| x[0].ln(), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert!(finite_diff_grad(|x: &[f64]| x[0], &[0.0], 0.0).is_err());
    }
}

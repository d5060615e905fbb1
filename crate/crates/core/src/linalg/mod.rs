//! Small linear-algebra layer: a real CSR matrix for the assembled operators,
//! a banded LU for the structured-mesh systems, and conversions to `faer` for
//! the dense eigen/SVD work.

mod band;
mod scalar;
mod sparse;

pub use band::{BandLu, BandMatrix};
pub use scalar::Scalar;
pub use sparse::CsrMatrix;

use num_complex::Complex64;

/// Euclidean inner product `y^H x`.
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter()
        .zip(y)
        .fold(T::zero(), |acc, (&a, &b)| acc + b.conj() * a)
}

pub fn norm2<T: Scalar>(x: &[T]) -> f64 {
    x.iter().map(|v| v.modulus_sqr()).sum::<f64>().sqrt()
}

pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn is_finite<T: Scalar>(x: &[T]) -> bool {
    x.iter().all(|v| v.modulus_sqr().is_finite())
}

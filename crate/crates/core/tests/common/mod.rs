#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use roughflow::{ControlledFamily, GaussianSampler, VectorFieldSet, WentzelField};

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

pub fn m(rows: usize, cols: usize, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, xs)
}

pub fn rotation_generator() -> DMatrix<f64> {
    m(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

pub fn rotation_field() -> VectorFieldSet {
    VectorFieldSet::linear(vec![rotation_generator()]).unwrap()
}

pub fn scalar_exponential() -> VectorFieldSet {
    VectorFieldSet::linear(vec![DMatrix::from_element(1, 1, 1.0)]).unwrap()
}

/// `F(x, y) = (−y + 0.1 x², x)`.
pub fn perturbed_rotation() -> VectorFieldSet {
    VectorFieldSet::new(
        2,
        1,
        |y: &DVector<f64>| m(2, 1, &[-y[1] + 0.1 * y[0] * y[0], y[0]]),
        |y: &DVector<f64>| vec![m(2, 2, &[0.2 * y[0], -1.0, 1.0, 0.0])],
    )
    .unwrap()
}

/// `H(y) = y (1 − 0.2 |y|²)`.
pub fn radial_scaling() -> VectorFieldSet {
    VectorFieldSet::new(
        2,
        1,
        |y: &DVector<f64>| {
            let s = 1.0 - 0.2 * y.norm_squared();
            DMatrix::from_column_slice(2, 1, (y * s).as_slice())
        },
        |y: &DVector<f64>| {
            let s = 1.0 - 0.2 * y.norm_squared();
            vec![DMatrix::identity(2, 2) * s - y * y.transpose() * 0.4]
        },
    )
    .unwrap()
}

/// Two rotations of R³, in the (1,2) and (1,3) planes.
pub fn sphere_fields_3d() -> VectorFieldSet {
    VectorFieldSet::linear(vec![
        m(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        m(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]),
    ])
    .unwrap()
}

pub fn gaussian_matrix(sampler: &mut GaussianSampler, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| sampler.standard())
}

/// Random matrix rescaled to Frobenius norm `norm`.
pub fn random_matrix(seed: u64, n: usize, norm: f64) -> DMatrix<f64> {
    let mut s = GaussianSampler::new(seed);
    let a = gaussian_matrix(&mut s, n);
    let f = a.norm();
    a * (norm / f)
}

pub fn uniform_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// `h ≡ c`, `g(0, x) = sin x`.
pub fn wentzel_constant(c: f64) -> WentzelField {
    WentzelField {
        h: ControlledFamily::constant(v(&[c])),
        dh: ControlledFamily::constant(v(&[0.0])),
        g0: Box::new(|x| x.sin()),
        dg0: Box::new(|x| x.cos()),
    }
}

/// `h(s, x) = r x`, `g(0, x) = x`.
pub fn wentzel_linear(r: f64) -> WentzelField {
    WentzelField {
        h: ControlledFamily::new(move |_, x| v(&[r * x]), |_, _| DMatrix::zeros(1, 1)),
        dh: ControlledFamily::constant(v(&[r])),
        g0: Box::new(|x| x),
        dg0: Box::new(|_| 1.0),
    }
}

/// `h ≡ 0`, `g(0, x) = x`.
pub fn wentzel_zero() -> WentzelField {
    WentzelField {
        h: ControlledFamily::constant(v(&[0.0])),
        dh: ControlledFamily::constant(v(&[0.0])),
        g0: Box::new(|x| x),
        dg0: Box::new(|_| 1.0),
    }
}

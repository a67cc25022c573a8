//! Central finite differences, used only by verification routines.

use nalgebra::{DMatrix, DVector};

/// Relative step for central differences.
pub const RELATIVE_STEP: f64 = 1e-6;

fn step_for(y: &DVector<f64>, v: &DVector<f64>) -> Option<f64> {
    let vn = v.norm();
    if vn == 0.0 {
        None
    } else {
        Some(RELATIVE_STEP * (1.0 + y.norm()) / vn)
    }
}

/// Directional derivative `D f(y)[v]` of a matrix-valued map.
pub fn directional<F>(f: F, y: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let probe = f(y);
    match step_for(y, v) {
        None => DMatrix::zeros(probe.nrows(), probe.ncols()),
        Some(eps) => (f(&(y + v * eps)) - f(&(y - v * eps))) / (2.0 * eps),
    }
}

/// Jacobian of a vector-valued map, one central difference per coordinate.
pub fn jacobian<F>(f: F, y: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = y.len();
    let f0 = f(y);
    let mut jac = DMatrix::zeros(f0.len(), m);
    for k in 0..m {
        let eps = RELATIVE_STEP * (1.0 + y[k].abs());
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[k] += eps;
        ym[k] -= eps;
        let col = (f(&yp) - f(&ym)) / (2.0 * eps);
        jac.set_column(k, &col);
    }
    jac
}

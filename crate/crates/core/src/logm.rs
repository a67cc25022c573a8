//! Principal real matrix logarithm by inverse scaling and squaring on the
//! real Schur form.
//!
//! Square roots are taken block-wise on the quasi-triangular factor until it
//! is close to the identity, then `log(I + X) = ∫_0^1 X (I + τX)^{-1} dτ` is
//! evaluated with Gauss–Legendre quadrature.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::schur::{real_schur, small_sylvester, RealBlockBasis};

const NODES: usize = 10;
const TARGET: f64 = 0.2;
const MAX_ROOTS: usize = 64;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

/// Principal square root of a quasi-upper-triangular matrix with the given
/// diagonal block sizes, none of whose eigenvalues lie on `(−∞, 0]`.
fn quasi_triangular_sqrt(t: &DMatrix<f64>, dims: &[usize]) -> Result<DMatrix<f64>> {
    let m = t.nrows();
    let mut off = vec![0];
    for d in dims {
        off.push(off.last().unwrap() + d);
    }
    let k = dims.len();
    let mut r = DMatrix::zeros(m, m);
    for b in 0..k {
        let (o, d) = (off[b], dims[b]);
        if d == 1 {
            r[(o, o)] = t[(o, o)].sqrt();
        } else {
            let blk = t.view((o, o), (2, 2)).into_owned();
            let det = blk.determinant();
            let s = det.sqrt();
            let tau = (blk.trace() + 2.0 * s).sqrt();
            let root = (blk + DMatrix::identity(2, 2) * s) / tau;
            r.view_mut((o, o), (2, 2)).copy_from(&root);
        }
    }
    for j in 1..k {
        for i in (0..j).rev() {
            let (oi, di, oj, dj) = (off[i], dims[i], off[j], dims[j]);
            let mut rhs = t.view((oi, oj), (di, dj)).into_owned();
            for l in i + 1..j {
                let (ol, dl) = (off[l], dims[l]);
                rhs -= r.view((oi, ol), (di, dl)) * r.view((ol, oj), (dl, dj));
            }
            let rii = r.view((oi, oi), (di, di)).into_owned();
            let rjj = r.view((oj, oj), (dj, dj)).into_owned();
            let u = small_sylvester(&rii, &rjj, &rhs, 1.0)
                .ok_or_else(|| Error::Convergence("square root: singular Sylvester block".into()))?;
            r.view_mut((oi, oj), (di, dj)).copy_from(&u);
        }
    }
    Ok(r)
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn check_spectrum(basis: &RealBlockBasis) -> Result<()> {
    for e in basis.eigenvalues() {
        if e.im == 0.0 && e.re <= 0.0 {
            return Err(Error::NegativeRealEigenvalue(e.re));
        }
    }
    Ok(())
}

/// Principal logarithm of `m`.
///
/// Fails when `m` has a real eigenvalue in `(−∞, 0]`; such matrices may still
/// have a real logarithm but not a principal one.
pub fn logm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let basis = real_schur(m)?;
    check_spectrum(&basis)?;
    let n = m.nrows();
    let eye = DMatrix::identity(n, n);
    let mut t = basis.t.clone();
    let mut roots = 0;
    while norm1(&(&t - &eye)) > TARGET {
        if roots == MAX_ROOTS {
            return Err(Error::Convergence(format!(
                "no convergence to the identity after {MAX_ROOTS} square roots"
            )));
        }
        t = quasi_triangular_sqrt(&t, &basis.block_dims)?;
        roots += 1;
    }
    let x = &t - &eye;
    let mut log = DMatrix::zeros(n, n);
    for (tau, w) in gauss_legendre(NODES) {
        let lhs = &eye + &x * tau;
        let y = lhs
            .lu()
            .solve(&x)
            .ok_or_else(|| Error::Convergence("logarithm quadrature: singular resolvent".into()))?;
        log += y * w;
    }
    log *= (2.0f64).powi(roots as i32);
    Ok(&basis.p * log * basis.p.transpose())
}

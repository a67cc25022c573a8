//! Cascade decomposition of a linear flow into `k` row-band factors.
//!
//! In an ordered real Schur basis `T = Pᵀ A P` with diagonal blocks of size
//! `d_1, …, d_k`, split after every block `i` to get `Φ = η̃^i ψ̃^i`. Then
//!
//! ```text
//! ξ^1 = η̃^1,   ξ^i = (η̃^{i−1})^{-1} η̃^i,   ξ^k = ψ̃^{k−1},
//! Pᵀ Φ_t P = ξ^1_t ξ^2_t ⋯ ξ^k_t,
//! ```
//!
//! and `ξ^i` differs from the identity only in the rows of block `i`.
//! Because `T` is block upper triangular every split has `A3 = 0`, so none
//! of the factors explode.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{decompose_blocks, solve_linear_flow, BlockPartition, LinearFlowPath};
use crate::logm::logm;
use crate::rough_path::{time_path, RoughPath, TimeGrid};
use crate::schur::{real_block_form, RealBlockBasis};

/// Off-band rows may deviate from the identity by at most this (relative)
/// amount, or by `(h ‖T‖)²` on coarse grids, before they are reset.
pub const BAND_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeFactorization {
    pub basis: RealBlockBasis,
    pub times: Vec<f64>,
    /// `factors[i][n]` is `ξ^{i+1}` at time `times[n]`.
    pub factors: Vec<Vec<DMatrix<f64>>>,
}

impl CascadeFactorization {
    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Row range of factor `i`.
    pub fn band(&self, i: usize) -> (usize, usize) {
        let off = self.basis.offsets();
        (off[i], off[i + 1])
    }

    /// `ξ^{from+1} ⋯ ξ^{to}` at sample `n`.
    pub fn partial_product(&self, from: usize, to: usize, n: usize) -> DMatrix<f64> {
        let m = self.basis.dim();
        self.factors[from..to]
            .iter()
            .fold(DMatrix::identity(m, m), |acc, f| acc * &f[n])
    }

    pub fn product(&self, n: usize) -> DMatrix<f64> {
        self.partial_product(0, self.k(), n)
    }
}

fn explosion(index: Option<usize>) -> Error {
    Error::Explosion {
        index: index.unwrap_or(0),
    }
}

/// Check that `f` is the identity outside rows `lo..hi` to within `tol`
/// (relative) and make it exactly so.
fn purify_band(f: &mut DMatrix<f64>, lo: usize, hi: usize, tol: f64) -> Result<()> {
    let m = f.nrows();
    let scale = 1.0 + f.norm();
    for r in (0..lo).chain(hi..m) {
        for c in 0..m {
            let target = if r == c { 1.0 } else { 0.0 };
            let dev = (f[(r, c)] - target).abs();
            if !(dev <= tol * scale) {
                return Err(Error::ShapeViolation(format!(
                    "factor for rows {lo}..{hi} deviates from the identity by {dev:e} at ({r}, {c})"
                )));
            }
            f[(r, c)] = target;
        }
    }
    Ok(())
}

/// Cascade factors of `dΦ = A Φ dX` in the ordered real Schur basis of `A`.
pub fn cascade_decompose(a: &DMatrix<f64>, rp: &RoughPath, threshold: f64) -> Result<CascadeFactorization> {
    cascade_in_basis(real_block_form(a)?, rp, threshold)
}

/// Cascade factors for a precomputed block basis (any block order).
pub fn cascade_in_basis(basis: RealBlockBasis, rp: &RoughPath, threshold: f64) -> Result<CascadeFactorization> {
    if rp.dim() != 1 {
        return Err(Error::InvalidParameter(format!(
            "cascade decomposition needs a one-dimensional driver, got d = {}",
            rp.dim()
        )));
    }
    let k = basis.k();
    let m = basis.dim();
    let off = basis.offsets();

    if k == 1 {
        let flow = solve_linear_flow(std::slice::from_ref(&basis.t), rp)?;
        if let Some(b) = flow.blowup {
            return Err(explosion(Some(b.index)));
        }
        return Ok(CascadeFactorization {
            times: flow.times,
            factors: vec![flow.matrices],
            basis,
        });
    }

    let pairs = (1..k)
        .map(|i| {
            let pair = decompose_blocks(&basis.t, BlockPartition::new(off[i], m - off[i])?, rp, threshold)?;
            if pair.explosion.exploded {
                return Err(explosion(pair.explosion.first_index));
            }
            Ok(pair)
        })
        .collect::<Result<Vec<_>>>()?;

    let h_max = rp.grid().points().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let tol = BAND_TOLERANCE.max((h_max * basis.t.norm()).powi(2));
    let steps = pairs[0].len();
    let mut factors: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(k);
    factors.push(pairs[0].eta.clone());
    for i in 1..k - 1 {
        let mut path = Vec::with_capacity(steps);
        for n in 0..steps {
            let mut f = pairs[i - 1].eta[n]
                .clone()
                .lu()
                .solve(&pairs[i].eta[n])
                .ok_or_else(|| Error::ShapeViolation(format!("η factor {i} singular at sample {n}")))?;
            purify_band(&mut f, off[i], off[i + 1], tol)?;
            path.push(f);
        }
        factors.push(path);
    }
    factors.push(pairs[k - 2].psi.clone());

    Ok(CascadeFactorization {
        basis,
        times: pairs[0].times.clone(),
        factors,
    })
}

/// `max_n ‖ξ^1_n ⋯ ξ^k_n − Pᵀ Φ_n P‖_F`.
pub fn recompose_cascade(cf: &CascadeFactorization, reference: &LinearFlowPath) -> Result<f64> {
    if reference.times != cf.times {
        return Err(Error::InvalidGrid("cascade and reference flow use different grids".into()));
    }
    let p = &cf.basis.p;
    let pt = p.transpose();
    Ok((0..cf.len())
        .map(|n| (cf.product(n) - &pt * &reference.matrices[n] * p).norm())
        .fold(0.0, f64::max))
}

/// Row factorization of a single matrix through its principal logarithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFactorization {
    pub basis: RealBlockBasis,
    pub log: DMatrix<f64>,
    pub factors: Vec<DMatrix<f64>>,
    /// `‖ξ^1 ⋯ ξ^k − Pᵀ M P‖_F`.
    pub residual: f64,
    /// Finest step count used on `[0, 1]`.
    pub steps: usize,
}

const BASE_STEPS: usize = 512;
const MAX_STEPS: usize = 1 << 15;

fn final_factors(basis: &RealBlockBasis, steps: usize) -> Result<Vec<DMatrix<f64>>> {
    let rp = time_path(&TimeGrid::uniform(1.0, steps)?, 0.5)?;
    let cf = cascade_in_basis(basis.clone(), &rp, f64::INFINITY)?;
    Ok(cf.factors.into_iter().map(|mut f| f.pop().unwrap()).collect())
}

/// Factor `M = P (ξ^1 ⋯ ξ^k) Pᵀ` with `ξ^i` the cascade factors at `t = 1`
/// of `dΦ = log(M) Φ dt`.
///
/// The cascade is run at step counts `N, 2N, 4N` and the factor matrices are
/// Richardson-extrapolated to remove the `N^{-2}` and `N^{-3}` error terms;
/// `N` doubles until the product reproduces `Pᵀ M P` to `tol`.
pub fn factor_matrix_with_real_log(m: &DMatrix<f64>, tol: f64) -> Result<MatrixFactorization> {
    let log = logm(m)?;
    let basis = real_block_form(&log)?;
    let target = basis.p.transpose() * m * &basis.p;
    let off = basis.offsets();

    let mut steps = BASE_STEPS;
    let mut coarse = final_factors(&basis, steps)?;
    let mut mid = final_factors(&basis, 2 * steps)?;
    loop {
        let fine = final_factors(&basis, 4 * steps)?;
        let factors = (0..basis.k())
            .map(|i| {
                let r1 = (&mid[i] * 4.0 - &coarse[i]) / 3.0;
                let r2 = (&fine[i] * 4.0 - &mid[i]) / 3.0;
                let mut f = (r2 * 8.0 - r1) / 7.0;
                purify_band(&mut f, off[i], off[i + 1], BAND_TOLERANCE)?;
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = target.nrows();
        let product = factors.iter().fold(DMatrix::identity(n, n), |acc, f| acc * f);
        let residual = (product - &target).norm();
        if residual <= tol * (1.0 + target.norm()) || 4 * steps >= MAX_STEPS {
            if residual > tol * (1.0 + target.norm()) {
                return Err(Error::Convergence(format!(
                    "factor product misses the target by {residual:e} at {} steps",
                    4 * steps
                )));
            }
            return Ok(MatrixFactorization {
                basis,
                log,
                factors,
                residual,
                steps: 4 * steps,
            });
        }
        steps *= 2;
        coarse = mid;
        mid = fine;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn clock(n: usize) -> RoughPath {
        time_path(&TimeGrid::uniform(1.0, n).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn diagonal_factors_are_exponentials() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.7]));
        let rp = clock(2000);
        let cf = cascade_decompose(&a, &rp, 1e6).unwrap();
        assert_eq!(cf.k(), 2);
        let n = cf.len() - 1;
        // Ascending order puts -0.7 first.
        assert!((cf.factors[0][n][(0, 0)] - (-0.7f64).exp()).abs() < 1e-6);
        assert_eq!(cf.factors[0][n][(1, 1)], 1.0);
        assert_eq!(cf.factors[1][n][(0, 0)], 1.0);
        assert!((cf.factors[1][n][(1, 1)] - 0.3f64.exp()).abs() < 1e-6);
        let phi = solve_linear_flow(&[a], &rp).unwrap();
        assert!(recompose_cascade(&cf, &phi).unwrap() < 1e-8);
    }

    #[test]
    fn rotation_is_a_single_factor() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let rp = clock(500);
        let cf = cascade_decompose(&a, &rp, 1e6).unwrap();
        assert_eq!(cf.k(), 1);
        let phi = solve_linear_flow(&[a], &rp).unwrap();
        assert!(recompose_cascade(&cf, &phi).unwrap() < 1e-10);
    }

    #[test]
    fn triangular_cascade_recomposes_with_pure_bands() {
        let a = DMatrix::from_row_slice(4, 4, &[
            0.1, 0.5, -0.3, 0.2,
            0.0, -0.4, 0.6, 0.1,
            0.0, 0.0, 0.7, -0.5,
            0.0, 0.0, 0.0, 0.3,
        ]);
        let rp = clock(4000);
        let cf = cascade_decompose(&a, &rp, 1e6).unwrap();
        assert_eq!(cf.k(), 4);
        let phi = solve_linear_flow(&[a], &rp).unwrap();
        assert!(recompose_cascade(&cf, &phi).unwrap() < 1e-5);
        let m = 4;
        for i in 0..cf.k() {
            let (lo, hi) = cf.band(i);
            for f in &cf.factors[i] {
                for r in (0..lo).chain(hi..m) {
                    for c in 0..m {
                        assert_eq!(f[(r, c)], if r == c { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    #[test]
    fn diag_two_three() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let f = factor_matrix_with_real_log(&m, 1e-10).unwrap();
        assert_eq!(f.factors.len(), 2);
        let d0 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let d1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        assert!((&f.factors[0] - d0).norm() < 1e-9, "{}", f.factors[0]);
        assert!((&f.factors[1] - d1).norm() < 1e-9, "{}", f.factors[1]);
    }

    #[test]
    fn rotation_matrix_single_factor() {
        let (s, c) = 1f64.sin_cos();
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let f = factor_matrix_with_real_log(&m, 1e-10).unwrap();
        assert_eq!(f.factors.len(), 1);
        let back = &f.basis.p * &f.factors[0] * f.basis.p.transpose();
        assert!((back - m).norm() < 1e-9);
    }

    #[test]
    fn negative_spectrum_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 3.0]));
        assert!(matches!(factor_matrix_with_real_log(&m, 1e-8), Err(Error::NegativeRealEigenvalue(_))));
    }
}

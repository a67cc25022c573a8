//! Ordered real Schur form.
//!
//! A real matrix is reduced orthogonally to quasi-upper-triangular form with
//! 1×1 blocks for real eigenvalues and 2×2 blocks for complex pairs, and the
//! diagonal blocks are then reordered by ascending real part (ties by
//! ascending imaginary magnitude) with adjacent block swaps.
//!
//! Every nested lower-left block of the result vanishes, which is what the
//! cascade decomposition needs for all its factors to stay bounded.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries below the block diagonal above this (relative) size are an error.
pub const BLOCK_TOLERANCE: f64 = 1e-10;

/// `T = Pᵀ A P` with `P` orthogonal and `T` block upper triangular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealBlockBasis {
    pub p: DMatrix<f64>,
    pub block_dims: Vec<usize>,
    pub t: DMatrix<f64>,
}

/// Eigenvalue summary of one diagonal block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEigen {
    pub re: f64,
    /// Non-negative imaginary part; zero for 1×1 blocks.
    pub im: f64,
}

impl RealBlockBasis {
    pub fn k(&self) -> usize {
        self.block_dims.len()
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Start row of every block, followed by `m`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.block_dims.len() + 1);
        let mut o = 0;
        out.push(0);
        for d in &self.block_dims {
            o += d;
            out.push(o);
        }
        out
    }

    pub fn eigenvalues(&self) -> Vec<BlockEigen> {
        let off = self.offsets();
        self.block_dims
            .iter()
            .zip(&off)
            .map(|(&d, &o)| block_eigen(&self.t, o, d))
            .collect()
    }

    /// `P T Pᵀ`, the matrix this basis was computed from (up to round-off).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.p * &self.t * self.p.transpose()
    }

    /// Largest entry below the block diagonal.
    pub fn below_block_diagonal(&self) -> f64 {
        below_blocks(&self.t, &self.block_dims)
    }
}

fn block_eigen(t: &DMatrix<f64>, o: usize, d: usize) -> BlockEigen {
    if d == 1 {
        return BlockEigen { re: t[(o, o)], im: 0.0 };
    }
    let (a, b, c, dd) = (t[(o, o)], t[(o, o + 1)], t[(o + 1, o)], t[(o + 1, o + 1)]);
    let half = 0.5 * (a - dd);
    let disc = half * half + b * c;
    BlockEigen {
        re: 0.5 * (a + dd),
        im: (-disc).max(0.0).sqrt(),
    }
}

fn below_blocks(t: &DMatrix<f64>, dims: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    let mut o = 0;
    for &d in dims {
        for r in o + d..t.nrows() {
            for c in o..o + d {
                worst = worst.max(t[(r, c)].abs());
            }
        }
        o += d;
    }
    worst
}

/// Plain (unordered) real Schur reduction with block detection.
fn schur_blocks(a: &DMatrix<f64>) -> Result<RealBlockBasis> {
    let m = a.nrows();
    if m == 0 || a.ncols() != m {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: m,
            found: a.ncols(),
        });
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    let cap = 30 * m * m;
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, cap)
        .ok_or_else(|| Error::Convergence(format!("real Schur iteration exceeded {cap} sweeps")))?;
    let (mut p, mut t) = schur.unpack();
    let scale = 1.0 + a.norm();

    let mut dims = Vec::new();
    let mut o = 0;
    while o < m {
        if o + 1 < m && t[(o + 1, o)].abs() > f64::EPSILON * scale {
            if !split_real_pair(&mut t, &mut p, o) {
                dims.push(2);
                o += 2;
                continue;
            }
        }
        if o + 1 < m {
            t[(o + 1, o)] = 0.0;
        }
        dims.push(1);
        o += 1;
    }
    Ok(RealBlockBasis { p, block_dims: dims, t })
}

/// Triangularize a 2×2 diagonal block with real eigenvalues by a rotation.
/// Returns false (and leaves everything untouched) for a complex pair.
fn split_real_pair(t: &mut DMatrix<f64>, p: &mut DMatrix<f64>, o: usize) -> bool {
    let (a, b, c, d) = (t[(o, o)], t[(o, o + 1)], t[(o + 1, o)], t[(o + 1, o + 1)]);
    let half = 0.5 * (a - d);
    let disc = half * half + b * c;
    if disc < 0.0 {
        return false;
    }
    let root = disc.sqrt();
    let lambda = 0.5 * (a + d) + if half >= 0.0 { root } else { -root };
    let (x, y) = if (lambda - d).hypot(c) >= b.hypot(lambda - a) {
        (lambda - d, c)
    } else {
        (b, lambda - a)
    };
    let r = x.hypot(y);
    if r == 0.0 {
        return false;
    }
    let g = DMatrix::from_row_slice(2, 2, &[x / r, -y / r, y / r, x / r]);
    apply_block_rotation(t, p, o, &g);
    t[(o + 1, o)] = 0.0;
    true
}

/// `T ← Gᵀ T G`, `P ← P G` on the rows/columns `o..o+n`.
fn apply_block_rotation(t: &mut DMatrix<f64>, p: &mut DMatrix<f64>, o: usize, g: &DMatrix<f64>) {
    let m = t.nrows();
    let n = g.nrows();
    let cols = t.view((0, o), (m, n)) * g;
    t.view_mut((0, o), (m, n)).copy_from(&cols);
    let rows = g.transpose() * t.view((o, 0), (n, m));
    t.view_mut((o, 0), (n, m)).copy_from(&rows);
    let pc = p.view((0, o), (m, n)) * g;
    p.view_mut((0, o), (m, n)).copy_from(&pc);
}

/// Solve `A X + s X B = C` for small blocks through the Kronecker system.
pub(crate) fn small_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, s: f64) -> Option<DMatrix<f64>> {
    let (p, q) = (a.nrows(), b.nrows());
    let mut k = DMatrix::zeros(p * q, p * q);
    for j in 0..q {
        for i in 0..p {
            let row = j * p + i;
            for l in 0..p {
                k[(row, j * p + l)] += a[(i, l)];
            }
            for l in 0..q {
                k[(row, l * p + i)] += s * b[(l, j)];
            }
        }
    }
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = k.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

/// Swap the adjacent diagonal blocks starting at `o` (sizes `p1`, `p2`).
fn swap_blocks(basis: &mut RealBlockBasis, o: usize, p1: usize, p2: usize) -> Result<()> {
    let n = p1 + p2;
    let t = &basis.t;
    let a11 = t.view((o, o), (p1, p1)).into_owned();
    let a22 = t.view((o + p1, o + p1), (p2, p2)).into_owned();
    let a12 = t.view((o, o + p1), (p1, p2)).into_owned();
    let x = small_sylvester(&a11, &a22, &a12, -1.0)
        .ok_or_else(|| Error::Convergence("block swap: blocks share an eigenvalue".into()))?;

    // The first p2 columns of [[-X, I], [I, 0]] span the invariant subspace of A22.
    let mut basis_cols = DMatrix::zeros(n, n);
    basis_cols.view_mut((0, 0), (p1, p2)).copy_from(&(-&x));
    basis_cols.view_mut((p1, 0), (p2, p2)).fill_with_identity();
    basis_cols.view_mut((0, p2), (p1, p1)).fill_with_identity();
    let q = basis_cols.qr().q();

    apply_block_rotation(&mut basis.t, &mut basis.p, o, &q);
    let scale = 1.0 + basis.t.norm();
    let below = basis.t.view((o + p2, o), (p1, p2)).amax();
    if below > BLOCK_TOLERANCE * scale {
        return Err(Error::Convergence(format!(
            "block swap left a sub-diagonal block of size {below:e}"
        )));
    }
    basis.t.view_mut((o + p2, o), (p1, p2)).fill(0.0);
    Ok(())
}

/// Put the diagonal blocks in the order `order` (a permutation of block
/// indices) using adjacent swaps.
pub fn reorder_blocks(basis: &RealBlockBasis, order: &[usize]) -> Result<RealBlockBasis> {
    let k = basis.k();
    let mut seen = vec![false; k];
    if order.len() != k || order.iter().any(|&i| i >= k || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidParameter(format!("{order:?} is not a permutation of {k} blocks")));
    }
    let mut out = basis.clone();
    // rank[b] = target position of the block currently at position b.
    let mut rank: Vec<usize> = vec![0; k];
    for (pos, &b) in order.iter().enumerate() {
        rank[b] = pos;
    }
    let mut dims = out.block_dims.clone();
    loop {
        let mut swapped = false;
        let mut o = 0;
        for b in 0..k - 1 {
            if rank[b] > rank[b + 1] {
                let (p1, p2) = (dims[b], dims[b + 1]);
                swap_blocks(&mut out, o, p1, p2)?;
                dims.swap(b, b + 1);
                rank.swap(b, b + 1);
                swapped = true;
            }
            o += dims[b];
        }
        if !swapped {
            break;
        }
    }
    out.block_dims = dims;
    // Restore the standard quasi-triangular zeros and check the result.
    let scale = 1.0 + basis.t.norm();
    let below = below_blocks(&out.t, &out.block_dims);
    if below > BLOCK_TOLERANCE * scale {
        return Err(Error::Convergence(format!(
            "reordered form is not block triangular (largest entry {below:e})"
        )));
    }
    let mut o = 0;
    for &d in &out.block_dims.clone() {
        for r in o + d..out.t.nrows() {
            for c in o..o + d {
                out.t[(r, c)] = 0.0;
            }
        }
        o += d;
    }
    Ok(out)
}

fn compare_eigen(a: &BlockEigen, b: &BlockEigen, tol: f64) -> Ordering {
    if a.re < b.re - tol {
        Ordering::Less
    } else if a.re > b.re + tol {
        Ordering::Greater
    } else if a.im < b.im - tol {
        Ordering::Less
    } else if a.im > b.im + tol {
        Ordering::Greater
    } else {
        Ordering::Equal
    }
}

/// Ordered real Schur form of `a`: blocks by ascending real part, then
/// ascending imaginary magnitude, then original Schur order.
pub fn real_block_form(a: &DMatrix<f64>) -> Result<RealBlockBasis> {
    let basis = schur_blocks(a)?;
    let eig = basis.eigenvalues();
    let tol = 1e-9 * (1.0 + a.norm());
    let mut order: Vec<usize> = (0..basis.k()).collect();
    order.sort_by(|&i, &j| compare_eigen(&eig[i], &eig[j], tol));
    reorder_blocks(&basis, &order)
}

/// Unordered real Schur form, as produced by the QR iteration.
pub fn real_schur(a: &DMatrix<f64>) -> Result<RealBlockBasis> {
    schur_blocks(a)
}

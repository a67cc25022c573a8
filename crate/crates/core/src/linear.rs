//! Linear flows `dΦ = A Φ dX` and their two-factor decomposition
//! `Φ = η ψ` along the Cartesian splitting `R^k × R^ℓ`.
//!
//! ```text
//! η = [[G1, G2], [0, I]]      ψ = [[I, 0], [F3, F4]]
//! ```
//!
//! The four blocks solve the coupled quadratic system
//!
//! ```text
//! dG1 = (A1 G1 − G2 A3 G1) dX
//! dG2 = (A1 G2 + A2 − G2 A4 − G2 A3 G2) dX
//! dF3 = (A3 G1 + A3 G2 F3 + A4 F3) dX
//! dF4 = (A3 G2 F4 + A4 F4) dX
//! ```
//!
//! which can leave every compact set in finite time (the rotation generator
//! does so when `X` reaches `±π/2`). When `A3 = 0` the system is linear and
//! triangular, and no explosion occurs.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rde::{BlowUp, BLOWUP_NORM};
use crate::rough_path::RoughPath;

/// Default explosion threshold on the largest absolute factor entry.
pub const DEFAULT_THRESHOLD: f64 = 1e6;

/// `ψ` counts as singular once the 1-norm condition estimate of `F4` exceeds this.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Sampled matrix path `Φ_{t_n}` on a prefix of a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFlowPath {
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    pub blowup: Option<BlowUp>,
}

impl LinearFlowPath {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn last(&self) -> &DMatrix<f64> {
        self.matrices.last().unwrap()
    }
}

fn check_coefficients(mats: &[DMatrix<f64>], rp: &RoughPath) -> Result<usize> {
    if mats.len() != rp.dim() {
        return Err(Error::DimensionMismatch {
            what: "coefficient matrices per driving component",
            expected: rp.dim(),
            found: mats.len(),
        });
    }
    let m = mats[0].nrows();
    for a in mats {
        if a.nrows() != m || a.ncols() != m {
            return Err(Error::DimensionMismatch {
                what: "square coefficient matrix",
                expected: m,
                found: a.ncols(),
            });
        }
    }
    if m == 0 {
        return Err(Error::InvalidParameter("coefficient matrices are empty".into()));
    }
    Ok(m)
}

/// Davie scheme for `dΦ = Σ_i A_i Φ dX^i`, `Φ_0 = I`:
/// `Φ ← (I + Σ_i A_i X^i + Σ_{i,j} A_i A_j 𝕏^{ji}) Φ`.
pub fn solve_linear_flow(mats: &[DMatrix<f64>], rp: &RoughPath) -> Result<LinearFlowPath> {
    let m = check_coefficients(mats, rp)?;
    let products: Vec<Vec<DMatrix<f64>>> = mats.iter().map(|ai| mats.iter().map(|aj| ai * aj).collect()).collect();
    let t = rp.grid().points();
    let mut times = vec![0.0];
    let mut matrices = vec![DMatrix::identity(m, m)];
    let mut blowup = None;
    for n in 0..rp.grid().steps() {
        let xinc = rp.step_increment(n);
        let area = rp.step_area(n);
        let mut step = DMatrix::identity(m, m);
        for (i, ai) in mats.iter().enumerate() {
            step += ai * xinc[i];
            for (j, p) in products[i].iter().enumerate() {
                step += p * area[(j, i)];
            }
        }
        let next = step * matrices.last().unwrap();
        if !next.iter().all(|v| v.is_finite()) || next.norm() > BLOWUP_NORM {
            blowup = Some(BlowUp {
                index: n + 1,
                time: t[n + 1],
            });
            break;
        }
        matrices.push(next);
        times.push(t[n + 1]);
    }
    Ok(LinearFlowPath { times, matrices, blowup })
}

/// Split `R^m = R^k × R^ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub k: usize,
    pub ell: usize,
}

impl BlockPartition {
    pub fn new(k: usize, ell: usize) -> Result<Self> {
        if k == 0 || ell == 0 {
            return Err(Error::InvalidParameter(format!(
                "both blocks must be non-empty, got k = {k}, ell = {ell}"
            )));
        }
        Ok(Self { k, ell })
    }

    pub fn dim(&self) -> usize {
        self.k + self.ell
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplosionCause {
    /// Some factor entry exceeded the threshold.
    Magnitude,
    /// `F4` (hence `ψ`) became numerically singular.
    Conditioning,
}

/// Numerical surrogate for the explosion time of the decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplosionReport {
    pub exploded: bool,
    pub first_index: Option<usize>,
    pub time: Option<f64>,
    pub cause: Option<ExplosionCause>,
    pub threshold: f64,
}

impl ExplosionReport {
    pub fn none(threshold: f64) -> Self {
        Self {
            exploded: false,
            first_index: None,
            time: None,
            cause: None,
            threshold,
        }
    }
}

/// The factor paths `η`, `ψ` with `Φ = η ψ`, truncated before any explosion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionPair {
    pub partition: BlockPartition,
    pub times: Vec<f64>,
    pub eta: Vec<DMatrix<f64>>,
    pub psi: Vec<DMatrix<f64>>,
    pub explosion: ExplosionReport,
}

impl DecompositionPair {
    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn product(&self, n: usize) -> DMatrix<f64> {
        &self.eta[n] * &self.psi[n]
    }

    /// `G1`, `G2` blocks of `η_n` and `F3`, `F4` blocks of `ψ_n`.
    pub fn blocks(&self, n: usize) -> [DMatrix<f64>; 4] {
        let (k, l) = (self.partition.k, self.partition.ell);
        [
            self.eta[n].view((0, 0), (k, k)).into_owned(),
            self.eta[n].view((0, k), (k, l)).into_owned(),
            self.psi[n].view((k, 0), (l, k)).into_owned(),
            self.psi[n].view((k, k), (l, l)).into_owned(),
        ]
    }
}

#[derive(Debug, Clone)]
struct Blocks {
    g1: DMatrix<f64>,
    g2: DMatrix<f64>,
    f3: DMatrix<f64>,
    f4: DMatrix<f64>,
}

impl Add for &Blocks {
    type Output = Blocks;
    fn add(self, o: &Blocks) -> Blocks {
        Blocks {
            g1: &self.g1 + &o.g1,
            g2: &self.g2 + &o.g2,
            f3: &self.f3 + &o.f3,
            f4: &self.f4 + &o.f4,
        }
    }
}

impl Mul<f64> for &Blocks {
    type Output = Blocks;
    fn mul(self, c: f64) -> Blocks {
        Blocks {
            g1: &self.g1 * c,
            g2: &self.g2 * c,
            f3: &self.f3 * c,
            f4: &self.f4 * c,
        }
    }
}

impl Blocks {
    fn max_abs(&self) -> f64 {
        [&self.g1, &self.g2, &self.f3, &self.f4]
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |a, v| if v.is_finite() { a.max(v.abs()) } else { f64::INFINITY })
    }
}

struct Coefficients {
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
    a3: DMatrix<f64>,
    a4: DMatrix<f64>,
}

impl Coefficients {
    fn split(a: &DMatrix<f64>, p: BlockPartition) -> Self {
        let (k, l) = (p.k, p.ell);
        Self {
            a1: a.view((0, 0), (k, k)).into_owned(),
            a2: a.view((0, k), (k, l)).into_owned(),
            a3: a.view((k, 0), (l, k)).into_owned(),
            a4: a.view((k, k), (l, l)).into_owned(),
        }
    }

    fn field(&self, s: &Blocks) -> Blocks {
        let a3g1 = &self.a3 * &s.g1;
        let a3g2 = &self.a3 * &s.g2;
        Blocks {
            g1: &self.a1 * &s.g1 - &s.g2 * &a3g1,
            g2: &self.a1 * &s.g2 + &self.a2 - &s.g2 * &self.a4 - &s.g2 * &a3g2,
            f3: a3g1 + &a3g2 * &s.f3 + &self.a4 * &s.f3,
            f4: &a3g2 * &s.f4 + &self.a4 * &s.f4,
        }
    }

    /// Directional derivative of `field` at `s` along `v`.
    fn field_derivative(&self, s: &Blocks, v: &Blocks) -> Blocks {
        let a3 = &self.a3;
        Blocks {
            g1: &self.a1 * &v.g1 - &v.g2 * (a3 * &s.g1) - &s.g2 * (a3 * &v.g1),
            g2: &self.a1 * &v.g2 - &v.g2 * &self.a4 - &v.g2 * (a3 * &s.g2) - &s.g2 * (a3 * &v.g2),
            f3: a3 * &v.g1 + a3 * &v.g2 * &s.f3 + a3 * &s.g2 * &v.f3 + &self.a4 * &v.f3,
            f4: a3 * &v.g2 * &s.f4 + a3 * &s.g2 * &v.f4 + &self.a4 * &v.f4,
        }
    }
}

fn condition_1norm(m: &DMatrix<f64>) -> f64 {
    let norm1 = |x: &DMatrix<f64>| x.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    match m.clone().try_inverse() {
        Some(inv) => norm1(m) * norm1(&inv),
        None => f64::INFINITY,
    }
}

fn assemble(s: &Blocks, p: BlockPartition) -> (DMatrix<f64>, DMatrix<f64>) {
    let (k, l) = (p.k, p.ell);
    let m = k + l;
    let mut eta = DMatrix::identity(m, m);
    eta.view_mut((0, 0), (k, k)).copy_from(&s.g1);
    eta.view_mut((0, k), (k, l)).copy_from(&s.g2);
    let mut psi = DMatrix::identity(m, m);
    psi.view_mut((k, 0), (l, k)).copy_from(&s.f3);
    psi.view_mut((k, k), (l, l)).copy_from(&s.f4);
    (eta, psi)
}

/// Co-evolve `(G1, G2, F3, F4)` with the Davie step on the stacked system.
///
/// Stops at the first step where a factor entry exceeds `threshold` or `F4`
/// becomes numerically singular; that is recorded, not returned as an error.
pub fn decompose_blocks(
    a: &DMatrix<f64>,
    partition: BlockPartition,
    rp: &RoughPath,
    threshold: f64,
) -> Result<DecompositionPair> {
    if rp.dim() != 1 {
        return Err(Error::InvalidParameter(format!(
            "block decomposition needs a one-dimensional driver, got d = {}",
            rp.dim()
        )));
    }
    if a.nrows() != partition.dim() || a.ncols() != partition.dim() {
        return Err(Error::DimensionMismatch {
            what: "coefficient matrix vs partition",
            expected: partition.dim(),
            found: a.nrows(),
        });
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be positive, got {threshold}")));
    }
    let (k, l) = (partition.k, partition.ell);
    let coef = Coefficients::split(a, partition);
    let mut state = Blocks {
        g1: DMatrix::identity(k, k),
        g2: DMatrix::zeros(k, l),
        f3: DMatrix::zeros(l, k),
        f4: DMatrix::identity(l, l),
    };
    let t = rp.grid().points();
    let (eta0, psi0) = assemble(&state, partition);
    let mut pair = DecompositionPair {
        partition,
        times: vec![0.0],
        eta: vec![eta0],
        psi: vec![psi0],
        explosion: ExplosionReport::none(threshold),
    };
    for n in 0..rp.grid().steps() {
        let x = rp.step_increment(n)[0];
        let xx = rp.step_area(n)[(0, 0)];
        let f = coef.field(&state);
        let df = coef.field_derivative(&state, &f);
        let next = &(&state + &(&f * x)) + &(&df * xx);

        let cause = if next.max_abs() > threshold {
            Some(ExplosionCause::Magnitude)
        } else if condition_1norm(&next.f4) > CONDITION_LIMIT {
            Some(ExplosionCause::Conditioning)
        } else {
            None
        };
        if let Some(cause) = cause {
            pair.explosion = ExplosionReport {
                exploded: true,
                first_index: Some(n + 1),
                time: Some(t[n + 1]),
                cause: Some(cause),
                threshold,
            };
            break;
        }
        let (eta, psi) = assemble(&next, partition);
        pair.eta.push(eta);
        pair.psi.push(psi);
        pair.times.push(t[n + 1]);
        state = next;
    }
    Ok(pair)
}

/// `max_n ‖η_n ψ_n − Φ_n‖_F` over the samples the pair holds.
pub fn recompose(pair: &DecompositionPair, reference: &LinearFlowPath) -> Result<f64> {
    if reference.len() < pair.len() || reference.times[..pair.len()] != pair.times[..] {
        return Err(Error::InvalidGrid("decomposition and reference flow use different grids".into()));
    }
    Ok((0..pair.len())
        .map(|n| (pair.product(n) - &reference.matrices[n]).norm())
        .fold(0.0, f64::max))
}

pub fn detect_explosion(pair: &DecompositionPair) -> ExplosionReport {
    pair.explosion.clone()
}

fn is_singular_angle(x: f64) -> bool {
    x.cos().abs() < 1e-12
}

/// Closed-form factors of the rotation flow for `X` values:
/// `η = [[sec X, −tan X], [0, 1]]`, `ψ = [[1, 0], [sin X, cos X]]`.
///
/// Fails at the first sample where `cos X` vanishes.
pub fn rotation_oracle(xs: &[f64]) -> Result<DecompositionPair> {
    let mut eta = Vec::with_capacity(xs.len());
    let mut psi = Vec::with_capacity(xs.len());
    for (index, &x) in xs.iter().enumerate() {
        if is_singular_angle(x) {
            return Err(Error::Singular { index, x });
        }
        let (s, c) = x.sin_cos();
        eta.push(DMatrix::from_row_slice(2, 2, &[1.0 / c, -s / c, 0.0, 1.0]));
        psi.push(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, s, c]));
    }
    Ok(DecompositionPair {
        partition: BlockPartition { k: 1, ell: 1 },
        times: xs.to_vec(),
        eta,
        psi,
        explosion: ExplosionReport::none(f64::INFINITY),
    })
}

/// The first `|X| = π/2 + nπ` crossing along a sampled driver, if any.
pub fn rotation_explosion_time(times: &[f64], xs: &[f64]) -> Option<f64> {
    let band = |x: f64| ((x + FRAC_PI_2) / std::f64::consts::PI).floor();
    xs.windows(2)
        .zip(times.windows(2))
        .find(|(w, _)| band(w[0]) != band(w[1]) || is_singular_angle(w[1]))
        .map(|(_, t)| t[1])
}

/// True iff `η = [[·, ·], [0, I]]` and `ψ = [[I, 0], [·, ·]]` exactly at every sample.
pub fn check_linearity_structure(pair: &DecompositionPair) -> bool {
    let (k, l) = (pair.partition.k, pair.partition.ell);
    let exact = |m: &DMatrix<f64>, r: usize, c: usize, nr: usize, nc: usize, ident: bool| {
        (0..nr).all(|i| (0..nc).all(|j| m[(r + i, c + j)] == if ident && i == j { 1.0 } else { 0.0 }))
    };
    pair.eta.len() == pair.psi.len()
        && pair.eta.iter().chain(&pair.psi).all(|m| m.nrows() == k + l && m.ncols() == k + l)
        && pair.eta.iter().all(|e| exact(e, k, 0, l, k, false) && exact(e, k, k, l, l, true))
        && pair.psi.iter().all(|p| exact(p, 0, 0, k, k, true) && exact(p, 0, k, k, l, false))
}

/// Apply a constant change of basis to a flow: `P^{-1} Φ P`.
pub fn conjugate_path(path: &LinearFlowPath, p: &DMatrix<f64>) -> Result<LinearFlowPath> {
    let pinv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("change of basis is singular".into()))?;
    Ok(LinearFlowPath {
        times: path.times.clone(),
        matrices: path.matrices.iter().map(|m| &pinv * m * p).collect(),
        blowup: path.blowup,
    })
}

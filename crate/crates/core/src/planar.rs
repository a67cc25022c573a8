//! Planar nonlinear decomposition `φ_t = η_t ∘ ψ_t` along the Cartesian
//! foliations `Δ¹ = span(e₁)`, `Δ² = span(e₂)`.
//!
//! `η`, `ψ` and `φ` are sampled on a fixed rectangular grid of labels `x`.
//! `η` only moves the first coordinate, so its state is `η₁` on the labels
//! and `η₂ = x₂` is never written. Splitting `F(y) = a(y) e₁ + b(y) Dη e₂`
//! at `y = η(x)` gives
//!
//! ```text
//! dη₁(x) = A(x) dX,   A = F₁(η) − F₂(η) ∂₂η₁,
//! A' = (∂₁F₁(η) − ∂₂η₁ ∂₁F₂(η)) A − F₂(η) ∂₂A,
//! ```
//!
//! stepped as `η₁ ← η₁ + A X_{st} + A' 𝕏_{st}` with `∂₂` taken by central
//! differences on the grid. `φ` is stepped per label and `ψ = η^{-1} ∘ φ` is
//! recovered by row-wise inversion at snapshot times.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rde::VectorFieldSet;
use crate::rough_path::RoughPath;

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// The rectangle with `fraction` of each side removed on both ends.
    pub fn shrink(&self, fraction: f64) -> Self {
        let (dx, dy) = (fraction * self.width(), fraction * self.height());
        Self {
            x_min: self.x_min + dx,
            x_max: self.x_max - dx,
            y_min: self.y_min + dy,
            y_max: self.y_max - dy,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

/// A map of the plane sampled at the labels of a uniform grid, interpolated
/// bilinearly. Index `(a, b)` is column `a` (first coordinate), row `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffeoGrid {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<[f64; 2]>,
}

impl DiffeoGrid {
    pub fn identity(rect: Rect, nx: usize, ny: usize) -> Result<Self> {
        Self::from_fn(rect, nx, ny, |x| x)
    }

    pub fn from_fn<F: Fn([f64; 2]) -> [f64; 2]>(rect: Rect, nx: usize, ny: usize, f: F) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidParameter(format!("grid needs at least 3×3 labels, got {nx}×{ny}")));
        }
        if !(rect.width() > 0.0 && rect.height() > 0.0) {
            return Err(Error::InvalidParameter("rectangle must have positive area".into()));
        }
        let mut g = Self {
            rect,
            nx,
            ny,
            values: Vec::with_capacity(nx * ny),
        };
        for b in 0..ny {
            for a in 0..nx {
                let x = g.label(a, b);
                g.values.push(f(x));
            }
        }
        Ok(g)
    }

    pub fn dx(&self) -> f64 {
        self.rect.width() / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.rect.height() / (self.ny - 1) as f64
    }

    pub fn label(&self, a: usize, b: usize) -> [f64; 2] {
        [self.rect.x_min + a as f64 * self.dx(), self.rect.y_min + b as f64 * self.dy()]
    }

    pub fn value(&self, a: usize, b: usize) -> [f64; 2] {
        self.values[b * self.nx + a]
    }

    /// Cell containing `p` and the local coordinates in it.
    fn locate(&self, p: [f64; 2]) -> Result<(usize, usize, f64, f64)> {
        let slack = 1e-12 * (self.rect.width() + self.rect.height());
        if !(p[0] >= self.rect.x_min - slack
            && p[0] <= self.rect.x_max + slack
            && p[1] >= self.rect.y_min - slack
            && p[1] <= self.rect.y_max + slack)
        {
            return Err(Error::OutOfDomain { point: p.to_vec() });
        }
        let fx = ((p[0] - self.rect.x_min) / self.dx()).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p[1] - self.rect.y_min) / self.dy()).clamp(0.0, (self.ny - 1) as f64);
        let a = (fx.floor() as usize).min(self.nx - 2);
        let b = (fy.floor() as usize).min(self.ny - 2);
        Ok((a, b, fx - a as f64, fy - b as f64))
    }

    /// Bilinear interpolation.
    pub fn eval(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let (a, b, u, v) = self.locate(p)?;
        let (p00, p10, p01, p11) = (self.value(a, b), self.value(a + 1, b), self.value(a, b + 1), self.value(a + 1, b + 1));
        let mix = |k: usize| (1.0 - v) * ((1.0 - u) * p00[k] + u * p10[k]) + v * ((1.0 - u) * p01[k] + u * p11[k]);
        Ok([mix(0), mix(1)])
    }

    /// Central-difference Jacobian at a label (one-sided on the boundary).
    pub fn jacobian(&self, a: usize, b: usize) -> DMatrix<f64> {
        let (a0, a1) = (a.saturating_sub(1), (a + 1).min(self.nx - 1));
        let (b0, b1) = (b.saturating_sub(1), (b + 1).min(self.ny - 1));
        let hx = (a1 - a0) as f64 * self.dx();
        let hy = (b1 - b0) as f64 * self.dy();
        let (xp, xm, yp, ym) = (self.value(a1, b), self.value(a0, b), self.value(a, b1), self.value(a, b0));
        DMatrix::from_row_slice(2, 2, &[
            (xp[0] - xm[0]) / hx,
            (yp[0] - ym[0]) / hy,
            (xp[1] - xm[1]) / hx,
            (yp[1] - ym[1]) / hy,
        ])
    }

    /// Labels lying in `region`.
    pub fn labels_in(&self, region: &Rect) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for b in 0..self.ny {
            for a in 0..self.nx {
                if region.contains(self.label(a, b)) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// `η^{-1}(p)` for a map that moves only the first coordinate.
///
/// The row of `η₁` at height `p₂` is interpolated linearly between grid rows,
/// which makes it piecewise linear in `x₁`; the crossing with `p₁` is located
/// by binary search and solved exactly on its segment.
pub fn invert_horizontal_diffeo(eta: &DiffeoGrid, p: [f64; 2]) -> Result<[f64; 2]> {
    if !(p[1] >= eta.rect.y_min && p[1] <= eta.rect.y_max) {
        return Err(Error::OutOfDomain { point: p.to_vec() });
    }
    let fy = ((p[1] - eta.rect.y_min) / eta.dy()).clamp(0.0, (eta.ny - 1) as f64);
    let b = (fy.floor() as usize).min(eta.ny - 2);
    let v = fy - b as f64;
    let row = |a: usize| (1.0 - v) * eta.value(a, b)[0] + v * eta.value(a, b + 1)[0];
    for a in 0..eta.nx - 1 {
        if !(row(a + 1) > row(a)) {
            return Err(Error::TransversalityLost(format!(
                "η₁ is not increasing along the row at x₂ = {} between columns {a} and {}",
                p[1],
                a + 1
            )));
        }
    }
    if !(p[0] >= row(0) && p[0] <= row(eta.nx - 1)) {
        return Err(Error::OutOfDomain { point: p.to_vec() });
    }
    let (mut lo, mut hi) = (0usize, eta.nx - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if row(mid) <= p[0] {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (r0, r1) = (row(lo), row(lo + 1));
    let x1 = eta.label(lo, 0)[0] + eta.dx() * (p[0] - r0) / (r1 - r0);
    Ok([x1, p[1]])
}

/// Decompose `F(x)·e_c = a e₁ + b Dη(η^{-1}(x)) e₂` and return `(a, b)`.
pub fn split_vector_field(vf: &VectorFieldSet, eta: &DiffeoGrid, x: [f64; 2], driver_component: usize) -> Result<(f64, f64)> {
    if vf.state_dim() != 2 || driver_component >= vf.driver_dim() {
        return Err(Error::InvalidParameter(format!(
            "need a planar field and a driver component below {}",
            vf.driver_dim()
        )));
    }
    let pre = invert_horizontal_diffeo(eta, x)?;
    // Dη e₂ at η^{-1}(x), by differencing the bilinear interpolant across rows.
    let h = 0.5 * eta.dy();
    let (lo, hi) = ([pre[0], (pre[1] - h).max(eta.rect.y_min)], [pre[0], (pre[1] + h).min(eta.rect.y_max)]);
    let (elo, ehi) = (eta.eval(lo)?, eta.eval(hi)?);
    let span = hi[1] - lo[1];
    let col = [(ehi[0] - elo[0]) / span, (ehi[1] - elo[1]) / span];
    let f = vf.eval(&DVector::from_column_slice(&x));
    let (f1, f2) = (f[(0, driver_component)], f[(1, driver_component)]);
    let det = col[1];
    if det.abs() < 1e-8 {
        return Err(Error::TransversalityLost(format!(
            "η pushes Δ² onto Δ¹ at {x:?} (determinant {det:e})"
        )));
    }
    let b = f2 / det;
    Ok((f1 - b * col[0], b))
}

/// Grid, snapshot and safety settings for [`evolve_decomposition`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    /// Fraction of each side excluded from the interior region.
    pub margin: f64,
    /// Largest admissible `|η₁|`.
    pub threshold: f64,
    /// Keep a snapshot every this many steps (the last step is always kept).
    pub snapshot_every: usize,
}

impl GridSpec {
    pub fn new(rect: Rect, nx: usize, ny: usize) -> Self {
        Self {
            rect,
            nx,
            ny,
            margin: 0.2,
            threshold: 1e6,
            snapshot_every: usize::MAX,
        }
    }

    pub fn interior(&self) -> Rect {
        self.rect.shrink(self.margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationCause {
    /// `η₁` exceeded the threshold or became non-finite.
    Explosion,
    /// A row of `η₁` stopped being increasing.
    TransversalityLost,
    /// An interior trajectory left the rectangle.
    DomainExit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub index: usize,
    pub time: f64,
    pub cause: TruncationCause,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub index: usize,
    pub time: f64,
    pub eta: DiffeoGrid,
    pub psi: DiffeoGrid,
    pub phi: DiffeoGrid,
    /// `φ_t` at the probe points, solved directly rather than interpolated.
    pub probe_phi: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarDecomposition {
    pub spec: GridSpec,
    pub probes: Vec<[f64; 2]>,
    pub snapshots: Vec<Snapshot>,
    pub truncation: Option<Truncation>,
}

impl PlanarDecomposition {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().unwrap()
    }
}

/// Fixed off-lattice probe points inside the interior, kept one cell away
/// from its edge so their interpolation stencils are interior labels.
pub fn probe_points(spec: &GridSpec) -> Vec<[f64; 2]> {
    let inner = spec.interior();
    let cell = (spec.rect.width() / (spec.nx - 1) as f64).max(spec.rect.height() / (spec.ny - 1) as f64);
    let region = Rect {
        x_min: inner.x_min + cell,
        x_max: inner.x_max - cell,
        y_min: inner.y_min + cell,
        y_max: inner.y_max - cell,
    };
    let k = 9;
    let mut out = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            // Irrational offsets keep the probes off every dyadic lattice.
            let u = (i as f64 + 0.5 + 0.1 * std::f64::consts::SQRT_2) / k as f64;
            let v = (j as f64 + 0.5 - 0.1 * std::f64::consts::E / 3.0) / k as f64;
            out.push([region.x_min + u * region.width(), region.y_min + v * region.height()]);
        }
    }
    out
}

fn step_point(vf: &VectorFieldSet, p: [f64; 2], x: f64, xx: f64) -> [f64; 2] {
    let y = DVector::from_column_slice(&p);
    let f = vf.eval(&y);
    let df = vf.jacobians(&y);
    let fc = f.column(0);
    let second = &df[0] * fc;
    [p[0] + fc[0] * x + second[0] * xx, p[1] + fc[1] * x + second[1] * xx]
}

/// Derivative along the second label coordinate (central, one-sided on the edges).
fn d2(field: &[f64], nx: usize, ny: usize, dy: f64, a: usize, b: usize) -> f64 {
    let (b0, b1) = (b.saturating_sub(1), (b + 1).min(ny - 1));
    (field[b1 * nx + a] - field[b0 * nx + a]) / ((b1 - b0) as f64 * dy)
}

fn eta_grid(spec: &GridSpec, eta1: &[f64]) -> DiffeoGrid {
    let mut g = DiffeoGrid::identity(spec.rect, spec.nx, spec.ny).expect("validated spec");
    for (v, e) in g.values.iter_mut().zip(eta1) {
        v[0] = *e;
    }
    g
}

fn psi_grid(eta: &DiffeoGrid, phi: &DiffeoGrid) -> DiffeoGrid {
    let mut psi = phi.clone();
    psi.values.par_iter_mut().for_each(|v| {
        *v = invert_horizontal_diffeo(eta, *v).unwrap_or([f64::NAN, f64::NAN]);
    });
    psi
}

/// Evolve `η` by its own equation and `φ` per label, and recover `ψ`.
///
/// Stops early (recording why) when `η` explodes, a row of `η₁` stops being
/// increasing, or `φ` carries an interior label out of the rectangle.
pub fn evolve_decomposition(vf: &VectorFieldSet, rp: &RoughPath, spec: GridSpec) -> Result<PlanarDecomposition> {
    if rp.dim() != 1 || vf.driver_dim() != 1 || vf.state_dim() != 2 {
        return Err(Error::InvalidParameter(
            "planar decomposition needs a planar field and a one-dimensional driver".into(),
        ));
    }
    if !(0.0..0.5).contains(&spec.margin) || spec.snapshot_every == 0 || !(spec.threshold > 0.0) {
        return Err(Error::InvalidParameter("margin must lie in [0, 0.5), cadence >= 1, threshold > 0".into()));
    }
    let ident = DiffeoGrid::identity(spec.rect, spec.nx, spec.ny)?;
    let (nx, ny, dy) = (spec.nx, spec.ny, ident.dy());
    let interior = spec.interior();
    let interior_idx: Vec<usize> = ident.labels_in(&interior).iter().map(|&(a, b)| b * nx + a).collect();
    let probes = probe_points(&spec);

    let mut eta1: Vec<f64> = ident.values.iter().map(|v| v[0]).collect();
    let mut phi = ident.clone();
    let mut probe_phi = probes.clone();
    let t = rp.grid().points();

    let snap = |index: usize, eta1: &[f64], phi: &DiffeoGrid, probe_phi: &[[f64; 2]]| {
        let eta = eta_grid(&spec, eta1);
        let psi = psi_grid(&eta, phi);
        Snapshot {
            index,
            time: t[index],
            eta,
            psi,
            phi: phi.clone(),
            probe_phi: probe_phi.to_vec(),
        }
    };
    let mut snapshots = vec![snap(0, &eta1, &phi, &probe_phi)];
    let mut truncation = None;
    let steps = rp.grid().steps();

    for n in 0..steps {
        let x = rp.step_increment(n)[0];
        let xx = rp.step_area(n)[(0, 0)];

        // A(x) and the pieces of A' that do not need ∂₂A.
        let pieces: Vec<(f64, f64, f64)> = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let (a, b) = (idx % nx, idx / nx);
                let y = DVector::from_column_slice(&[eta1[idx], ident.values[idx][1]]);
                let f = vf.eval(&y);
                let df = &vf.jacobians(&y)[0];
                let s = d2(&eta1, nx, ny, dy, a, b);
                let big_a = f[(0, 0)] - f[(1, 0)] * s;
                let coef = df[(0, 0)] - s * df[(1, 0)];
                (big_a, coef, f[(1, 0)])
            })
            .collect();
        let field_a: Vec<f64> = pieces.iter().map(|p| p.0).collect();
        let next_eta1: Vec<f64> = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let (a, b) = (idx % nx, idx / nx);
                let (big_a, coef, f2) = pieces[idx];
                let prime = coef * big_a - f2 * d2(&field_a, nx, ny, dy, a, b);
                eta1[idx] + big_a * x + prime * xx
            })
            .collect();
        let next_phi: Vec<[f64; 2]> = phi.values.par_iter().map(|&p| step_point(vf, p, x, xx)).collect();
        let next_probe: Vec<[f64; 2]> = probe_phi.iter().map(|&p| step_point(vf, p, x, xx)).collect();

        let check = || -> Option<(TruncationCause, String)> {
            if let Some(v) = next_eta1.iter().find(|v| !(v.abs() <= spec.threshold)) {
                return Some((TruncationCause::Explosion, format!("|η₁| reached {v:e}")));
            }
            for b in 0..ny {
                for a in 0..nx - 1 {
                    if !(next_eta1[b * nx + a + 1] > next_eta1[b * nx + a]) {
                        return Some((
                            TruncationCause::TransversalityLost,
                            format!("η₁ not increasing in row {b} at column {a}"),
                        ));
                    }
                }
            }
            if let Some(&idx) = interior_idx.iter().find(|&&i| !spec.rect.contains(next_phi[i])) {
                return Some((
                    TruncationCause::DomainExit,
                    format!("φ carried label {:?} outside the rectangle", ident.values[idx]),
                ));
            }
            None
        };
        if let Some((cause, detail)) = check() {
            truncation = Some(Truncation {
                index: n + 1,
                time: t[n + 1],
                cause,
                detail,
            });
            break;
        }
        eta1 = next_eta1;
        phi.values = next_phi;
        probe_phi = next_probe;
        if (n + 1) % spec.snapshot_every == 0 || n + 1 == steps {
            snapshots.push(snap(n + 1, &eta1, &phi, &probe_phi));
        }
    }
    if let Some(tr) = &truncation {
        let last = tr.index - 1;
        if snapshots.last().unwrap().index != last {
            snapshots.push(snap(last, &eta1, &phi, &probe_phi));
        }
    }
    Ok(PlanarDecomposition {
        spec,
        probes,
        snapshots,
        truncation,
    })
}

/// Residuals of the planar decomposition, maximized over snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarReport {
    /// `max ‖η_t(ψ_t(p)) − φ_t(p)‖` over the off-lattice probes, with `ψ` and
    /// `η` interpolated and `φ_t(p)` solved directly.
    pub recomposition: f64,
    /// The same residual at the interior labels themselves.
    pub recomposition_at_labels: f64,
    /// `max |η₂(x) − x₂|` over all labels.
    pub eta_second_drift: f64,
    /// `max |ψ₁(x) − x₁|` over interior labels.
    pub psi_first_drift: f64,
}

pub fn verify_planar_decomposition(dec: &PlanarDecomposition) -> Result<PlanarReport> {
    let interior = dec.spec.interior();
    let mut rep = PlanarReport {
        recomposition: 0.0,
        recomposition_at_labels: 0.0,
        eta_second_drift: 0.0,
        psi_first_drift: 0.0,
    };
    let dist = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
    for s in &dec.snapshots {
        for b in 0..s.eta.ny {
            for a in 0..s.eta.nx {
                let x = s.eta.label(a, b);
                rep.eta_second_drift = rep.eta_second_drift.max((s.eta.value(a, b)[1] - x[1]).abs());
            }
        }
        for (a, b) in s.eta.labels_in(&interior) {
            let x = s.eta.label(a, b);
            let psi = s.psi.value(a, b);
            if !psi.iter().all(|v| v.is_finite()) {
                return Err(Error::OutOfDomain { point: x.to_vec() });
            }
            rep.psi_first_drift = rep.psi_first_drift.max((psi[0] - x[0]).abs());
            let back = s.eta.eval(psi)?;
            rep.recomposition_at_labels = rep.recomposition_at_labels.max(dist(back, s.phi.value(a, b)));
        }
        for (p, phi_p) in dec.probes.iter().zip(&s.probe_phi) {
            let psi = s.psi.eval(*p)?;
            if !psi.iter().all(|v| v.is_finite()) {
                return Err(Error::OutOfDomain { point: p.to_vec() });
            }
            let back = s.eta.eval(psi)?;
            rep.recomposition = rep.recomposition.max(dist(back, *phi_p));
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rough_path::{time_path, TimeGrid};

    fn rotation() -> VectorFieldSet {
        VectorFieldSet::linear(vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])]).unwrap()
    }

    #[test]
    fn identity_inverse_and_shift() {
        let r = Rect::square(2.0);
        let id = DiffeoGrid::identity(r, 11, 11).unwrap();
        let p = [0.37, -1.21];
        let q = invert_horizontal_diffeo(&id, p).unwrap();
        assert!((q[0] - p[0]).abs() < 1e-15 && q[1] == p[1]);
        let shift = DiffeoGrid::from_fn(r, 11, 11, |x| [x[0] + 1.0, x[1]]).unwrap();
        let q = invert_horizontal_diffeo(&shift, p).unwrap();
        assert!((q[0] - (p[0] - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn non_monotone_row_is_transversality_loss() {
        let fold = DiffeoGrid::from_fn(Rect::square(1.0), 11, 11, |x| [x[0] * x[0], x[1]]).unwrap();
        assert!(matches!(invert_horizontal_diffeo(&fold, [0.5, 0.0]), Err(Error::TransversalityLost(_))));
    }

    #[test]
    fn split_identity_and_linear() {
        let r = Rect::square(2.0);
        let vf = rotation();
        let id = DiffeoGrid::identity(r, 41, 41).unwrap();
        let (a, b) = split_vector_field(&vf, &id, [1.0, 0.0], 0).unwrap();
        assert!(a.abs() < 1e-13 && (b - 1.0).abs() < 1e-13);
        let (a, b) = split_vector_field(&vf, &id, [0.3, 0.7], 0).unwrap();
        assert!((a + 0.7).abs() < 1e-13 && (b - 0.3).abs() < 1e-13);

        let th: f64 = 0.4;
        let (sec, tan) = (1.0 / th.cos(), th.tan());
        let eta = DiffeoGrid::from_fn(r, 41, 41, |x| [sec * x[0] - tan * x[1], x[1]]).unwrap();
        for p in [[0.2, 0.1], [-0.5, 0.9], [1.1, -0.3]] {
            let (a, b) = split_vector_field(&vf, &eta, p, 0).unwrap();
            // F = (-p2, p1) = a e1 + b (-tan, 1)
            assert!((b - p[0]).abs() < 1e-6);
            assert!((a - (-p[1] + p[0] * tan)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_field_stays_identity() {
        let rp = time_path(&TimeGrid::uniform(0.3, 30).unwrap(), 0.5).unwrap();
        let mut spec = GridSpec::new(Rect::square(2.0), 21, 21);
        spec.snapshot_every = 10;
        let dec = evolve_decomposition(&VectorFieldSet::zero(2, 1).unwrap(), &rp, spec).unwrap();
        assert_eq!(dec.snapshots.len(), 4);
        let rep = verify_planar_decomposition(&dec).unwrap();
        assert_eq!(rep.eta_second_drift, 0.0);
        assert!(rep.psi_first_drift < 1e-15);
        assert!(rep.recomposition < 1e-15);
    }

    #[test]
    fn rotation_matches_closed_form() {
        let t_final = 0.5;
        let rp = time_path(&TimeGrid::uniform(t_final, 500).unwrap(), 0.5).unwrap();
        let spec = GridSpec::new(Rect::square(2.0), 41, 41);
        let dec = evolve_decomposition(&rotation(), &rp, spec).unwrap();
        assert!(dec.truncation.is_none());
        let s = dec.last();
        let (sec, tan) = (1.0 / t_final.cos(), t_final.tan());
        for (a, b) in s.eta.labels_in(&spec.interior()) {
            let x = s.eta.label(a, b);
            assert!((s.eta.value(a, b)[0] - (sec * x[0] - tan * x[1])).abs() < 1e-4);
        }
        let rep = verify_planar_decomposition(&dec).unwrap();
        assert_eq!(rep.eta_second_drift, 0.0);
        assert!(rep.recomposition < 1e-2);
    }

    #[test]
    fn inverse_round_trip_on_rotation_run() {
        let rp = time_path(&TimeGrid::uniform(0.3, 120).unwrap(), 0.5).unwrap();
        let spec = GridSpec::new(Rect::square(2.0), 101, 101);
        let dec = evolve_decomposition(&rotation(), &rp, spec).unwrap();
        let eta = &dec.last().eta;
        for p in &dec.probes {
            let q = invert_horizontal_diffeo(eta, *p).unwrap();
            let back = eta.eval(q).unwrap();
            assert!((back[0] - p[0]).abs() < 1e-8 && (back[1] - p[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn rotation_truncates_near_half_pi() {
        let rp = time_path(&TimeGrid::uniform(2.0, 4000).unwrap(), 0.5).unwrap();
        let spec = GridSpec::new(Rect::square(2.0), 21, 21);
        let dec = evolve_decomposition(&rotation(), &rp, spec).unwrap();
        let tr = dec.truncation.unwrap();
        assert!((tr.time - std::f64::consts::FRAC_PI_2).abs() < 0.05, "{tr:?}");
    }
}

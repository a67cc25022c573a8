//! Level-2 rough paths sampled on a time grid.
//!
//! A [`RoughPath`] stores the first level `X` at every grid point and the
//! second level `𝕏` only for adjacent grid pairs. Every other pair is
//! reconstructed by Chen composition,
//!
//! ```text
//! 𝕏_{su} + 𝕏_{ut} + X_{su} ⊗ X_{ut} = 𝕏_{st},
//! ```
//!
//! so the Chen relation is an algebraic identity of the representation and
//! memory is linear in the number of grid points.
//!
//! Tensor convention: `area[(i, j)] = ∫ X^i_{sr} dX^j_r`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::GaussianSampler;

/// Default number of fine sub-steps per coarse step for smooth lifts.
pub const DEFAULT_REFINEMENT: usize = 64;

/// Hölder exponent attached to Brownian lifts.
pub const BROWNIAN_ALPHA: f64 = 0.45;

/// Strictly increasing sample times starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.points
    }
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points[0] != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "first point must be 0, got {}",
                points[0]
            )));
        }
        for (k, w) in points.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "points not strictly increasing at index {}",
                    k + 1
                )));
            }
        }
        Ok(Self { points })
    }

    /// `steps` equal cells on `[0, t_final]`.
    pub fn uniform(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "final time must be positive and finite, got {t_final}"
            )));
        }
        let h = t_final / steps as f64;
        let mut points: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
        points[steps] = t_final;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; a grid has at least two points.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Subdivide every cell into `factor` equal sub-cells. Coarse points are
    /// carried over bit-for-bit.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter("refinement must be >= 1".into()));
        }
        let mut points = Vec::with_capacity(self.steps() * factor + 1);
        for w in self.points.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            points.push(w[0]);
            for k in 1..factor {
                points.push(w[0] + k as f64 * h);
            }
        }
        points.push(self.final_time());
        Self::new(points)
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            })
        } else {
            Ok(())
        }
    }

    pub(crate) fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i > j {
            return Err(Error::IndexOrder(format!("expected i <= j, got {i} > {j}")));
        }
        Ok(())
    }
}

/// Two-parameter data `(X_{ij}, 𝕏_{ij})` indexed by grid pairs.
///
/// Implemented by [`RoughPath`] (Chen holds by construction) and by
/// [`PairTable`] (arbitrary stored tensors, used to probe the Chen check).
pub trait SecondLevel {
    fn grid(&self) -> &TimeGrid;
    fn dim(&self) -> usize;
    fn increment(&self, i: usize, j: usize) -> Result<DVector<f64>>;
    fn area(&self, i: usize, j: usize) -> Result<DMatrix<f64>>;
}

/// `‖𝕏_{ij} − 𝕏_{iu} − 𝕏_{uj} − X_{iu} ⊗ X_{uj}‖_F`.
pub fn chen_defect<P: SecondLevel + ?Sized>(path: &P, i: usize, u: usize, j: usize) -> Result<f64> {
    path.grid().check_pair(i, u)?;
    path.grid().check_pair(u, j)?;
    let xiu = path.increment(i, u)?;
    let xuj = path.increment(u, j)?;
    let d = path.area(i, j)? - path.area(i, u)? - path.area(u, j)? - &xiu * xuj.transpose();
    Ok(d.norm())
}

/// `‖X_{ij} ⊗ X_{ij} − 2 Sym(𝕏_{ij})‖_F`.
pub fn geometricity_defect<P: SecondLevel + ?Sized>(path: &P, i: usize, j: usize) -> Result<f64> {
    path.grid().check_pair(i, j)?;
    let x = path.increment(i, j)?;
    let a = path.area(i, j)?;
    let d = &x * x.transpose() - (&a + a.transpose());
    Ok(d.norm())
}

/// Grid estimates of the Hölder seminorms `|X|_α` and `|𝕏|_{2α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub x_norm: f64,
    pub xx_norm: f64,
}

/// An α-Hölder rough path sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoughPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<DVector<f64>>,
    steps: Vec<DMatrix<f64>>,
    alpha: f64,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 / 3.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "Hölder exponent must lie in (1/3, 1/2], got {alpha}"
        )))
    }
}

impl RoughPath {
    /// Assemble a rough path from first-level samples and per-step second
    /// level tensors. Shapes are validated; the tensors themselves are not.
    pub fn from_parts(
        grid: TimeGrid,
        values: Vec<DVector<f64>>,
        steps: Vec<DMatrix<f64>>,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "rough path samples",
                expected: grid.len(),
                found: values.len(),
            });
        }
        if steps.len() != grid.steps() {
            return Err(Error::DimensionMismatch {
                what: "rough path step tensors",
                expected: grid.steps(),
                found: steps.len(),
            });
        }
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter("driving dimension must be >= 1".into()));
        }
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "rough path sample",
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        for s in &steps {
            if s.nrows() != dim || s.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    what: "step tensor",
                    expected: dim,
                    found: s.nrows().max(s.ncols()),
                });
            }
        }
        Ok(Self {
            grid,
            dim,
            values,
            steps,
            alpha,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Stored `𝕏_{t_i t_{i+1}}`.
    pub fn step_area(&self, i: usize) -> &DMatrix<f64> {
        &self.steps[i]
    }

    pub fn step_areas(&self) -> &[DMatrix<f64>] {
        &self.steps
    }

    /// `X_{t_i t_{i+1}}`.
    pub fn step_increment(&self, i: usize) -> DVector<f64> {
        &self.values[i + 1] - &self.values[i]
    }

    /// `𝕏_{t_i t_j}` by left-to-right Chen composition of the stored steps.
    pub fn second_level(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.grid.check_pair(i, j)?;
        let mut area = DMatrix::zeros(self.dim, self.dim);
        let mut inc = DVector::zeros(self.dim);
        for k in i..j {
            let dx = self.step_increment(k);
            area += &self.steps[k];
            area.ger(1.0, &inc, &dx, 1.0);
            inc += dx;
        }
        Ok(area)
    }

    pub fn chen_defect(&self, i: usize, u: usize, j: usize) -> Result<f64> {
        chen_defect(self, i, u, j)
    }

    pub fn geometricity_defect(&self, i: usize, j: usize) -> Result<f64> {
        geometricity_defect(self, i, j)
    }

    /// O(N²) scan over all grid pairs, parallel over the left endpoint.
    pub fn holder_norms(&self) -> HolderEstimate {
        let n = self.len();
        let alpha = self.alpha;
        let t = self.grid.points();
        let (x_norm, xx_norm) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut area = DMatrix::zeros(self.dim, self.dim);
                let mut inc = DVector::zeros(self.dim);
                let mut best = (0.0f64, 0.0f64);
                for j in i..n - 1 {
                    let dx = self.step_increment(j);
                    area += &self.steps[j];
                    area.ger(1.0, &inc, &dx, 1.0);
                    inc += dx;
                    let dt = t[j + 1] - t[i];
                    best.0 = best.0.max(inc.norm() / dt.powf(alpha));
                    best.1 = best.1.max(area.norm() / dt.powf(2.0 * alpha));
                }
                best
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        HolderEstimate { x_norm, xx_norm }
    }

    /// Sub-path on grid indices `[i, j]`, re-based to start at time 0.
    pub fn restrict(&self, i: usize, j: usize) -> Result<Self> {
        self.grid.check_pair(i, j)?;
        if i == j {
            return Err(Error::InvalidGrid("restriction needs at least one step".into()));
        }
        let t0 = self.grid.time(i);
        let points = self.grid.points()[i..=j].iter().map(|t| t - t0).collect();
        Self::from_parts(
            TimeGrid::new(points)?,
            self.values[i..=j].to_vec(),
            self.steps[i..j].to_vec(),
            self.alpha,
        )
    }
}

impl SecondLevel for RoughPath {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn increment(&self, i: usize, j: usize) -> Result<DVector<f64>> {
        self.grid.check_pair(i, j)?;
        Ok(&self.values[j] - &self.values[i])
    }

    fn area(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.second_level(i, j)
    }
}

/// Dense table of `𝕏_{ij}` for every `i ≤ j`, with no built-in consistency.
#[derive(Debug, Clone)]
pub struct PairTable {
    grid: TimeGrid,
    values: Vec<DVector<f64>>,
    areas: Vec<Vec<DMatrix<f64>>>,
}

impl PairTable {
    pub fn from_path<P: SecondLevel + ?Sized>(path: &P) -> Result<Self> {
        let n = path.grid().len();
        let mut values = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        for i in 0..n {
            values.push(path.increment(0, i)?);
            let row = (i..n).map(|j| path.area(i, j)).collect::<Result<Vec<_>>>()?;
            areas.push(row);
        }
        Ok(Self {
            grid: path.grid().clone(),
            values,
            areas,
        })
    }

    pub fn set_area(&mut self, i: usize, j: usize, area: DMatrix<f64>) -> Result<()> {
        self.grid.check_pair(i, j)?;
        self.areas[i][j - i] = area;
        Ok(())
    }
}

impl SecondLevel for PairTable {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.values[0].len()
    }

    fn increment(&self, i: usize, j: usize) -> Result<DVector<f64>> {
        self.grid.check_pair(i, j)?;
        Ok(&self.values[j] - &self.values[i])
    }

    fn area(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.grid.check_pair(i, j)?;
        Ok(self.areas[i][j - i].clone())
    }
}

/// Trapezoid lift of a sampled path.
///
/// On each fine sub-step `[a, b]` inside a coarse cell starting at `s`,
/// `∫_a^b X_{sr} ⊗ dX_r ≈ ½ (X_{sa} + X_{sb}) ⊗ X_{ab}`. This is the exact
/// signature of the piecewise-linear interpolant, so the result is geometric.
pub fn lift_smooth(
    fine_samples: &[(f64, DVector<f64>)],
    coarse: &TimeGrid,
    alpha: f64,
) -> Result<RoughPath> {
    check_alpha(alpha)?;
    if fine_samples.len() < 2 {
        return Err(Error::InvalidGrid("need at least two fine samples".into()));
    }
    let dim = fine_samples[0].1.len();
    for (_, x) in fine_samples {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "fine sample",
                expected: dim,
                found: x.len(),
            });
        }
    }
    let fine_times: Vec<f64> = fine_samples.iter().map(|(t, _)| *t).collect();
    TimeGrid::new(fine_times.clone())?;

    // Locate each coarse point in the fine grid.
    let scale = coarse.final_time().abs().max(1.0);
    let mut anchors = Vec::with_capacity(coarse.len());
    let mut cursor = 0;
    for &tc in coarse.points() {
        while cursor < fine_times.len() && fine_times[cursor] < tc - 1e-12 * scale {
            cursor += 1;
        }
        if cursor == fine_times.len() || (fine_times[cursor] - tc).abs() > 1e-12 * scale {
            return Err(Error::NotRefinement(tc));
        }
        anchors.push(cursor);
    }
    if *anchors.last().unwrap() != fine_times.len() - 1 {
        return Err(Error::InvalidGrid(
            "fine samples extend beyond the coarse grid".into(),
        ));
    }

    let values = anchors.iter().map(|&k| fine_samples[k].1.clone()).collect();
    let steps = anchors
        .windows(2)
        .map(|w| {
            let origin = &fine_samples[w[0]].1;
            let mut area = DMatrix::zeros(dim, dim);
            for k in w[0]..w[1] {
                let xa = &fine_samples[k].1 - origin;
                let xb = &fine_samples[k + 1].1 - origin;
                let dx = &fine_samples[k + 1].1 - &fine_samples[k].1;
                area.ger(0.5, &(xa + xb), &dx, 1.0);
            }
            area
        })
        .collect();
    RoughPath::from_parts(coarse.clone(), values, steps, alpha)
}

/// Sample `path` on `coarse` refined by `refinement` and lift it.
pub fn lift_function<F>(path: F, coarse: &TimeGrid, refinement: usize, alpha: f64) -> Result<RoughPath>
where
    F: Fn(f64) -> DVector<f64>,
{
    let fine = coarse.refine(refinement)?;
    let samples: Vec<(f64, DVector<f64>)> = fine.points().iter().map(|&t| (t, path(t))).collect();
    lift_smooth(&samples, coarse, alpha)
}

/// The scalar rough path `X_t = t` with its geometric lift (`𝕏 = h²/2`).
pub fn time_path(grid: &TimeGrid, alpha: f64) -> Result<RoughPath> {
    let values = grid.points().iter().map(|&t| DVector::from_element(1, t)).collect();
    let steps = grid
        .points()
        .windows(2)
        .map(|w| DMatrix::from_element(1, 1, 0.5 * (w[1] - w[0]).powi(2)))
        .collect();
    RoughPath::from_parts(grid.clone(), values, steps, alpha)
}

/// Stratonovich (trapezoid) lift of a simulated Brownian path.
///
/// Gaussian increments of variance `Δt` are drawn on `grid` refined by
/// `refinement`, in time order and component order within each fine step.
pub fn lift_brownian(seed: u64, dim: usize, grid: &TimeGrid, refinement: usize) -> Result<RoughPath> {
    if dim == 0 {
        return Err(Error::InvalidParameter("driving dimension must be >= 1".into()));
    }
    let fine = grid.refine(refinement)?;
    let mut sampler = GaussianSampler::new(seed);
    let mut samples = Vec::with_capacity(fine.len());
    let mut x = DVector::zeros(dim);
    samples.push((0.0, x.clone()));
    for w in fine.points().windows(2) {
        let sd = (w[1] - w[0]).sqrt();
        for c in 0..dim {
            x[c] += sampler.normal(sd);
        }
        samples.push((w[1], x.clone()));
    }
    lift_smooth(&samples, grid, BROWNIAN_ALPHA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn parabola(grid: &TimeGrid) -> RoughPath {
        lift_function(|t| DVector::from_vec(vec![t, t * t]), grid, 64, 0.5).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.2]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        let g = TimeGrid::uniform(2.0, 4).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let r = g.refine(2).unwrap();
        assert_eq!(r.len(), 9);
        for (k, t) in g.points().iter().enumerate() {
            assert_eq!(r.time(2 * k), *t);
        }
    }

    #[test]
    fn diagonal_lookup_is_zero() {
        let rp = parabola(&TimeGrid::uniform(1.0, 8).unwrap());
        for i in 0..rp.len() {
            assert_eq!(rp.second_level(i, i).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn scalar_linear_path_area() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let rp = lift_function(|t| DVector::from_element(1, t), &grid, 64, 0.5).unwrap();
        for i in 0..rp.len() {
            for j in i..rp.len() {
                let dt = grid.time(j) - grid.time(i);
                assert_relative_eq!(rp.second_level(i, j).unwrap()[(0, 0)], dt * dt / 2.0, epsilon = 1e-14);
            }
        }
        for k in 0..grid.steps() {
            assert_relative_eq!(rp.step_area(k)[(0, 0)], 0.005, epsilon = 1e-12);
        }
    }

    #[test]
    fn parabola_iterated_integrals() {
        // ∫₀¹ r d(r²) = 2/3 and ∫₀¹ r² dr = 1/3.
        let rp = parabola(&TimeGrid::uniform(1.0, 16).unwrap());
        let a = rp.second_level(0, 16).unwrap();
        assert_relative_eq!(a[(0, 1)], 2.0 / 3.0, epsilon = 1e-5);
        assert_relative_eq!(a[(1, 0)], 1.0 / 3.0, epsilon = 1e-5);
    }

    #[test]
    fn bad_indices() {
        let rp = parabola(&TimeGrid::uniform(1.0, 4).unwrap());
        assert!(matches!(rp.second_level(0, 5), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(rp.second_level(3, 1), Err(Error::IndexOrder(_))));
        assert!(rp.chen_defect(0, 3, 2).is_err());
        assert!(rp.geometricity_defect(0, 9).is_err());
    }

    #[test]
    fn chen_holds_and_corruption_is_seen() {
        let rp = parabola(&TimeGrid::uniform(1.0, 6).unwrap());
        assert!(rp.chen_defect(1, 1, 4).unwrap() < 1e-15);
        assert!(rp.chen_defect(0, 2, 6).unwrap() < 1e-14);
        let mut table = PairTable::from_path(&rp).unwrap();
        assert!(chen_defect(&table, 1, 2, 3).unwrap() < 1e-15);
        let eps = 1e-3;
        let mut bumped = table.area(1, 2).unwrap();
        bumped[(0, 1)] += eps;
        table.set_area(1, 2, bumped).unwrap();
        let d = chen_defect(&table, 1, 2, 3).unwrap();
        assert_relative_eq!(d, eps, max_relative = 1e-9);
    }

    #[test]
    fn constant_path_lift() {
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let rp = lift_function(|_| DVector::from_vec(vec![3.0, -1.0]), &grid, 8, 0.4).unwrap();
        assert!(rp.step_areas().iter().all(|a| a.norm() == 0.0));
        let h = rp.holder_norms();
        assert_eq!((h.x_norm, h.xx_norm), (0.0, 0.0));
    }

    #[test]
    fn holder_norm_of_time() {
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let rp = time_path(&grid, 0.5).unwrap();
        let h = rp.holder_norms();
        assert_relative_eq!(h.x_norm, 1.0, epsilon = 1e-14);
        assert_relative_eq!(h.xx_norm, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn refinement_mismatch_rejected() {
        let coarse = TimeGrid::uniform(1.0, 3).unwrap();
        let fine = TimeGrid::uniform(1.0, 4).unwrap();
        let samples: Vec<_> = fine.points().iter().map(|&t| (t, DVector::from_element(1, t))).collect();
        assert!(matches!(lift_smooth(&samples, &coarse, 0.5), Err(Error::NotRefinement(_))));
        let mixed = vec![(0.0, DVector::from_element(1, 0.0)), (1.0, DVector::from_element(2, 0.0))];
        assert!(lift_smooth(&mixed, &TimeGrid::uniform(1.0, 1).unwrap(), 0.5).is_err());
    }

    #[test]
    fn alpha_range() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        assert!(time_path(&grid, 1.0 / 3.0).is_err());
        assert!(time_path(&grid, 0.51).is_err());
        assert!(time_path(&grid, 0.5).is_ok());
    }

    #[test]
    fn brownian_is_deterministic() {
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let a = lift_brownian(42, 2, &grid, 4).unwrap();
        let b = lift_brownian(42, 2, &grid, 4).unwrap();
        assert_eq!(a, b);
        let c = lift_brownian(43, 2, &grid, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn restrict_rebases_time() {
        let rp = parabola(&TimeGrid::uniform(1.0, 8).unwrap());
        let sub = rp.restrict(2, 6).unwrap();
        assert_eq!(sub.len(), 5);
        assert_eq!(sub.grid().time(0), 0.0);
        assert_eq!(sub.step_area(0), rp.step_area(2));
    }
}

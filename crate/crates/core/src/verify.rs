//! Numerical checks of the change-of-coordinates formula, the composition of
//! flows, the Itô–Wentzel formula and invariance of the unit sphere.
//!
//! Each verifier computes both sides of an identity with independent code
//! paths on the same grid and returns the sup-norm of the difference.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fd;
use crate::integral::ControlledPath;
use crate::rde::{solve_rde, solve_rde_segment, Trajectory, VectorFieldSet};
use crate::rough_path::RoughPath;

fn complete(tr: Trajectory) -> Result<Trajectory> {
    match tr.blowup() {
        Some(b) => Err(Error::StepFailure {
            time: b.time,
            index: b.index,
        }),
        None => Ok(tr),
    }
}

/// `sup_t |g(Z_t) − g(Z_0) − ∫_0^t Dg(Z_r) F(Z_r) dX_r|` for the solution `Z`
/// of `dZ = F(Z) dX` from `y0`.
pub fn verify_change_of_coords<G, DG>(g: G, dg: DG, vf: &VectorFieldSet, rp: &RoughPath, y0: &DVector<f64>) -> Result<f64>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
    DG: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let z = complete(solve_rde(vf, rp, y0, false)?)?;
    let pushed = |y: &DVector<f64>| dg(y) * vf.eval(y);
    let mut values = Vec::with_capacity(z.len());
    let mut derivs = Vec::with_capacity(z.len());
    for y in z.states() {
        let f = vf.eval(y);
        values.push(pushed(y));
        derivs.push(
            (0..vf.driver_dim())
                .map(|j| fd::directional(pushed, y, &f.column(j).into_owned()))
                .collect(),
        );
    }
    let integrand = ControlledPath::new(rp, values, derivs)?;
    let integral = integrand.running_integral()?;
    let g0 = g(y0);
    Ok(z
        .states()
        .iter()
        .zip(&integral)
        .map(|(y, i)| (g(y) - &g0 - i).norm())
        .fold(0.0, f64::max))
}

/// Composition of flows `V = Y ∘ Z` for `dY = G(Y) dX`, `dZ = H(Z) dX`.
///
/// `V_t = Y_t(Z_t(y0))` is formed by re-solving the `Y` flow from every
/// `Z_t`, and compared with the direct integration of
/// `dV = G(V) dX + (D_x Y_t)(Z_t) H(Z_t) dX`. Returns the maximum deviation
/// over the initial conditions and grid times.
pub fn verify_composition(
    g: &VectorFieldSet,
    h: &VectorFieldSet,
    rp: &RoughPath,
    initial: &[DVector<f64>],
) -> Result<f64> {
    if g.state_dim() != h.state_dim() || g.driver_dim() != h.driver_dim() {
        return Err(Error::DimensionMismatch {
            what: "composed vector field sets",
            expected: g.state_dim(),
            found: h.state_dim(),
        });
    }
    let residuals = initial
        .par_iter()
        .map(|y0| composition_residual(g, h, rp, y0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

fn composition_residual(g: &VectorFieldSet, h: &VectorFieldSet, rp: &RoughPath, y0: &DVector<f64>) -> Result<f64> {
    let m = g.state_dim();
    let d = g.driver_dim();
    let z = complete(solve_rde(h, rp, y0, false)?)?;
    let eye = DMatrix::identity(m, m);

    // Y_{t_n}(Z_n), its Jacobian, and the Gubinelli derivative of
    // K_t = (D_x Y_t)(Z_t) H(Z_t).
    let pieces = (0..rp.len())
        .into_par_iter()
        .map(|n| -> Result<(DVector<f64>, DMatrix<f64>, Vec<DMatrix<f64>>)> {
            let zn = z.state(n);
            let run = complete(solve_rde_segment(g, rp, 0, n, zn, Some(eye.clone()))?)?;
            let v = run.last().clone();
            let jac = run.jacobians().unwrap().last().unwrap().clone();
            let hz = h.eval(zn);
            let dh = h.jacobians(zn);
            let dg = g.jacobians(&v);
            let k = &jac * &hz;

            let second = if g.is_linear() {
                None
            } else {
                let mut per_dir = Vec::with_capacity(d);
                for j in 0..d {
                    let dir = hz.column(j).into_owned();
                    let eps = fd::RELATIVE_STEP * (1.0 + zn.norm()) / dir.norm().max(f64::MIN_POSITIVE);
                    if dir.norm() == 0.0 {
                        per_dir.push(DMatrix::zeros(m, m));
                        continue;
                    }
                    let jp = complete(solve_rde_segment(g, rp, 0, n, &(zn + &dir * eps), Some(eye.clone()))?)?;
                    let jm = complete(solve_rde_segment(g, rp, 0, n, &(zn - &dir * eps), Some(eye.clone()))?)?;
                    let diff = (jp.jacobians().unwrap().last().unwrap() - jm.jacobians().unwrap().last().unwrap()) / (2.0 * eps);
                    per_dir.push(diff);
                }
                Some(per_dir)
            };

            let kp = (0..d)
                .map(|j| {
                    let mut kj = DMatrix::zeros(m, d);
                    for i in 0..d {
                        let mut col = &dg[j] * (&jac * hz.column(i)) + &jac * (&dh[i] * hz.column(j));
                        if let Some(s) = &second {
                            col += &s[j] * hz.column(i);
                        }
                        kj.set_column(i, &col);
                    }
                    kj
                })
                .collect();
            Ok((v, k, kp))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut v = y0.clone();
    let mut worst = (&pieces[0].0 - &v).norm();
    for n in 0..rp.len() - 1 {
        let (_, k, kp) = &pieces[n];
        let w = g.eval(&v) + k;
        let dgv = g.jacobians(&v);
        let xinc = rp.step_increment(n);
        let area = rp.step_area(n);
        let mut next = &v + &w * &xinc;
        for j in 0..d {
            for i in 0..d {
                let c = area[(j, i)];
                if c != 0.0 {
                    next += (&dgv[i] * w.column(j) + kp[j].column(i)) * c;
                }
            }
        }
        v = next;
        worst = worst.max((&pieces[n + 1].0 - &v).norm());
    }
    Ok(worst)
}

type FamilyValue = Box<dyn Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync>;
type FamilyDerivative = Box<dyn Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync>;

/// A family `x ↦ (h(·, x), h'(·, x))` of controlled paths with values in
/// `L(R^d, R)`, of the form `h(t, x) = H(X_t, x)` for scalar `x`.
///
/// `value(X, x)` returns the `d` components of `h`; `gubinelli(X, x)` returns
/// the `d×d` matrix with entry `(j, i) = ∂h_i/∂X^j`.
pub struct ControlledFamily {
    value: FamilyValue,
    gubinelli: FamilyDerivative,
}

impl ControlledFamily {
    pub fn new<V, D>(value: V, gubinelli: D) -> Self
    where
        V: Fn(&DVector<f64>, f64) -> DVector<f64> + Send + Sync + 'static,
        D: Fn(&DVector<f64>, f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            value: Box::new(value),
            gubinelli: Box::new(gubinelli),
        }
    }

    /// `h(t, x) = c`, independent of time and space.
    pub fn constant(c: DVector<f64>) -> Self {
        let d = c.len();
        Self::new(move |_, _| c.clone(), move |_, _| DMatrix::zeros(d, d))
    }

    fn as_row(&self, x_drv: &DVector<f64>, x: f64) -> DMatrix<f64> {
        let v = (self.value)(x_drv, x);
        DMatrix::from_row_slice(1, v.len(), v.as_slice())
    }

    fn gubinelli_rows(&self, x_drv: &DVector<f64>, x: f64) -> Vec<DMatrix<f64>> {
        let g = (self.gubinelli)(x_drv, x);
        (0..g.nrows())
            .map(|j| DMatrix::from_row_slice(1, g.ncols(), g.row(j).transpose().as_slice()))
            .collect()
    }

    fn running_integral(&self, rp: &RoughPath, x: f64) -> Result<Vec<f64>> {
        let cp = ControlledPath::from_function(rp, |xd| self.as_row(xd, x), |xd| self.gubinelli_rows(xd, x))?;
        Ok(cp.running_integral()?.into_iter().map(|v| v[0]).collect())
    }
}

/// Data of the Itô–Wentzel check: `g(t, x) = g0(x) + ∫_0^t h(s, x) dX_s`
/// with `D_x h` supplied as its own controlled family.
pub struct WentzelField {
    pub h: ControlledFamily,
    pub dh: ControlledFamily,
    pub g0: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dg0: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

struct ProbeGrid<'a> {
    points: &'a [f64],
}

impl ProbeGrid<'_> {
    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let p = self.points;
        if !(x >= p[0] && x <= p[p.len() - 1]) {
            return Err(Error::OutOfDomain { point: vec![x] });
        }
        let k = p.partition_point(|&q| q <= x).clamp(1, p.len() - 1) - 1;
        Ok((k, (x - p[k]) / (p[k + 1] - p[k])))
    }

    fn interp(&self, table: &[f64], x: f64) -> Result<f64> {
        let (k, w) = self.locate(x)?;
        Ok((1.0 - w) * table[k] + w * table[k + 1])
    }

    fn slopes(&self, table: &[f64]) -> Vec<f64> {
        let p = self.points;
        let n = p.len();
        (0..n)
            .map(|k| {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
                (table[b] - table[a]) / (p[b] - p[a])
            })
            .collect()
    }
}

/// `sup_t |g(t, Z_t) − g(0, Z_0) − ∫ h(r, Z_r) dX_r − ∫ Dg(r, Z_r) dZ_r|`
/// for scalar `Z` solving `dZ = F(Z) dX` from `z0`.
///
/// `g` and `Dg` are tabulated on the probe points and interpolated linearly;
/// `D²g` comes from differences of the tabulated `Dg`.
pub fn verify_ito_wentzel(field: &WentzelField, vf: &VectorFieldSet, rp: &RoughPath, z0: f64, probes: &[f64]) -> Result<f64> {
    if vf.state_dim() != 1 {
        return Err(Error::DimensionMismatch {
            what: "Itô–Wentzel state dimension",
            expected: 1,
            found: vf.state_dim(),
        });
    }
    if probes.len() < 2 || probes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("probe points must be strictly increasing, at least 2".into()));
    }
    let d = rp.dim();
    let grid = ProbeGrid { points: probes };
    let z = complete(solve_rde(vf, rp, &DVector::from_element(1, z0), false)?)?;

    let tables = probes
        .par_iter()
        .map(|&x| -> Result<(Vec<f64>, Vec<f64>)> {
            let g0 = (field.g0)(x);
            let dg0 = (field.dg0)(x);
            let g = field.h.running_integral(rp, x)?.into_iter().map(|v| g0 + v).collect();
            let dg = field.dh.running_integral(rp, x)?.into_iter().map(|v| dg0 + v).collect();
            Ok((g, dg))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_pts = rp.len();
    let mut lhs = Vec::with_capacity(n_pts);
    let mut y1 = Vec::with_capacity(n_pts);
    let mut y1p = Vec::with_capacity(n_pts);
    let mut y2 = Vec::with_capacity(n_pts);
    let mut y2p = Vec::with_capacity(n_pts);
    for n in 0..n_pts {
        let zn = z.state(n)[0];
        let xd = rp.value(n);
        let zp = vf.eval(z.state(n));
        let g_row: Vec<f64> = tables.iter().map(|t| t.0[n]).collect();
        let dg_row: Vec<f64> = tables.iter().map(|t| t.1[n]).collect();
        lhs.push(grid.interp(&g_row, zn)?);

        let hx = field.dh.as_row(xd, zn);
        y1.push(field.h.as_row(xd, zn));
        y1p.push(
            field
                .h
                .gubinelli_rows(xd, zn)
                .into_iter()
                .enumerate()
                .map(|(j, row)| row + &hx * zp[(0, j)])
                .collect::<Vec<_>>(),
        );

        let d2g = grid.interp(&grid.slopes(&dg_row), zn)?;
        y2.push(DMatrix::from_element(1, 1, grid.interp(&dg_row, zn)?));
        y2p.push((0..d).map(|j| DMatrix::from_element(1, 1, hx[(0, j)] + d2g * zp[(0, j)])).collect::<Vec<_>>());
    }

    let zc = z.controlled(rp, vf)?;
    let first = ControlledPath::new(rp, y1, y1p)?.running_integral()?;
    let second = ControlledPath::new(rp, y2, y2p)?.running_integral_against(&zc)?;
    let g_start = (field.g0)(z0);
    Ok((0..n_pts)
        .map(|n| (lhs[n] - g_start - first[n][0] - second[n][0]).abs())
        .fold(0.0, f64::max))
}

/// `max_t | |y_t| − 1 |` for fields tangent to the unit sphere.
pub fn verify_manifold_invariance(vf: &VectorFieldSet, rp: &RoughPath, y0: &DVector<f64>) -> Result<f64> {
    if (y0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "initial condition must lie on the unit sphere, |y0| = {}",
            y0.norm()
        )));
    }
    let f = vf.eval(y0);
    for i in 0..vf.driver_dim() {
        let dot = f.column(i).dot(y0);
        if dot.abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "field {i} is not tangent to the sphere at y0 (F_i(y0)·y0 = {dot})"
            )));
        }
    }
    let tr = complete(solve_rde(vf, rp, y0, false)?)?;
    Ok(tr.states().iter().map(|y| (y.norm() - 1.0).abs()).fold(0.0, f64::max))
}

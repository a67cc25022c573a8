//! Second-order (Davie) stepping for `dy = F(y) dX` and flows over sets of
//! initial conditions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::integral::ControlledPath;
use crate::rough_path::RoughPath;

/// A state whose norm exceeds this value counts as a numerical blow-up.
pub const BLOWUP_NORM: f64 = 1e12;

pub type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type FieldJacobianFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// `d` vector fields on `R^m`, packed as `F: R^m → L(R^d, R^m)`.
///
/// `F(y)` is an `m×d` matrix whose column `i` is the field driven by `X^i`.
/// `DF(y)` returns the `d` Jacobians `∂F_i/∂y`, each `m×m`.
#[derive(Clone)]
pub struct VectorFieldSet {
    m: usize,
    d: usize,
    f: FieldFn,
    df: FieldJacobianFn,
    linear: Option<Vec<DMatrix<f64>>>,
}

impl fmt::Debug for VectorFieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldSet")
            .field("m", &self.m)
            .field("d", &self.d)
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl VectorFieldSet {
    pub fn new<F, DF>(m: usize, d: usize, f: F, df: DF) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        DF: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        if m == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "state and driving dimensions must be >= 1, got m = {m}, d = {d}"
            )));
        }
        Ok(Self {
            m,
            d,
            f: Arc::new(f),
            df: Arc::new(df),
            linear: None,
        })
    }

    /// `F_i(y) = A_i y`.
    pub fn linear(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = mats.len();
        if d == 0 {
            return Err(Error::InvalidParameter("need at least one coefficient matrix".into()));
        }
        let m = mats[0].nrows();
        for a in &mats {
            if a.nrows() != m || a.ncols() != m {
                return Err(Error::DimensionMismatch {
                    what: "linear coefficient matrix",
                    expected: m,
                    found: a.nrows().max(a.ncols()),
                });
            }
        }
        let fm = mats.clone();
        let dm = mats.clone();
        let mut vf = Self::new(
            m,
            d,
            move |y| {
                let mut out = DMatrix::zeros(y.len(), fm.len());
                for (i, a) in fm.iter().enumerate() {
                    out.set_column(i, &(a * y));
                }
                out
            },
            move |_| dm.clone(),
        )?;
        vf.linear = Some(mats);
        Ok(vf)
    }

    pub fn zero(m: usize, d: usize) -> Result<Self> {
        Self::linear(vec![DMatrix::zeros(m, m); d])
    }

    pub fn state_dim(&self) -> usize {
        self.m
    }

    pub fn driver_dim(&self) -> usize {
        self.d
    }

    pub fn is_linear(&self) -> bool {
        self.linear.is_some()
    }

    /// Coefficient matrices when the fields are linear.
    pub fn linear_coefficients(&self) -> Option<&[DMatrix<f64>]> {
        self.linear.as_deref()
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        (self.f)(y)
    }

    pub fn jacobians(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.df)(y)
    }

    /// `Σ_{i,j} DF_i(y) F_j(y) 𝕏^{ji}`, the second-order Davie term.
    pub fn second_order(&self, y: &DVector<f64>, area: &DMatrix<f64>) -> DVector<f64> {
        let f = self.eval(y);
        let df = self.jacobians(y);
        let mut out = DVector::zeros(self.m);
        for (i, dfi) in df.iter().enumerate() {
            for j in 0..self.d {
                let c = area[(j, i)];
                if c != 0.0 {
                    out += (dfi * f.column(j)) * c;
                }
            }
        }
        out
    }

    /// Largest relative discrepancy between `DF` and central differences of
    /// `F` over the sample points.
    pub fn validate_derivative(&self, points: &[DVector<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for y in points {
            let df = self.jacobians(y);
            for (i, dfi) in df.iter().enumerate() {
                let num = fd::jacobian(|z| self.eval(z).column(i).into_owned(), y);
                let err = (&num - dfi).norm() / (1.0 + dfi.norm());
                worst = worst.max(err);
            }
        }
        worst
    }

    fn check_shapes(&self, y: &DVector<f64>, xinc: &DVector<f64>, area: &DMatrix<f64>) -> Result<()> {
        if y.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.m,
                found: y.len(),
            });
        }
        if xinc.len() != self.d || area.nrows() != self.d || area.ncols() != self.d {
            return Err(Error::DimensionMismatch {
                what: "driver increment",
                expected: self.d,
                found: xinc.len(),
            });
        }
        Ok(())
    }
}

/// `y + F(y) X_{st} + Σ_{i,j} DF_i(y) F_j(y) 𝕏^{ji}_{st}`.
pub fn step_davie(
    y: &DVector<f64>,
    vf: &VectorFieldSet,
    xinc: &DVector<f64>,
    area: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    vf.check_shapes(y, xinc, area)?;
    let next = raw_step(y, vf, xinc, area);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::Evaluation("Davie step produced a non-finite state".into()))
    }
}

fn raw_step(y: &DVector<f64>, vf: &VectorFieldSet, xinc: &DVector<f64>, area: &DMatrix<f64>) -> DVector<f64> {
    y + vf.eval(y) * xinc + vf.second_order(y, area)
}

/// Derivative of the discrete step map with respect to the state.
fn step_derivative(y: &DVector<f64>, vf: &VectorFieldSet, xinc: &DVector<f64>, area: &DMatrix<f64>) -> DMatrix<f64> {
    let m = vf.m;
    let mut out = DMatrix::identity(m, m);
    match &vf.linear {
        Some(a) => {
            for (i, ai) in a.iter().enumerate() {
                out += ai * xinc[i];
                for (j, aj) in a.iter().enumerate() {
                    let c = area[(j, i)];
                    if c != 0.0 {
                        out += (ai * aj) * c;
                    }
                }
            }
        }
        None => {
            for (i, dfi) in vf.jacobians(y).iter().enumerate() {
                out += dfi * xinc[i];
            }
            out += fd::jacobian(|z| vf.second_order(z, area), y);
        }
    }
    out
}

/// Where and when a trajectory left the representable range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub index: usize,
    pub time: f64,
}

/// States (and optionally Jacobians `D_x φ`) along a contiguous run of grid
/// points starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: usize,
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    jacobians: Option<Vec<DMatrix<f64>>>,
    blowup: Option<BlowUp>,
}

impl Trajectory {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn jacobians(&self) -> Option<&[DMatrix<f64>]> {
        self.jacobians.as_deref()
    }

    pub fn blowup(&self) -> Option<BlowUp> {
        self.blowup
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The solution as a controlled path with `Y' = F(Y)`, as `m×1` values.
    pub fn controlled<'a>(&self, rp: &'a RoughPath, vf: &VectorFieldSet) -> Result<ControlledPath<'a>> {
        if self.start != 0 || self.states.len() != rp.len() {
            return Err(Error::InvalidParameter(
                "controlled view needs a complete trajectory starting at index 0".into(),
            ));
        }
        let values = self.states.iter().map(|y| DMatrix::from_column_slice(y.len(), 1, y.as_slice())).collect();
        let derivs = self
            .states
            .iter()
            .map(|y| {
                let f = vf.eval(y);
                (0..vf.d).map(|j| DMatrix::from_column_slice(vf.m, 1, f.column(j).as_slice())).collect()
            })
            .collect();
        ControlledPath::new(rp, values, derivs)
    }
}

fn out_of_range(y: &DVector<f64>) -> bool {
    !y.iter().all(|v| v.is_finite()) || y.norm() > BLOWUP_NORM
}

/// Solve on the whole grid from `y0`; `with_jacobian` co-evolves `D_x φ`.
pub fn solve_rde(vf: &VectorFieldSet, rp: &RoughPath, y0: &DVector<f64>, with_jacobian: bool) -> Result<Trajectory> {
    let j0 = with_jacobian.then(|| DMatrix::identity(vf.m, vf.m));
    solve_rde_segment(vf, rp, 0, rp.len() - 1, y0, j0)
}

/// Solve from grid index `start` to `end`, starting at `y0` and, when given,
/// carrying the Jacobian forward from `j0`.
///
/// Restarting a solve at an intermediate grid point from the stored state
/// and Jacobian reproduces the uninterrupted solve bitwise.
pub fn solve_rde_segment(
    vf: &VectorFieldSet,
    rp: &RoughPath,
    start: usize,
    end: usize,
    y0: &DVector<f64>,
    j0: Option<DMatrix<f64>>,
) -> Result<Trajectory> {
    if vf.d != rp.dim() {
        return Err(Error::DimensionMismatch {
            what: "vector field driving dimension",
            expected: rp.dim(),
            found: vf.d,
        });
    }
    if y0.len() != vf.m {
        return Err(Error::DimensionMismatch {
            what: "initial condition",
            expected: vf.m,
            found: y0.len(),
        });
    }
    if let Some(j) = &j0 {
        if j.nrows() != vf.m || j.ncols() != vf.m {
            return Err(Error::DimensionMismatch {
                what: "initial Jacobian",
                expected: vf.m,
                found: j.nrows(),
            });
        }
    }
    rp.grid().check_pair(start, end)?;

    let t = rp.grid().points();
    let mut times = vec![t[start]];
    let mut states = vec![y0.clone()];
    let mut jacobians = j0.map(|j| vec![j]);
    let mut blowup = None;
    for n in start..end {
        let y = states.last().unwrap();
        let xinc = rp.step_increment(n);
        let area = rp.step_area(n);
        let next = raw_step(y, vf, &xinc, area);
        let next_jac = jacobians
            .as_ref()
            .map(|js| step_derivative(y, vf, &xinc, area) * js.last().unwrap());
        let jac_bad = next_jac.as_ref().is_some_and(|j| !j.iter().all(|v| v.is_finite()));
        if out_of_range(&next) || jac_bad {
            blowup = Some(BlowUp {
                index: n + 1,
                time: t[n + 1],
            });
            break;
        }
        states.push(next);
        if let (Some(js), Some(j)) = (jacobians.as_mut(), next_jac) {
            js.push(j);
        }
        times.push(t[n + 1]);
    }
    Ok(Trajectory {
        start,
        times,
        states,
        jacobians,
        blowup,
    })
}

/// Solve from every initial condition, in parallel.
pub fn solve_flow(
    vf: &VectorFieldSet,
    rp: &RoughPath,
    initial: &[DVector<f64>],
    with_jacobian: bool,
) -> Result<Vec<Trajectory>> {
    initial.par_iter().map(|y0| solve_rde(vf, rp, y0, with_jacobian)).collect()
}

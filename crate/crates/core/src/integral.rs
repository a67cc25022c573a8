//! Controlled paths and compensated-sum rough integrals.
//!
//! A controlled path carries its values `Y` and a Gubinelli derivative `Y'`
//! at every grid point of a base [`RoughPath`]. Values are stored as matrices:
//! an `R^ℓ`-valued path uses `ℓ×1` matrices, an integrand in `L(R^d, R^m)`
//! uses `m×d` matrices. The derivative is stored as `d` matrices of the same
//! shape, `Y'[j] = ∂Y/∂X^j`.
//!
//! The partition limit in the definition of the rough integral is realized
//! as the sum over the cells of the stored grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rough_path::RoughPath;

/// Neumaier-compensated running sum of vectors.
#[derive(Debug, Clone)]
pub struct CompensatedSum {
    sum: DVector<f64>,
    comp: DVector<f64>,
}

impl CompensatedSum {
    pub fn new(len: usize) -> Self {
        Self {
            sum: DVector::zeros(len),
            comp: DVector::zeros(len),
        }
    }

    pub fn add(&mut self, v: &DVector<f64>) {
        for k in 0..v.len() {
            let s = self.sum[k];
            let x = v[k];
            let t = s + x;
            if s.abs() >= x.abs() {
                self.comp[k] += (s - t) + x;
            } else {
                self.comp[k] += (x - t) + s;
            }
            self.sum[k] = t;
        }
    }

    pub fn value(&self) -> DVector<f64> {
        &self.sum + &self.comp
    }
}

/// A path controlled by a rough path, with its Gubinelli derivative.
#[derive(Debug, Clone)]
pub struct ControlledPath<'a> {
    base: &'a RoughPath,
    values: Vec<DMatrix<f64>>,
    derivs: Vec<Vec<DMatrix<f64>>>,
}

impl<'a> ControlledPath<'a> {
    pub fn new(
        base: &'a RoughPath,
        values: Vec<DMatrix<f64>>,
        derivs: Vec<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let n = base.len();
        if values.len() != n || derivs.len() != n {
            return Err(Error::DimensionMismatch {
                what: "controlled path samples",
                expected: n,
                found: values.len().min(derivs.len()),
            });
        }
        let shape = values[0].shape();
        for (v, dv) in values.iter().zip(&derivs) {
            if v.shape() != shape {
                return Err(Error::DimensionMismatch {
                    what: "controlled path value rows",
                    expected: shape.0,
                    found: v.nrows(),
                });
            }
            if dv.len() != base.dim() {
                return Err(Error::DimensionMismatch {
                    what: "Gubinelli derivative components",
                    expected: base.dim(),
                    found: dv.len(),
                });
            }
            if dv.iter().any(|m| m.shape() != shape) {
                return Err(Error::DimensionMismatch {
                    what: "Gubinelli derivative shape",
                    expected: shape.0,
                    found: dv.iter().map(|m| m.nrows()).max().unwrap_or(0),
                });
            }
        }
        Ok(Self { base, values, derivs })
    }

    /// Vector-valued path: `values[n] ∈ R^ℓ`, `derivs[n] ∈ L(R^d, R^ℓ)` (ℓ×d).
    pub fn from_vectors(
        base: &'a RoughPath,
        values: Vec<DVector<f64>>,
        derivs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = base.dim();
        if let Some(bad) = derivs.iter().find(|m| m.ncols() != d) {
            return Err(Error::DimensionMismatch {
                what: "Gubinelli derivative columns",
                expected: d,
                found: bad.ncols(),
            });
        }
        let values = values.into_iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice())).collect();
        let derivs = derivs
            .into_iter()
            .map(|m| (0..d).map(|j| DMatrix::from_column_slice(m.nrows(), 1, m.column(j).as_slice())).collect())
            .collect();
        Self::new(base, values, derivs)
    }

    /// `Y = F(X)`, `Y' = DF(X)`, where `df` returns `∂F/∂x^j` for each `j`.
    pub fn from_function<F, DF>(base: &'a RoughPath, f: F, df: DF) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64>,
        DF: Fn(&DVector<f64>) -> Vec<DMatrix<f64>>,
    {
        let mut values = Vec::with_capacity(base.len());
        let mut derivs = Vec::with_capacity(base.len());
        for (n, x) in base.values().iter().enumerate() {
            let y = f(x);
            let dy = df(x);
            if y.iter().chain(dy.iter().flat_map(|m| m.iter())).any(|v| !v.is_finite()) {
                return Err(Error::Evaluation(format!(
                    "non-finite value at grid index {n} (t = {})",
                    base.grid().time(n)
                )));
            }
            values.push(y);
            derivs.push(dy);
        }
        Self::new(base, values, derivs)
    }

    /// The rough path itself as a controlled path: `Z = X`, `Z' = I`.
    pub fn identity(base: &'a RoughPath) -> Self {
        let d = base.dim();
        let values = base.values().iter().map(|x| DMatrix::from_column_slice(d, 1, x.as_slice())).collect();
        let unit: Vec<DMatrix<f64>> = (0..d)
            .map(|j| {
                let mut e = DMatrix::zeros(d, 1);
                e[(j, 0)] = 1.0;
                e
            })
            .collect();
        let derivs = vec![unit; base.len()];
        Self { base, values, derivs }
    }

    pub fn base(&self) -> &'a RoughPath {
        self.base
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    pub fn value(&self, n: usize) -> &DMatrix<f64> {
        &self.values[n]
    }

    pub fn derivative(&self, n: usize) -> &[DMatrix<f64>] {
        &self.derivs[n]
    }

    /// `R^Y_{ij} = Y_{t_j} − Y_{t_i} − Y'_{t_i} X_{t_i t_j}`.
    pub fn remainder(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.base.grid().check_pair(i, j)?;
        let dx = self.base.value(j) - self.base.value(i);
        let mut r = &self.values[j] - &self.values[i];
        for (k, yp) in self.derivs[i].iter().enumerate() {
            r -= yp * dx[k];
        }
        Ok(r)
    }

    fn require_integrand(&self) -> Result<()> {
        let d = self.base.dim();
        if self.shape().1 != d {
            return Err(Error::DimensionMismatch {
                what: "integrand columns vs driving dimension",
                expected: d,
                found: self.shape().1,
            });
        }
        Ok(())
    }

    /// One compensated term `Y_u X_{uv} + Y'_u 𝕏_{uv}` on cell `u → u+1`.
    fn rough_term(&self, u: usize) -> DVector<f64> {
        let d = self.base.dim();
        let dx = self.base.step_increment(u);
        let area = self.base.step_area(u);
        let mut term = &self.values[u] * &dx;
        for j in 0..d {
            for i in 0..d {
                term += self.derivs[u][j].column(i) * area[(j, i)];
            }
        }
        term
    }

    /// `∫_{t_i}^{t_j} Y dX` as the compensated sum over grid cells.
    pub fn integrate(&self, i: usize, j: usize) -> Result<DVector<f64>> {
        self.require_integrand()?;
        self.base.grid().check_pair(i, j)?;
        let mut acc = CompensatedSum::new(self.shape().0);
        for u in i..j {
            acc.add(&self.rough_term(u));
        }
        Ok(acc.value())
    }

    /// `∫_0^{t_n} Y dX` for every grid index `n`.
    pub fn running_integral(&self) -> Result<Vec<DVector<f64>>> {
        self.require_integrand()?;
        let mut acc = CompensatedSum::new(self.shape().0);
        let mut out = Vec::with_capacity(self.len());
        out.push(acc.value());
        for u in 0..self.len() - 1 {
            acc.add(&self.rough_term(u));
            out.push(acc.value());
        }
        Ok(out)
    }

    fn controlled_term(&self, z: &ControlledPath<'_>, u: usize) -> DVector<f64> {
        let d = self.base.dim();
        let dz = z.values[u + 1].column(0) - z.values[u].column(0);
        let area = self.base.step_area(u);
        let mut term = &self.values[u] * &dz;
        for j in 0..d {
            for i in 0..d {
                term += (&self.derivs[u][j] * z.derivs[u][i].column(0)) * area[(j, i)];
            }
        }
        term
    }

    fn check_against(&self, z: &ControlledPath<'_>) -> Result<()> {
        if !std::ptr::eq(self.base, z.base) && self.base != z.base {
            return Err(Error::InvalidParameter(
                "controlled paths are built on different rough paths".into(),
            ));
        }
        if z.shape().1 != 1 {
            return Err(Error::DimensionMismatch {
                what: "integrator path columns",
                expected: 1,
                found: z.shape().1,
            });
        }
        if self.shape().1 != z.shape().0 {
            return Err(Error::DimensionMismatch {
                what: "integrand columns vs integrator dimension",
                expected: z.shape().0,
                found: self.shape().1,
            });
        }
        Ok(())
    }

    /// `∫ Y dZ` as the compensated sum `Σ (Y_u Z_{uv} + Y'_u Z'_u 𝕏_{uv})`.
    pub fn integrate_against(&self, z: &ControlledPath<'_>, i: usize, j: usize) -> Result<DVector<f64>> {
        self.check_against(z)?;
        self.base.grid().check_pair(i, j)?;
        let mut acc = CompensatedSum::new(self.shape().0);
        for u in i..j {
            acc.add(&self.controlled_term(z, u));
        }
        Ok(acc.value())
    }

    pub fn running_integral_against(&self, z: &ControlledPath<'_>) -> Result<Vec<DVector<f64>>> {
        self.check_against(z)?;
        let mut acc = CompensatedSum::new(self.shape().0);
        let mut out = Vec::with_capacity(self.len());
        out.push(acc.value());
        for u in 0..self.len() - 1 {
            acc.add(&self.controlled_term(z, u));
            out.push(acc.value());
        }
        Ok(out)
    }

    /// Diagnostic comparison of the one-interval defect with the sewing bound.
    pub fn local_error_report(&self, i: usize, j: usize) -> Result<LocalErrorReport> {
        self.require_integrand()?;
        self.base.grid().check_pair(i, j)?;
        let d = self.base.dim();
        let alpha = self.base.alpha();
        let t = self.base.grid().points();

        let integral = self.integrate(i, j)?;
        let dx = self.base.value(j) - self.base.value(i);
        let area = self.base.second_level(i, j)?;
        let mut germ = &self.values[i] * &dx;
        for jj in 0..d {
            for ii in 0..d {
                germ += self.derivs[i][jj].column(ii) * area[(jj, ii)];
            }
        }
        let measured = (integral - germ).norm();

        let mut remainder_norm = 0.0f64;
        let mut derivative_norm = 0.0f64;
        for s in i..=j {
            for u in s + 1..=j {
                let dt = t[u] - t[s];
                remainder_norm = remainder_norm.max(self.remainder(s, u)?.norm() / dt.powf(2.0 * alpha));
                let dyp: f64 = self.derivs[u]
                    .iter()
                    .zip(&self.derivs[s])
                    .map(|(a, b)| (a - b).norm_squared())
                    .sum::<f64>()
                    .sqrt();
                derivative_norm = derivative_norm.max(dyp / dt.powf(alpha));
            }
        }
        let holder = if i < j {
            self.base.restrict(i, j)?.holder_norms()
        } else {
            crate::rough_path::HolderEstimate {
                x_norm: 0.0,
                xx_norm: 0.0,
            }
        };
        let bound = (remainder_norm * holder.x_norm + derivative_norm * holder.xx_norm)
            * (t[j] - t[i]).powf(3.0 * alpha);
        Ok(LocalErrorReport {
            measured,
            bound,
            remainder_norm,
            derivative_norm,
            x_norm: holder.x_norm,
            xx_norm: holder.xx_norm,
        })
    }
}

/// The measured defect `|∫ − Y_s X_{st} − Y'_s 𝕏_{st}|` next to the bracketed
/// bound `{|R^Y|_{2α}|X|_α + |Y'|_α|𝕏|_{2α}} |t − s|^{3α}` (constant taken as 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalErrorReport {
    pub measured: f64,
    pub bound: f64,
    pub remainder_norm: f64,
    pub derivative_norm: f64,
    pub x_norm: f64,
    pub xx_norm: f64,
}

//! Empirical convergence orders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn fit_order(hs: &[f64], errors: &[f64]) -> Result<f64> {
    if hs.len() != errors.len() || hs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two (h, error) pairs of equal count, got {} and {}",
            hs.len(),
            errors.len()
        )));
    }
    if hs.iter().chain(errors).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("step sizes and errors must be positive and finite".into()));
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("step sizes must not all coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Errors measured at a sequence of resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub hs: Vec<f64>,
    pub errors: Vec<f64>,
    pub order: f64,
}

impl ConvergenceStudy {
    pub fn new(hs: Vec<f64>, errors: Vec<f64>) -> Result<Self> {
        let order = fit_order(&hs, &errors)?;
        Ok(Self { hs, errors, order })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let hs = [0.1, 0.05, 0.025];
        let es: Vec<f64> = hs.iter().map(|h| 3.0 * h * h).collect();
        assert!((fit_order(&hs, &es).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_order(&[0.1], &[0.1]).is_err());
        assert!(fit_order(&[0.1, 0.05], &[0.0, 1.0]).is_err());
        assert!(fit_order(&[0.1, 0.1], &[1.0, 2.0]).is_err());
    }
}

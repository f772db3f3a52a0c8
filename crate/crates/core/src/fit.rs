//! Least-squares helpers.

use crate::error::{Error, Result};

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Data("need at least two paired samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Data("log-log fit needs positive finite samples".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).map(|(_, b)| b)
}

/// `(intercept, slope)` of the least-squares line.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("degenerate abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

/// Least-squares polynomial coefficients `c_0..c_deg`.
pub fn polyfit(xs: &[f64], ys: &[f64], deg: usize) -> Result<Vec<f64>> {
    if xs.len() <= deg {
        return Err(Error::Data("too few samples for polynomial fit".into()));
    }
    let v = nalgebra::DMatrix::from_fn(xs.len(), deg + 1, |i, j| xs[i].powi(j as i32));
    let y = nalgebra::DVector::from_column_slice(ys);
    let sol = v
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::Data(e.to_string()))?;
    Ok(sol.iter().copied().collect())
}

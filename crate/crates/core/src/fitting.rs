//! Least-squares line fits used for decay-rate estimation.

use crate::error::{CoreError, Result};

/// Ordinary least-squares slope of y against x, with the standard error of
/// the slope. Needs at least 3 points for a finite stderr.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(CoreError::InvalidParameter(format!(
            "slope fit needs two equally long series, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(CoreError::InvalidParameter(
            "slope fit with degenerate abscissa".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let r = y - (intercept + slope * x);
        ss_res += r * r;
    }
    let dof = (xs.len() as f64 - 2.0).max(1.0);
    let stderr = (ss_res / dof / sxx).sqrt();
    Ok((slope, stderr))
}

/// Least-squares slope of log(value) against abscissa over the index range
/// where `window` contains the abscissa. Values must be strictly positive.
pub fn log_slope(xs: &[f64], values: &[f64], window: (f64, f64)) -> Result<(f64, f64)> {
    let mut wx = Vec::new();
    let mut wy = Vec::new();
    for (x, v) in xs.iter().zip(values) {
        if *x >= window.0 && *x <= window.1 {
            if !(*v > 0.0) {
                return Err(CoreError::InvalidParameter(format!(
                    "log-slope fit requires positive values, got {v} at {x}"
                )));
            }
            wx.push(*x);
            wy.push(v.ln());
        }
    }
    if wx.len() < 10 {
        return Err(CoreError::InvalidParameter(format!(
            "log-slope fit needs at least 10 samples in window, got {}",
            wx.len()
        )));
    }
    least_squares_slope(&wx, &wy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_slope() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.02).collect();
        let ys: Vec<f64> = xs.iter().map(|t| (-t).exp()).collect();
        let (s, _) = log_slope(&xs, &ys, (0.0, 4.0)).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
    }

    #[test]
    fn modulated_three_halves() {
        let xs: Vec<f64> = (0..400).map(|i| i as f64 * 0.02).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|t| (-1.5 * t).exp() * (1.0 + 0.01 * t.sin()))
            .collect();
        let (s, _) = log_slope(&xs, &ys, (0.0, 8.0)).unwrap();
        assert!((s + 1.5).abs() < 0.02, "slope {s}");
    }

    #[test]
    fn constant_series_zero_slope() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys = vec![3.5; 50];
        let (s, _) = log_slope(&xs, &ys, (0.0, 5.0)).unwrap();
        assert!(s.abs() < 1e-13);
    }

    #[test]
    fn rejects_nonpositive_values() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut ys = vec![1.0; 20];
        ys[7] = 0.0;
        assert!(log_slope(&xs, &ys, (0.0, 20.0)).is_err());
    }
}

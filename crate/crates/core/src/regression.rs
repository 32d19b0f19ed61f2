//! Simple ordinary least squares `y = intercept + slope * x`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub stderr_intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl RegressionResult {
    /// Two-sided Student-t critical value for the given confidence level.
    pub fn t_critical(&self, level: f64) -> f64 {
        let dof = (self.n - 2) as f64;
        StudentsT::new(0.0, 1.0, dof)
            .map(|t| t.inverse_cdf(0.5 + level / 2.0))
            .unwrap_or(f64::NAN)
    }

    pub fn slope_interval(&self, level: f64) -> (f64, f64) {
        let h = self.t_critical(level) * self.stderr_slope;
        (self.slope - h, self.slope + h)
    }

    pub fn intercept_interval(&self, level: f64) -> (f64, f64) {
        let h = self.t_critical(level) * self.stderr_intercept;
        (self.intercept - h, self.intercept + h)
    }
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::invalid("x and y differ in length"));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !crate::estimators::has_spread(sxx / nf, x) {
        return Err(Error::ZeroVariance { what: "regressor" });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let s2 = sse / (nf - 2.0);
    let stderr_slope = (s2 / sxx).sqrt();
    let stderr_intercept = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RegressionResult { slope, intercept, stderr_slope, stderr_intercept, r_squared, n })
}

/// Clamps `x` to its empirical `[lo, hi]` quantiles (nearest-rank).
pub fn winsorize(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let (a, b) = (q(lo), q(hi));
    x.iter().map(|v| v.clamp(a, b)).collect()
}

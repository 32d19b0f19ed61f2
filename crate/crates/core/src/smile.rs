//! Near-the-money smile from the cumulant expansion
//! `Sigma = sigma [1 + zeta/6 M + kappa/24 (M^2 - 1)]`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Default `|M|` beyond which the expansion is flagged as unreliable.
pub const DEFAULT_VALIDITY_WINDOW: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileParams {
    /// Volatility over the maturity, per square-root day.
    pub sigma: f64,
    pub zeta: f64,
    pub kappa: f64,
    /// Maturity in days.
    pub t_days: f64,
    /// Risk-free rate per day.
    pub rate: f64,
    pub spot: f64,
}

impl SmileParams {
    pub fn validate(&self) -> Result<()> {
        ensure_positive(self.sigma, "sigma")?;
        ensure_positive(self.t_days, "T")?;
        ensure_positive(self.spot, "spot")?;
        if !self.zeta.is_finite() || !self.kappa.is_finite() || !self.rate.is_finite() {
            return Err(Error::invalid("zeta, kappa and rate must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionOrder {
    SkewOnly,
    SkewKurtosis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmilePoint {
    pub moneyness: f64,
    pub sigma_implied: f64,
    /// `false` when `|M|` exceeds the validity window.
    pub in_window: bool,
}

/// `M = (K e^{-rT} / S - 1) / (sigma sqrt(T))`.
pub fn moneyness(strike: f64, p: &SmileParams) -> Result<f64> {
    ensure_positive(strike, "strike")?;
    p.validate()?;
    Ok((strike * (-p.rate * p.t_days).exp() / p.spot - 1.0) / (p.sigma * p.t_days.sqrt()))
}

pub fn implied_vol(m: f64, p: &SmileParams, order: ExpansionOrder) -> Result<SmilePoint> {
    implied_vol_windowed(m, p, order, DEFAULT_VALIDITY_WINDOW)
}

pub fn implied_vol_windowed(
    m: f64,
    p: &SmileParams,
    order: ExpansionOrder,
    window: f64,
) -> Result<SmilePoint> {
    p.validate()?;
    if !m.is_finite() {
        return Err(Error::invalid("moneyness must be finite"));
    }
    let mut factor = 1.0 + p.zeta / 6.0 * m;
    if order == ExpansionOrder::SkewKurtosis {
        factor += p.kappa / 24.0 * (m * m - 1.0);
    }
    Ok(SmilePoint { moneyness: m, sigma_implied: p.sigma * factor, in_window: m.abs() <= window })
}

/// Strike-indexed smile.
pub fn smile_at_strikes(
    strikes: &[f64],
    p: &SmileParams,
    order: ExpansionOrder,
    window: f64,
) -> Result<Vec<(f64, SmilePoint)>> {
    strikes
        .iter()
        .map(|k| Ok((*k, implied_vol_windowed(moneyness(*k, p)?, p, order, window)?)))
        .collect()
}

//! ATM implied-vol reaction to moves of the underlying.
//!
//! The implied leverage coefficient `gamma(T)` is the relative change of the
//! ATM vol of maturity `T` per unit return of the underlying:
//! `dSigma(0,T)/Sigma(0,T) = gamma(T) r`. Under an exponential leverage kernel
//! `g(t) = -A exp(-t/t_L)`, with `alpha = A / (2 sigma0)` and `x = T/t_L`:
//!
//! | rule          | gamma(T)                                 | large `T` |
//! |---------------|------------------------------------------|-----------|
//! | theoretical   | `-alpha (1 - (1 + x) e^{-x}) / x^2`      | `T^-2`    |
//! | sticky strike | `-alpha (1/x - (1 - e^{-x}) / x^2)`      | `T^-1`    |
//! | sticky delta  | `0`                                      |           |
//!
//! Both non-trivial rules tend to `-alpha/2 = -A/(4 sigma0)` as `T -> 0`, and
//! `gamma_ss <= gamma_th <= gamma_sd = 0` everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::estimators::LeverageCurve;
use crate::market_data::{AtmVolPanel, DatedValues, ReturnSeries};
use crate::regression::{self, RegressionResult};

/// Below this `T/t_L` the closed forms are replaced by their Taylor series.
const SERIES_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaRule {
    Theoretical,
    StickyStrike,
    StickyDelta,
    Implied,
}

impl GammaRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            GammaRule::Theoretical => "theoretical",
            GammaRule::StickyStrike => "sticky-strike",
            GammaRule::StickyDelta => "sticky-delta",
            GammaRule::Implied => "implied",
        }
    }
}

impl std::str::FromStr for GammaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theoretical" | "th" => Ok(GammaRule::Theoretical),
            "sticky-strike" | "ss" => Ok(GammaRule::StickyStrike),
            "sticky-delta" | "sd" => Ok(GammaRule::StickyDelta),
            "implied" | "imp" => Ok(GammaRule::Implied),
            other => Err(Error::invalid(format!("unknown gamma rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCurve {
    pub maturities: Vec<u32>,
    pub gamma: Vec<f64>,
    pub rule: GammaRule,
    pub alpha: f64,
    pub t_l: f64,
}

impl GammaCurve {
    /// Model curve for one of the closed-form rules.
    pub fn from_rule(rule: GammaRule, alpha: f64, t_l: f64, maturities: &[u32]) -> Result<Self> {
        let gamma = maturities
            .iter()
            .map(|t| gamma_for_rule(rule, alpha, t_l, *t as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { maturities: maturities.to_vec(), gamma, rule, alpha, t_l })
    }
}

/// `alpha = A / (2 sigma0)`, with `sigma0` the daily realized vol.
pub fn alpha_from(amplitude: f64, sigma0: f64) -> Result<f64> {
    ensure_positive(sigma0, "sigma0")?;
    if amplitude.is_nan() || amplitude < 0.0 {
        return Err(Error::invalid("amplitude must be >= 0"));
    }
    Ok(amplitude / (2.0 * sigma0))
}

/// Cross-sectional `alpha`: the ratio `A / sigma` is averaged over
/// instruments before halving.
pub fn average_alpha(amplitude_sigma: &[(f64, f64)]) -> Result<f64> {
    if amplitude_sigma.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for (a, s) in amplitude_sigma {
        sum += 2.0 * alpha_from(*a, *s)?;
    }
    Ok(sum / amplitude_sigma.len() as f64 / 2.0)
}

fn check_gamma_inputs(alpha: f64, t_l: f64, t_days: f64) -> Result<f64> {
    ensure_positive(t_days, "T")?;
    ensure_positive(t_l, "t_L")?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(t_days / t_l)
}

pub fn gamma_theoretical(alpha: f64, t_l: f64, t_days: f64) -> Result<f64> {
    let x = check_gamma_inputs(alpha, t_l, t_days)?;
    let shape = if x < SERIES_CUTOFF {
        0.5 - x / 3.0 + x * x / 8.0
    } else {
        (1.0 - (1.0 + x) * (-x).exp()) / (x * x)
    };
    Ok(-alpha * shape)
}

pub fn gamma_sticky_strike(alpha: f64, t_l: f64, t_days: f64) -> Result<f64> {
    let x = check_gamma_inputs(alpha, t_l, t_days)?;
    let shape = if x < SERIES_CUTOFF {
        0.5 - x / 6.0 + x * x / 24.0
    } else {
        (x + (-x).exp_m1()) / (x * x)
    };
    Ok(-alpha * shape)
}

pub fn gamma_sticky_delta(_t_days: f64) -> f64 {
    0.0
}

pub fn gamma_for_rule(rule: GammaRule, alpha: f64, t_l: f64, t_days: f64) -> Result<f64> {
    match rule {
        GammaRule::Theoretical => gamma_theoretical(alpha, t_l, t_days),
        GammaRule::StickyStrike => gamma_sticky_strike(alpha, t_l, t_days),
        GammaRule::StickyDelta => {
            ensure_positive(t_days, "T")?;
            Ok(gamma_sticky_delta(t_days))
        }
        GammaRule::Implied => Err(Error::invalid("implied gamma has no closed form")),
    }
}

/// Theoretical gamma including the daily-skewness term `zeta1 / (6 sigma0 T)`.
pub fn gamma_with_zeta1(alpha: f64, t_l: f64, t_days: f64, zeta1: f64, sigma0: f64) -> Result<f64> {
    ensure_positive(sigma0, "sigma0")?;
    Ok(gamma_theoretical(alpha, t_l, t_days)? + zeta1 / (6.0 * sigma0 * t_days))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zeta1Diagnostic {
    pub gamma_theoretical: f64,
    pub zeta1_term: f64,
    pub gamma_total: f64,
    /// `|zeta1_term| / |gamma_theoretical|`.
    pub relative_contribution: f64,
}

/// Size of the daily-skewness correction relative to the leverage part.
pub fn zeta1_diagnostic(
    alpha: f64,
    t_l: f64,
    t_days: f64,
    zeta1: f64,
    sigma0: f64,
) -> Result<Zeta1Diagnostic> {
    let th = gamma_theoretical(alpha, t_l, t_days)?;
    let total = gamma_with_zeta1(alpha, t_l, t_days, zeta1, sigma0)?;
    let term = total - th;
    Ok(Zeta1Diagnostic {
        gamma_theoretical: th,
        zeta1_term: term,
        gamma_total: total,
        relative_contribution: term.abs() / th.abs(),
    })
}

/// Leverage kernel used by [`expected_vol_change`].
#[derive(Debug, Clone, Copy)]
pub enum LeverageModel<'a> {
    Exponential { amplitude: f64, t_l: f64 },
    Curve(&'a LeverageCurve),
}

/// Expected change of the future realized vol over `[t, t+T]` after a
/// return `r`: `dsigma = [1/(2T) int_0^T g(u) du] r`, in the vol units of
/// the normalized kernel (divide by `sigma` for a relative change).
///
/// For a sampled curve the integral is the trapezoid rule on integer lags,
/// with `g(0)` taken equal to the first available lag and `g = 0` past the
/// end of the curve.
pub fn expected_vol_change(model: LeverageModel<'_>, t_days: f64, r: f64) -> Result<f64> {
    ensure_positive(t_days, "T")?;
    let integral = match model {
        LeverageModel::Exponential { amplitude, t_l } => {
            ensure_positive(t_l, "t_L")?;
            amplitude * t_l * (-t_days / t_l).exp_m1()
        }
        LeverageModel::Curve(g) => trapezoid(g, t_days),
    };
    Ok(integral / (2.0 * t_days) * r)
}

fn trapezoid(g: &LeverageCurve, t_days: f64) -> f64 {
    let first = g.values.first().copied().unwrap_or(0.0);
    let at = |lag: u32| if lag == 0 { first } else { g.value_at(lag).unwrap_or(0.0) };
    let whole = t_days.floor() as u32;
    let mut s = 0.0;
    for lag in 0..whole {
        s += 0.5 * (at(lag) + at(lag + 1));
    }
    let frac = t_days - whole as f64;
    if frac > 0.0 {
        let (g0, g1) = (at(whole), at(whole + 1));
        let end = g0 + frac * (g1 - g0);
        s += 0.5 * frac * (g0 + end);
    }
    s
}

/// ATM vol shift under sticky strike: `dSigma = zeta(T) dS / (6 S sqrt(T))`.
pub fn sticky_strike_atm_shift(zeta_t: f64, spot: f64, t_days: f64, d_spot: f64) -> Result<f64> {
    ensure_positive(spot, "spot")?;
    ensure_positive(t_days, "T")?;
    Ok(zeta_t * d_spot / (6.0 * spot * t_days.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImpliedGammaOptions {
    /// Regress absolute instead of relative vol changes (diagnostics only).
    pub absolute: bool,
    /// Clamp both variables to their 1%-99% quantiles before regressing.
    pub winsorize: bool,
}

/// Minimum number of (vol change, return) pairs for a regression.
pub const MIN_GAMMA_PAIRS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpliedGamma {
    pub regression: RegressionResult,
    /// Tenor actually used, in days.
    pub tenor: u32,
    /// Distance between the requested maturity and `tenor`; non-zero means
    /// the requested maturity was not quoted.
    pub tenor_distance: u32,
}

impl ImpliedGamma {
    pub fn gamma(&self) -> f64 {
        self.regression.slope
    }
}

/// OLS of the daily relative change of the ATM vol at maturity `T` on the
/// return of the underlying over the same day. The vol change between two
/// consecutive panel dates is paired with the return dated on the later one;
/// pairs with a missing vol or return are skipped.
pub fn estimate_gamma_implied(
    panel: &AtmVolPanel,
    returns: &ReturnSeries,
    t_days: u32,
    opts: ImpliedGammaOptions,
) -> Result<ImpliedGamma> {
    if panel.maturities().is_empty() {
        return Err(Error::invalid("panel has no maturities"));
    }
    let (idx, distance) = panel.nearest_tenor(t_days);
    let ret_dates = returns.dates();
    let ret_vals = returns.values();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for k in 1..panel.len() {
        let (Some(v0), Some(v1)) = (panel.vol(k - 1, idx), panel.vol(k, idx)) else {
            continue;
        };
        let Ok(j) = ret_dates.binary_search(&panel.dates()[k]) else {
            continue;
        };
        x.push(ret_vals[j]);
        y.push(if opts.absolute { v1 - v0 } else { (v1 - v0) / v0 });
    }
    if x.len() < MIN_GAMMA_PAIRS {
        return Err(Error::TooFewSamples { needed: MIN_GAMMA_PAIRS, got: x.len() });
    }
    if opts.winsorize {
        x = regression::winsorize(&x, 0.01, 0.99);
        y = regression::winsorize(&y, 0.01, 0.99);
    }
    let regression = regression::ols(&x, &y).map_err(|e| match e {
        Error::ZeroVariance { .. } => Error::ZeroVariance { what: "returns" },
        other => other,
    })?;
    Ok(ImpliedGamma { regression, tenor: panel.maturities()[idx], tenor_distance: distance })
}

/// Cross-sectional fit `gamma = a + b log10(M)`.
pub fn mcap_regression(points: &[(f64, f64)]) -> Result<RegressionResult> {
    if points.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: points.len() });
    }
    let mut x = Vec::with_capacity(points.len());
    let mut y = Vec::with_capacity(points.len());
    for (cap, gamma) in points {
        ensure_positive(*cap, "market cap")?;
        x.push(cap.log10());
        y.push(*gamma);
    }
    regression::ols(&x, &y).map_err(|e| match e {
        Error::ZeroVariance { .. } => Error::ZeroVariance { what: "market caps" },
        other => other,
    })
}

/// Converts a slope per `log10 M` into a slope per `ln M`.
pub fn slope_per_ln(slope_log10: f64) -> f64 {
    slope_log10 / std::f64::consts::LN_10
}

//! Skewness term structure `zeta(T)` of `T`-day aggregated returns.
//!
//! Three routes are provided:
//!
//! * [`skew_discrete`]: the exact lag sum
//!   `zeta(T) = zeta1/sqrt(T) + 3/sqrt(T) * sum_{t=1}^{T-1} (1 - t/T) g(t)`,
//!   valid whenever three-point cumulants at distinct times vanish;
//! * [`skew_closed_form`]: its continuum version for `g(t) = -A exp(-t/t_L)`;
//! * [`skew_direct`]: the sample skewness of non-overlapping `T`-day sums.
//!
//! The closed form integrates the kernel from lag 0, while the discrete sum
//! starts at lag 1. The two differ by about `3A/(2 sqrt(T))`, which is 4.3%
//! at `T = t_L = 31` and shrinks like `1/T` in relative terms.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::estimators::{self, LeverageCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkewSource {
    DiscreteSum,
    ClosedForm,
    DirectCumulant,
}

impl SkewSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkewSource::DiscreteSum => "discrete-sum",
            SkewSource::ClosedForm => "closed-form",
            SkewSource::DirectCumulant => "direct-cumulant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewCurve {
    pub maturities: Vec<u32>,
    pub zeta: Vec<f64>,
    /// Standard errors; zero for closed-form curves.
    pub stderr: Vec<f64>,
    pub source: SkewSource,
}

impl SkewCurve {
    pub fn len(&self) -> usize {
        self.maturities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maturities.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewPoint {
    pub zeta: f64,
    pub stderr: f64,
    /// Lags in `1..T` absent from the input curve, treated as zero.
    pub missing_lags: usize,
}

/// Lag sum for `zeta(T)`. The returned `stderr` only propagates the curve's
/// per-lag errors (treated as independent); add the `zeta1` error separately.
pub fn skew_discrete(zeta1: f64, g: &LeverageCurve, t_days: u32) -> Result<SkewPoint> {
    if t_days < 1 {
        return Err(Error::invalid("maturity must be >= 1 day"));
    }
    let t_f = t_days as f64;
    let mut sum = 0.0;
    let mut var = 0.0;
    let mut missing = 0;
    for lag in 1..t_days {
        let weight = 1.0 - lag as f64 / t_f;
        match g.index_of(lag) {
            Some(i) => {
                sum += weight * g.values[i];
                var += (weight * g.stderr[i]).powi(2);
            }
            None => missing += 1,
        }
    }
    let root_t = t_f.sqrt();
    Ok(SkewPoint {
        zeta: zeta1 / root_t + 3.0 * sum / root_t,
        stderr: 3.0 * var.sqrt() / root_t,
        missing_lags: missing,
    })
}

/// [`skew_discrete`] over a maturity grid; `zeta1_stderr` is folded into
/// each point's error.
pub fn skew_curve_discrete(
    zeta1: f64,
    zeta1_stderr: f64,
    g: &LeverageCurve,
    maturities: &[u32],
) -> Result<SkewCurve> {
    let mut zeta = Vec::with_capacity(maturities.len());
    let mut stderr = Vec::with_capacity(maturities.len());
    for &t in maturities {
        let p = skew_discrete(zeta1, g, t)?;
        zeta.push(p.zeta);
        stderr.push(p.stderr.hypot(zeta1_stderr / (t as f64).sqrt()));
    }
    Ok(SkewCurve { maturities: maturities.to_vec(), zeta, stderr, source: SkewSource::DiscreteSum })
}

/// Leverage-induced part of the closed form:
/// `-(3A / T^{3/2}) (T t_L - t_L^2 (1 - exp(-T/t_L)))`.
pub fn leverage_skew_term(amplitude: f64, t_l: f64, t_days: f64) -> Result<f64> {
    ensure_positive(t_l, "t_L")?;
    ensure_positive(t_days, "T")?;
    let x = t_days / t_l;
    // T t_L - t_L^2 (1 - e^{-x}) = t_L^2 (x - 1 + e^{-x}); expm1 keeps small x exact.
    let bracket = t_l * t_l * (x + (-x).exp_m1());
    Ok(-3.0 * amplitude * bracket / t_days.powf(1.5))
}

pub fn skew_closed_form(zeta1: f64, amplitude: f64, t_l: f64, t_days: f64) -> Result<f64> {
    Ok(zeta1 / t_days.sqrt() + leverage_skew_term(amplitude, t_l, t_days)?)
}

pub fn skew_curve_closed_form(
    zeta1: f64,
    amplitude: f64,
    t_l: f64,
    maturities: &[u32],
) -> Result<SkewCurve> {
    let zeta = maturities
        .iter()
        .map(|t| skew_closed_form(zeta1, amplitude, t_l, *t as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(SkewCurve {
        maturities: maturities.to_vec(),
        stderr: vec![0.0; zeta.len()],
        zeta,
        source: SkewSource::ClosedForm,
    })
}

/// Maturity (in units of `t_L`) at which the leverage-induced skew is
/// largest in magnitude: the root of `x/2 - 3/2 + (3/2 + x) e^{-x} = 0`,
/// about 2.149.
pub fn leverage_skew_peak_ratio() -> f64 {
    let f = |x: f64| 0.5 * x - 1.5 + (1.5 + x) * (-x).exp();
    let (mut lo, mut hi) = (1.0, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sample skewness of non-overlapping `T`-day sums, with the standard error
/// from the sample variance of the skewness influence function
/// `z^3 - 3z - (3/2) zeta (z^2 - 1)`.
pub fn skew_direct(r: &[f64], t_days: u32) -> Result<SkewPoint> {
    if t_days < 1 {
        return Err(Error::invalid("maturity must be >= 1 day"));
    }
    let agg: Vec<f64> = r.chunks_exact(t_days as usize).map(|c| c.iter().sum()).collect();
    let m = estimators::moment_summary(&agg)?;
    let infl: Vec<f64> = agg
        .iter()
        .map(|x| {
            let z = (x - m.mean) / m.sigma;
            z * z * z - 3.0 * z - 1.5 * m.zeta1 * (z * z - 1.0)
        })
        .collect();
    let se = (estimators::std_dev(&infl).powi(2) / agg.len() as f64).sqrt();
    Ok(SkewPoint { zeta: m.zeta1, stderr: se, missing_lags: 0 })
}

pub fn skew_curve_direct(r: &[f64], maturities: &[u32]) -> Result<SkewCurve> {
    let mut zeta = Vec::with_capacity(maturities.len());
    let mut stderr = Vec::with_capacity(maturities.len());
    for &t in maturities {
        let p = skew_direct(r, t)?;
        zeta.push(p.zeta);
        stderr.push(p.stderr);
    }
    Ok(SkewCurve {
        maturities: maturities.to_vec(),
        zeta,
        stderr,
        source: SkewSource::DirectCumulant,
    })
}

// ---------------------------------------------------------------------------
// Exponential fit
// ---------------------------------------------------------------------------

/// Parameters of `g(t) = -A exp(-t/t_L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpLeverageFit {
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "t_L")]
    pub t_l: f64,
    /// Weighted residual sum of squares.
    pub sse: f64,
    pub lag_lo: u32,
    pub lag_hi: u32,
    /// The best amplitude hit the `A >= 0` bound: no negative leverage.
    pub no_leverage_detected: bool,
}

impl ExpLeverageFit {
    pub fn value_at(&self, lag: f64) -> f64 {
        -self.amplitude * (-lag / self.t_l).exp()
    }
}

const GRID_POINTS: usize = 200;
const GRID_MIN_DAYS: f64 = 1.0;
const GRID_MAX_DAYS: f64 = 250.0;
const MIN_FIT_LAGS: usize = 5;

/// Log-spaced decay-time grid used by the profiled search.
pub fn decay_grid() -> Vec<f64> {
    let (lo, hi) = (GRID_MIN_DAYS.ln(), GRID_MAX_DAYS.ln());
    (0..GRID_POINTS)
        .map(|k| (lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect()
}

struct FitPoint {
    lag: f64,
    value: f64,
    weight: f64,
}

/// Optimal clamped amplitude and weighted SSE for a fixed decay time.
fn profile(points: &[FitPoint], t_l: f64) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for p in points {
        let phi = (-p.lag / t_l).exp();
        num += p.weight * p.value * phi;
        den += p.weight * phi * phi;
    }
    let amp = (-num / den).max(0.0);
    let sse = points
        .iter()
        .map(|p| p.weight * (p.value + amp * (-p.lag / t_l).exp()).powi(2))
        .sum();
    (amp, sse)
}

fn golden_section(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-10 * hi {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

fn fit_points(g: &LeverageCurve, lo: u32, hi: u32) -> Vec<FitPoint> {
    g.lags
        .iter()
        .zip(g.values.iter().zip(&g.stderr))
        .filter(|(lag, (v, se))| {
            (lo..=hi).contains(*lag) && v.is_finite() && se.is_finite() && **se > 0.0
        })
        .map(|(lag, (v, se))| FitPoint { lag: *lag as f64, value: *v, weight: 1.0 / (se * se) })
        .collect()
}

fn fit_on(points: &[FitPoint], lo: u32, hi: u32) -> Result<ExpLeverageFit> {
    if points.len() < MIN_FIT_LAGS {
        return Err(Error::invalid(format!(
            "need at least {MIN_FIT_LAGS} lags with finite positive stderr in {lo}..={hi}, got {}",
            points.len()
        )));
    }
    let grid = decay_grid();
    let profiled: Vec<(f64, f64)> = grid.iter().map(|t| profile(points, *t)).collect();
    // strict `<` keeps the smallest decay time among ties
    let mut best = 0;
    for (k, (_, sse)) in profiled.iter().enumerate() {
        if *sse < profiled[best].1 {
            best = k;
        }
    }
    let (mut t_l, (mut amp, mut sse)) = (grid[best], profiled[best]);
    if amp > 0.0 {
        let lo_t = grid[best.saturating_sub(1)];
        let hi_t = grid[(best + 1).min(GRID_POINTS - 1)];
        let refined = golden_section(lo_t, hi_t, |t| profile(points, t).1);
        let (a2, s2) = profile(points, refined);
        if s2 <= sse {
            t_l = refined;
            amp = a2;
            sse = s2;
        }
    }
    Ok(ExpLeverageFit {
        amplitude: amp,
        t_l,
        sse,
        lag_lo: lo,
        lag_hi: hi,
        no_leverage_detected: amp == 0.0,
    })
}

/// Weighted least-squares fit of `g(t) = -A exp(-t/t_L)` with weights
/// `1/stderr^2`, profiling `A` out in closed form over a log grid of decay
/// times and refining the best grid point by golden section.
///
/// Without an explicit `lag_range`, a first pass over lags `1..=250` is
/// followed by a refit over `1..=min(5 t_L, 250)`.
pub fn fit_exponential(g: &LeverageCurve, lag_range: Option<(u32, u32)>) -> Result<ExpLeverageFit> {
    if let Some((lo, hi)) = lag_range {
        if lo < 1 || hi < lo {
            return Err(Error::invalid(format!("bad lag range {lo}..={hi}")));
        }
        return fit_on(&fit_points(g, lo, hi), lo, hi);
    }
    let hi = g.max_lag().min(GRID_MAX_DAYS as u32);
    let first = fit_on(&fit_points(g, 1, hi), 1, hi)?;
    if first.no_leverage_detected {
        return Ok(first);
    }
    let hi2 = ((5.0 * first.t_l).ceil() as u32).min(hi);
    let points = fit_points(g, 1, hi2);
    if points.len() < MIN_FIT_LAGS {
        return Ok(first);
    }
    fit_on(&points, 1, hi2)
}

//! One-factor decomposition `r = beta * Phi + eps` of a stock's skew term
//! structure into idiosyncratic, market-to-idiosyncratic and market parts.
//!
//! With `w = beta sigma_Phi / sigma` (signed), the third cumulant of the
//! `T`-day stock return splits as
//!
//! ```text
//! zeta(T) = zeta_ee(T) + w zeta_pe(T) + w^3 zeta_pp(T) + residual(T)
//! ```
//!
//! where every component is expressed relative to the *total* stock vol:
//! `zeta_pp` is the market's own skew curve, `zeta_ee` is the residual's
//! skew curve times `(sigma_eps/sigma)^3`, and `zeta_pe` is the cross curve
//! (market driver, residual responder, normalized by `sigma_Phi sigma_eps^2`)
//! times `(sigma_eps/sigma)^2`. `residual` collects the residual-driven
//! market vol (`eps -> Phi`) term and is reported for diagnostics only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, leverage_correlation, LeverageCurve};
use crate::market_data::{align, ReturnSeries};
use crate::skew_term::{skew_curve_discrete, SkewCurve, SkewSource};

pub const MIN_FACTOR_OVERLAP: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorFit {
    pub beta: f64,
    pub sigma_phi: f64,
    pub sigma_eps: f64,
    pub sigma_total: f64,
    /// `beta * sigma_phi / sigma_total`; negative when `beta` is.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSeries {
    pub fit: FactorFit,
    /// Stock and market returns on their common dates.
    pub stock: Vec<f64>,
    pub market: Vec<f64>,
    /// `stock - beta * market`.
    pub residual: Vec<f64>,
}

/// OLS slope of the demeaned stock on the demeaned market over the common
/// dates. All vols use `1/n` normalization, so
/// `sigma_total^2 = beta^2 sigma_phi^2 + sigma_eps^2` up to rounding.
pub fn fit_factor(stock: &ReturnSeries, market: &ReturnSeries) -> Result<FactorSeries> {
    let pair = align(stock, market)?;
    if pair.len() < MIN_FACTOR_OVERLAP {
        return Err(Error::TooFewSamples { needed: MIN_FACTOR_OVERLAP, got: pair.len() });
    }
    fit_factor_values(pair.series_a, pair.series_b)
}

pub fn fit_factor_values(stock: Vec<f64>, market: Vec<f64>) -> Result<FactorSeries> {
    if stock.len() != market.len() {
        return Err(Error::invalid("stock and market differ in length"));
    }
    if stock.len() < MIN_FACTOR_OVERLAP {
        return Err(Error::TooFewSamples { needed: MIN_FACTOR_OVERLAP, got: stock.len() });
    }
    let s = estimators::demeaned(&stock);
    let m = estimators::demeaned(&market);
    let smm: f64 = m.iter().map(|x| x * x).sum();
    if !estimators::has_spread(smm / m.len() as f64, &market) {
        return Err(Error::ZeroVariance { what: "market" });
    }
    let beta = s.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>() / smm;
    let residual: Vec<f64> = stock.iter().zip(&market).map(|(a, b)| a - beta * b).collect();
    let sigma_phi = estimators::std_dev(&market);
    let sigma_eps = estimators::std_dev(&residual);
    let sigma_total = estimators::std_dev(&stock);
    if !estimators::has_spread(sigma_total * sigma_total, &stock) {
        return Err(Error::ZeroVariance { what: "stock" });
    }
    Ok(FactorSeries {
        fit: FactorFit { beta, sigma_phi, sigma_eps, sigma_total, ratio: beta * sigma_phi / sigma_total },
        stock,
        market,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewDecomposition {
    pub fit: FactorFit,
    /// Directly estimated stock skew (lag sum on the raw stock series).
    pub total: SkewCurve,
    pub zeta_eps_eps: SkewCurve,
    pub zeta_phi_eps: SkewCurve,
    pub zeta_phi_phi: SkewCurve,
    /// `(1, ratio, ratio^3)`.
    pub weights: (f64, f64, f64),
    /// Weighted sum of the three components.
    pub recombined: SkewCurve,
    /// Weighted `eps -> Phi` contribution, expected to vanish.
    pub residual_term: SkewCurve,
}

impl SkewDecomposition {
    pub fn maturities(&self) -> &[u32] {
        &self.total.maturities
    }

    /// `ratio * zeta_phi_eps` per maturity.
    pub fn weighted_phi_eps(&self) -> Vec<f64> {
        self.zeta_phi_eps.zeta.iter().map(|z| self.weights.1 * z).collect()
    }

    /// `ratio^3 * zeta_phi_phi` per maturity.
    pub fn weighted_phi_phi(&self) -> Vec<f64> {
        self.zeta_phi_phi.zeta.iter().map(|z| self.weights.2 * z).collect()
    }

    /// Standard error of `recombined - total`, treating both as independent.
    pub fn combined_stderr(&self) -> Vec<f64> {
        self.recombined.stderr.iter().zip(&self.total.stderr).map(|(a, b)| a.hypot(*b)).collect()
    }
}

fn scaled(curve: SkewCurve, factor: f64) -> SkewCurve {
    SkewCurve {
        zeta: curve.zeta.iter().map(|z| z * factor).collect(),
        stderr: curve.stderr.iter().map(|s| s * factor.abs()).collect(),
        ..curve
    }
}

/// Cross or auto component: lag curve through the discrete skew sum, with
/// the equal-time term `3 <a b^2> / (sigma_a sigma_b^2)` for cross terms and
/// the daily skewness for auto terms.
fn component(driver: &[f64], responder: &[f64], auto: bool, maturities: &[u32]) -> Result<SkewCurve> {
    let max_lag = maturities.iter().max().copied().unwrap_or(1).saturating_sub(1).max(1);
    let g: LeverageCurve = leverage_correlation(driver, responder, max_lag)?;
    let n = driver.len() as f64;
    let (same_time, se) = if auto {
        (estimators::moment_summary(driver)?.zeta1, (6.0 / n).sqrt())
    } else {
        // equal-time cross term enters three times; its Gaussian-reference
        // error is sqrt(2/n) per unit coskewness
        (3.0 * estimators::coskewness(driver, responder)?, 3.0 * (2.0 / n).sqrt())
    };
    skew_curve_discrete(same_time, se, &g, maturities)
}

pub fn decompose_skew(
    stock: &ReturnSeries,
    market: &ReturnSeries,
    maturities: &[u32],
) -> Result<SkewDecomposition> {
    decompose_factor_series(&fit_factor(stock, market)?, maturities)
}

pub fn decompose_factor_series(fs: &FactorSeries, maturities: &[u32]) -> Result<SkewDecomposition> {
    if maturities.is_empty() || maturities.contains(&0) {
        return Err(Error::invalid("maturities must be non-empty and >= 1"));
    }
    let fit = fs.fit;
    let total = component(&fs.stock, &fs.stock, true, maturities)?;
    let q = fit.sigma_eps / fit.sigma_total;
    let (zeta_eps_eps, zeta_phi_eps, residual_raw) = if fit.sigma_eps > 0.0 {
        (
            scaled(component(&fs.residual, &fs.residual, true, maturities)?, q.powi(3)),
            scaled(component(&fs.market, &fs.residual, false, maturities)?, q * q),
            scaled(component(&fs.residual, &fs.market, false, maturities)?, fit.ratio.powi(2) * q),
        )
    } else {
        let zero = SkewCurve {
            maturities: maturities.to_vec(),
            zeta: vec![0.0; maturities.len()],
            stderr: vec![0.0; maturities.len()],
            source: SkewSource::DiscreteSum,
        };
        (zero.clone(), zero.clone(), zero)
    };
    let zeta_phi_phi = component(&fs.market, &fs.market, true, maturities)?;
    let weights = (1.0, fit.ratio, fit.ratio.powi(3));

    let recombined = SkewCurve {
        maturities: maturities.to_vec(),
        zeta: (0..maturities.len())
            .map(|i| {
                weights.0 * zeta_eps_eps.zeta[i]
                    + weights.1 * zeta_phi_eps.zeta[i]
                    + weights.2 * zeta_phi_phi.zeta[i]
            })
            .collect(),
        stderr: (0..maturities.len())
            .map(|i| {
                (weights.0 * zeta_eps_eps.stderr[i])
                    .hypot(weights.1 * zeta_phi_eps.stderr[i])
                    .hypot(weights.2 * zeta_phi_phi.stderr[i])
            })
            .collect(),
        source: SkewSource::DiscreteSum,
    };
    Ok(SkewDecomposition {
        fit,
        total,
        zeta_eps_eps,
        zeta_phi_eps,
        zeta_phi_phi,
        weights,
        recombined,
        residual_term: residual_raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::Date;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>()
    }

    fn series(values: Vec<f64>) -> ReturnSeries {
        ReturnSeries::with_business_days("X", Date::from_ymd_opt(2010, 1, 4).unwrap(), values).unwrap()
    }

    #[test]
    fn stock_equals_market() {
        let m = normals(500, 1, 0.01);
        let fs = fit_factor(&series(m.clone()), &series(m)).unwrap();
        assert!((fs.fit.beta - 1.0).abs() < 1e-12);
        assert!(fs.fit.sigma_eps < 1e-15);
        assert!((fs.fit.ratio - 1.0).abs() < 1e-12);
        let d = decompose_factor_series(&fs, &[5, 10, 21]).unwrap();
        for i in 0..3 {
            assert!((d.total.zeta[i] - d.zeta_phi_phi.zeta[i]).abs() < 1e-9);
            assert!((d.recombined.zeta[i] - d.total.zeta[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn independent_stock_has_small_beta() {
        let m = normals(20_000, 2, 0.01);
        let s = normals(20_000, 3, 0.01);
        let fs = fit_factor_values(s, m).unwrap();
        // se(beta) ~ sigma_eps / (sigma_phi sqrt n)
        assert!(fs.fit.beta.abs() < 3.0 / (20_000f64).sqrt());
        assert!(fs.fit.ratio.abs() < 0.03);
    }

    #[test]
    fn constructed_ratio() {
        let m = normals(200_000, 4, 0.01);
        let e = normals(200_000, 5, 0.01);
        let s: Vec<f64> = m.iter().zip(&e).map(|(a, b)| 0.8 * a + b).collect();
        let fit = fit_factor_values(s, m).unwrap().fit;
        let expected = 0.8 / (0.64f64 + 1.0).sqrt();
        assert!((fit.ratio / expected - 1.0).abs() < 0.02, "{}", fit.ratio);
    }

    #[test]
    fn zero_beta_leaves_idiosyncratic_skew() {
        // market uncorrelated with the stock by construction: alternate signs
        let n = 4000;
        let e = normals(n, 6, 0.01);
        let m: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let fs = fit_factor_values(e, m).unwrap();
        let d = decompose_factor_series(&fs, &[5, 21]).unwrap();
        for i in 0..2 {
            let rest = d.weighted_phi_eps()[i] + d.weighted_phi_phi()[i];
            assert!(rest.abs() < 0.05, "{rest}");
            assert!((d.total.zeta[i] - d.zeta_eps_eps.zeta[i]).abs() < 0.05);
        }
    }

    #[test]
    fn errors() {
        let m = normals(50, 7, 0.01);
        assert!(matches!(fit_factor_values(m.clone(), m), Err(Error::TooFewSamples { .. })));
        assert!(matches!(
            fit_factor_values(normals(100, 8, 0.01), vec![0.001; 100]),
            Err(Error::ZeroVariance { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn variance_identity(seed in any::<u64>(), beta in -2.0f64..2.0, noise in 0.0f64..3.0) {
            let m = normals(300, seed, 0.01);
            let e = normals(300, seed ^ 0xdead_beef, 0.01 * noise);
            let s: Vec<f64> = m.iter().zip(&e).map(|(a, b)| beta * a + b + 1e-4).collect();
            let fit = fit_factor_values(s, m).unwrap().fit;
            let lhs = fit.sigma_total.powi(2);
            let rhs = fit.beta.powi(2) * fit.sigma_phi.powi(2) + fit.sigma_eps.powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs);
            prop_assert!(fit.ratio.abs() <= 1.0 + 1e-12);
            prop_assert!(fit.ratio.abs().powi(3) <= fit.ratio.abs() + 1e-15);
        }

        #[test]
        fn ratio_grows_with_beta(seed in any::<u64>(), b1 in 0.0f64..1.5, db in 0.01f64..1.0) {
            let m = normals(300, seed, 0.01);
            let e = normals(300, seed.wrapping_add(1), 0.01);
            let mk = |b: f64| {
                let s: Vec<f64> = m.iter().zip(&e).map(|(x, y)| b * x + y).collect();
                fit_factor_values(s, m.clone()).unwrap().fit.ratio
            };
            prop_assert!(mk(b1 + db) > mk(b1));
        }
    }
}

//! Moment and cumulant estimators: daily volatility and skewness, the lagged
//! leverage correlation `<a_i b_{i+t}^2>_c` and the three-point cumulant
//! diagnostic.
//!
//! All estimates use demeaned data and full-sample `1/n` moments. Per-lag
//! sums run sequentially in index order, so results are bit-identical whether
//! the lags are evaluated serially or on the rayon pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lags with fewer usable products than this are dropped from a curve.
pub const MIN_LAG_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    /// Daily volatility (`1/n` normalization).
    pub sigma: f64,
    /// Third standardized central moment.
    pub zeta1: f64,
    /// Fourth standardized central moment minus 3.
    pub kappa1: f64,
    pub n: usize,
}

impl MomentSummary {
    /// Asymptotic standard error of `sigma`, using the sample excess kurtosis.
    pub fn stderr_sigma(&self) -> f64 {
        self.sigma * ((self.kappa1 + 2.0).max(0.0) / (4.0 * self.n as f64)).sqrt()
    }

    /// Gaussian-reference standard error `sqrt(6/n)`.
    pub fn stderr_zeta1(&self) -> f64 {
        (6.0 / self.n as f64).sqrt()
    }

    /// Gaussian-reference standard error `sqrt(24/n)`.
    pub fn stderr_kappa1(&self) -> f64 {
        (24.0 / self.n as f64).sqrt()
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn demeaned(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

/// `false` when the variance is rounding noise relative to the data scale.
pub(crate) fn has_spread(var: f64, x: &[f64]) -> bool {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    var > (1e-10 * scale).powi(2) && var > 0.0
}

/// `1/n` standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn moment_summary(r: &[f64]) -> Result<MomentSummary> {
    if r.len() < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: r.len() });
    }
    let n = r.len() as f64;
    let mean = mean(r);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in r {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !has_spread(m2, r) {
        return Err(Error::ZeroVariance { what: "returns" });
    }
    let sigma = m2.sqrt();
    Ok(MomentSummary {
        mean,
        sigma,
        zeta1: m3 / (m2 * sigma),
        kappa1: m4 / (m2 * m2) - 3.0,
        n: r.len(),
    })
}

/// `<a b^2>_c / (sigma_a sigma_b^2)` at equal times.
pub fn coskewness(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("series differ in length"));
    }
    if a.len() < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: a.len() });
    }
    let (a, b) = (demeaned(a), demeaned(b));
    let n = a.len() as f64;
    let va = a.iter().map(|x| x * x).sum::<f64>() / n;
    let vb = b.iter().map(|x| x * x).sum::<f64>() / n;
    if !(has_spread(va, &a) && has_spread(vb, &b)) {
        return Err(Error::ZeroVariance { what: "coskewness input" });
    }
    let m = a.iter().zip(&b).map(|(x, y)| x * y * y).sum::<f64>() / n;
    Ok(m / (va.sqrt() * vb))
}

/// How per-lag standard errors are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StderrMethod {
    /// Sample standard deviation of the per-index products over `sqrt(n_eff)`.
    Asymptotic,
    /// Moving-block bootstrap of the product mean.
    BlockBootstrap { block_len: usize, replicates: usize, seed: u64 },
}

impl StderrMethod {
    /// Default bootstrap settings for heavy-tailed data.
    pub fn bootstrap(seed: u64) -> Self {
        StderrMethod::BlockBootstrap { block_len: 20, replicates: 200, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageCurve {
    pub lags: Vec<u32>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_eff: Vec<usize>,
}

impl LeverageCurve {
    /// Builds a curve from explicit points; lags must be strictly increasing
    /// and `>= 1`, stderr non-negative.
    pub fn new(lags: Vec<u32>, values: Vec<f64>, stderr: Vec<f64>, n_eff: Vec<usize>) -> Result<Self> {
        let n = lags.len();
        if values.len() != n || stderr.len() != n || n_eff.len() != n {
            return Err(Error::invalid("curve columns differ in length"));
        }
        if lags.first().is_some_and(|l| *l == 0) || lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lags must be strictly increasing and >= 1"));
        }
        if stderr.iter().any(|s| s.is_nan() || *s < 0.0) || n_eff.iter().any(|k| *k < 1) {
            return Err(Error::invalid("stderr must be >= 0 and n_eff >= 1"));
        }
        Ok(Self { lags, values, stderr, n_eff })
    }

    /// Curve sampled from a closed-form kernel at lags `1..=max_lag`.
    pub fn from_fn(max_lag: u32, stderr: f64, f: impl Fn(f64) -> f64) -> Self {
        let lags: Vec<u32> = (1..=max_lag).collect();
        let values = lags.iter().map(|l| f(*l as f64)).collect();
        let n = lags.len();
        Self { lags, values, stderr: vec![stderr; n], n_eff: vec![1; n] }
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }

    pub fn max_lag(&self) -> u32 {
        self.lags.last().copied().unwrap_or(0)
    }

    /// Position of `lag` in the curve, if present.
    pub fn index_of(&self, lag: u32) -> Option<usize> {
        self.lags.binary_search(&lag).ok()
    }

    pub fn value_at(&self, lag: u32) -> Option<f64> {
        self.index_of(lag).map(|i| self.values[i])
    }
}

/// Leverage correlation `g(t) = <a_i (b_{i+t}^2 - sigma_b^2)> / (sigma_a sigma_b^2)`
/// for `t = 1..=max_lag`, with `a`, `b` the demeaned driver and responder.
///
/// With `driver == responder` this is the usual `<r_i r_{i+t}^2>_c / sigma^3`.
pub fn leverage_correlation(driver: &[f64], responder: &[f64], max_lag: u32) -> Result<LeverageCurve> {
    leverage_correlation_with(driver, responder, max_lag, StderrMethod::Asymptotic)
}

pub fn leverage_correlation_with(
    driver: &[f64],
    responder: &[f64],
    max_lag: u32,
    method: StderrMethod,
) -> Result<LeverageCurve> {
    if driver.len() != responder.len() {
        return Err(Error::invalid("driver and responder must be aligned"));
    }
    if max_lag < 1 {
        return Err(Error::invalid("max_lag must be >= 1"));
    }
    let n = driver.len();
    if n <= max_lag as usize + 10 {
        return Err(Error::TooFewSamples { needed: max_lag as usize + 11, got: n });
    }
    if let StderrMethod::BlockBootstrap { block_len, replicates, .. } = method {
        if block_len == 0 || replicates < 2 {
            return Err(Error::invalid("bootstrap needs block_len >= 1 and >= 2 replicates"));
        }
    }
    let a = demeaned(driver);
    let b = demeaned(responder);
    let var_a = a.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let b2: Vec<f64> = b.iter().map(|x| x * x).collect();
    let var_b = b2.iter().sum::<f64>() / n as f64;
    if !has_spread(var_a, driver) {
        return Err(Error::ZeroVariance { what: "driver" });
    }
    if !has_spread(var_b, responder) {
        return Err(Error::ZeroVariance { what: "responder" });
    }
    let norm = var_a.sqrt() * var_b;

    let lags: Vec<u32> =
        (1..=max_lag).filter(|t| n - *t as usize >= MIN_LAG_SAMPLES).collect();
    if lags.is_empty() {
        return Err(Error::TooFewSamples { needed: MIN_LAG_SAMPLES + 1, got: n });
    }
    let points: Vec<(f64, f64, usize)> = lags
        .par_iter()
        .map(|&t| {
            let t = t as usize;
            let m = n - t;
            let products: Vec<f64> = (0..m).map(|i| a[i] * (b2[i + t] - var_b)).collect();
            let mean_p = mean(&products);
            let se = match method {
                StderrMethod::Asymptotic => {
                    let var = products.iter().map(|p| (p - mean_p).powi(2)).sum::<f64>()
                        / (m as f64 - 1.0);
                    (var / m as f64).sqrt()
                }
                StderrMethod::BlockBootstrap { block_len, replicates, seed } => {
                    block_bootstrap_se(&products, block_len, replicates, seed, t as u64)
                }
            };
            (mean_p / norm, se / norm, m)
        })
        .collect();

    let (values, rest): (Vec<f64>, Vec<(f64, usize)>) =
        points.into_iter().map(|(v, s, m)| (v, (s, m))).unzip();
    let (stderr, n_eff) = rest.into_iter().unzip();
    Ok(LeverageCurve { lags, values, stderr, n_eff })
}

/// Standard error of the mean of `x` from a moving-block bootstrap. The
/// generator stream is keyed by `stream` so results do not depend on the
/// order in which lags are processed.
fn block_bootstrap_se(x: &[f64], block_len: usize, replicates: usize, seed: u64, stream: u64) -> f64 {
    let n = x.len();
    let block_len = block_len.min(n);
    let blocks = n.div_ceil(block_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let means: Vec<f64> = (0..replicates)
        .map(|_| {
            let mut s = 0.0;
            let mut count = 0usize;
            for _ in 0..blocks {
                let start = rng.random_range(0..=n - block_len);
                s += x[start..start + block_len].iter().sum::<f64>();
                count += block_len;
            }
            s / count as f64
        })
        .collect();
    let m = mean(&means);
    (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (replicates as f64 - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantCell {
    pub j: u32,
    pub k: u32,
    /// `<r_i r_{i+j} r_{i+k}>_c / sigma^3`.
    pub value: f64,
    pub stderr: f64,
    pub n_eff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreePointScan {
    pub cells: Vec<CumulantCell>,
    /// Fraction of cells whose value is within two standard errors of zero.
    pub fraction_within_2se: f64,
}

/// Standardized three-point cumulant at the distinct offsets `0 < j < k`.
pub fn three_point_cumulant(r: &[f64], j: u32, k: u32) -> Result<CumulantCell> {
    if j == 0 || j >= k {
        return Err(Error::invalid(format!("need 0 < j < k, got j = {j}, k = {k}")));
    }
    let n = r.len();
    if n <= 2 * k as usize {
        return Err(Error::TooFewSamples { needed: 2 * k as usize + 1, got: n });
    }
    let a = demeaned(r);
    let sigma = (a.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if !has_spread(sigma * sigma, r) {
        return Err(Error::ZeroVariance { what: "returns" });
    }
    Ok(cumulant_cell(&a, sigma, j, k))
}

fn cumulant_cell(a: &[f64], sigma: f64, j: u32, k: u32) -> CumulantCell {
    let (ju, ku) = (j as usize, k as usize);
    let m = a.len() - ku;
    let products: Vec<f64> = (0..m).map(|i| a[i] * a[i + ju] * a[i + ku]).collect();
    let mp = mean(&products);
    let var = products.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let s3 = sigma.powi(3);
    CumulantCell { j, k, value: mp / s3, stderr: (var / m as f64).sqrt() / s3, n_eff: m }
}

/// All cells `1 <= j < k <= max_span`.
pub fn three_point_cumulant_scan(r: &[f64], max_span: u32) -> Result<ThreePointScan> {
    if max_span < 2 {
        return Err(Error::invalid("max_span must be >= 2"));
    }
    let n = r.len();
    if n <= 2 * max_span as usize {
        return Err(Error::TooFewSamples { needed: 2 * max_span as usize + 1, got: n });
    }
    let a = demeaned(r);
    let sigma = (a.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if !has_spread(sigma * sigma, r) {
        return Err(Error::ZeroVariance { what: "returns" });
    }
    let pairs: Vec<(u32, u32)> =
        (1..max_span).flat_map(|j| (j + 1..=max_span).map(move |k| (j, k))).collect();
    let cells: Vec<CumulantCell> =
        pairs.par_iter().map(|&(j, k)| cumulant_cell(&a, sigma, j, k)).collect();
    let within = cells.iter().filter(|c| c.value.abs() <= 2.0 * c.stderr).count();
    Ok(ThreePointScan { fraction_within_2se: within as f64 / cells.len() as f64, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn symmetric_pairs() {
        let r: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.02 } else { -0.02 }).collect();
        let m = moment_summary(&r).unwrap();
        assert!(m.mean.abs() < 1e-17);
        assert!(m.zeta1.abs() < 1e-12);
        assert!((m.sigma - 0.02).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(moment_summary(&[0.01; 10]), Err(Error::ZeroVariance { .. })));
        assert!(matches!(moment_summary(&[0.01, 0.02, 0.03]), Err(Error::TooFewSamples { .. })));
        let x = normals(100, 1);
        assert!(matches!(leverage_correlation(&x, &x, 95), Err(Error::TooFewSamples { .. })));
        assert!(matches!(leverage_correlation(&x, &x, 0), Err(Error::InvalidInput(_))));
        assert!(matches!(leverage_correlation(&[1.0; 100], &x, 5), Err(Error::ZeroVariance { .. })));
        assert!(matches!(three_point_cumulant(&x, 3, 3), Err(Error::InvalidInput(_))));
        assert!(matches!(three_point_cumulant(&x, 0, 3), Err(Error::InvalidInput(_))));
        assert!(matches!(three_point_cumulant_scan(&x, 50), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn gaussian_moments_within_four_stderr() {
        let r: Vec<f64> = normals(1_000_000, 7).into_iter().map(|x| 0.01 * x).collect();
        let m = moment_summary(&r).unwrap();
        assert!((m.sigma - 0.01).abs() < 4.0 * m.stderr_sigma(), "{m:?}");
        assert!(m.zeta1.abs() < 4.0 * m.stderr_zeta1(), "{m:?}");
        assert!(m.kappa1.abs() < 4.0 * m.stderr_kappa1(), "{m:?}");
    }

    #[test]
    fn iid_leverage_is_null() {
        let mut pass = 0;
        let mut total = 0;
        for seed in 0..10 {
            let r = normals(20_000, 100 + seed);
            let g = leverage_correlation(&r, &r, 30).unwrap();
            for (v, s) in g.values.iter().zip(&g.stderr) {
                total += 1;
                if v.abs() < 3.0 * s {
                    pass += 1;
                }
            }
        }
        assert!(pass as f64 / total as f64 >= 0.99, "{pass}/{total}");
    }

    #[test]
    fn short_tail_lags_are_dropped() {
        let r = normals(60, 3);
        let g = leverage_correlation(&r, &r, 45).unwrap();
        assert_eq!(g.max_lag(), 30);
        assert!(g.n_eff.iter().all(|k| *k >= MIN_LAG_SAMPLES));
    }

    #[test]
    fn known_leverage_sequence() {
        // the next move doubles in size after a down day
        let mut r = Vec::new();
        for i in 0..400 {
            let shock = if i % 3 == 0 { -0.01 } else { 0.005 };
            let prev_neg = r.last().is_some_and(|x: &f64| *x < 0.0);
            r.push(if prev_neg { 2.0 * shock } else { shock });
        }
        let g = leverage_correlation(&r, &r, 2).unwrap();
        assert!(g.values[0] < 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_and_comparable() {
        let r = normals(20_000, 11);
        let asy = leverage_correlation(&r, &r, 10).unwrap();
        let b1 = leverage_correlation_with(&r, &r, 10, StderrMethod::bootstrap(5)).unwrap();
        let b2 = leverage_correlation_with(&r, &r, 10, StderrMethod::bootstrap(5)).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(asy.values, b1.values);
        for (a, b) in asy.stderr.iter().zip(&b1.stderr) {
            assert!((b / a - 1.0).abs() < 0.35, "{a} vs {b}");
        }
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let r = normals(30_000, 12);
        let par = leverage_correlation(&r, &r, 40).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let ser = pool.install(|| leverage_correlation(&r, &r, 40).unwrap());
        assert_eq!(par, ser);
    }

    #[test]
    fn iid_three_point_scan() {
        let r = normals(50_000, 21);
        let scan = three_point_cumulant_scan(&r, 12).unwrap();
        assert_eq!(scan.cells.len(), 66);
        assert!(scan.fraction_within_2se >= 0.9, "{}", scan.fraction_within_2se);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn leverage_scale_shift_and_sign(seed in any::<u64>(), scale in 0.01f64..100.0, shift in -1.0f64..1.0) {
            let x = normals(400, seed);
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.3 * x[i.saturating_sub(1)].abs()).collect();
            let base = leverage_correlation(&x, &y, 8).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
            let scaled = leverage_correlation(&xs, &ys, 8).unwrap();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let flipped = leverage_correlation(&neg, &y, 8).unwrap();
            for i in 0..base.len() {
                prop_assert!((base.values[i] - scaled.values[i]).abs() < 1e-9);
                prop_assert!((base.values[i] + flipped.values[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn zeta1_scale_and_sign(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let x: Vec<f64> = normals(200, seed).into_iter().map(|v| v + 0.4 * v * v).collect();
            let base = moment_summary(&x).unwrap().zeta1;
            let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((moment_summary(&scaled).unwrap().zeta1 - base).abs() < 1e-9);
            prop_assert!((moment_summary(&neg).unwrap().zeta1 + base).abs() < 1e-12);
        }
    }
}

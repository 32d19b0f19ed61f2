//! Synthetic markets with a known exponential leverage kernel.
//!
//! Returns are `r_t = sigma_t xi_t` with iid standard normal shocks and a
//! retarded volatility that responds linearly to past shocks:
//!
//! ```text
//! sigma_t = sigma_bar (1 - w c X_t),   X_t = sum_{k>=1} e^{-k/t_L} xi_{t-k}
//! ```
//!
//! floored at `0.05 sigma_bar`. The kernel state obeys the recursion
//! `X_{t+1} = e^{-1/t_L} (X_t + xi_t)`. Ignoring the floor, the exact lagged
//! cumulant is
//!
//! ```text
//! g(t) = -(2 w c a + 2 w^3 c^3 S a^2) / (1 + w^2 c^2 S)^{3/2},   a = e^{-t/t_L}
//! ```
//!
//! with `S = sum_k e^{-2k/t_L}`. The constant `c` solves
//! `c = (1 + w^2 c^2 S)^{3/2}`, so the leading term is exactly `-2 w e^{-t/t_L}`.
//! Three-point cumulants at distinct times vanish identically because the
//! latest shock is always independent of everything before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::estimators;
use crate::market_data::{business_days, previous_business_day, AtmVolPanel, Date, DatedValues, ReturnSeries};
use crate::smile_dynamics::{gamma_for_rule, GammaRule};

/// Volatility floor as a fraction of the baseline vol.
pub const VOL_FLOOR_FRACTION: f64 = 0.05;
/// Largest tolerated fraction of floored days.
pub const MAX_FLOORED_FRACTION: f64 = 1e-3;
/// Floor applied to simulated ATM vols.
pub const PANEL_VOL_FLOOR: f64 = 1e-4;

pub fn default_start_date() -> Date {
    Date::from_ymd_opt(2000, 1, 3).expect("valid date")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub sigma_bar: f64,
    pub w: f64,
    pub t_l: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1000 {
            return Err(Error::invalid(format!("path length {} < 1000", self.n)));
        }
        ensure_positive(self.sigma_bar, "sigma_bar")?;
        ensure_positive(self.t_l, "t_L")?;
        if !(0.0..0.5).contains(&self.w) {
            return Err(Error::invalid(format!("feedback amplitude {} outside [0, 0.5)", self.w)));
        }
        Ok(())
    }

    fn burn_in(&self) -> usize {
        (10.0 * self.t_l).ceil() as usize
    }
}

/// `S = sum_{k>=1} e^{-2k/t_L}`.
pub fn kernel_sum_sq(t_l: f64) -> f64 {
    let q = (-2.0 / t_l).exp();
    q / (1.0 - q)
}

/// Normalization `c` with `2 w c / (1 + w^2 c^2 S)^{3/2} = 2 w`.
pub fn kernel_normalization(w: f64, t_l: f64) -> Result<f64> {
    let ws = w * w * kernel_sum_sq(t_l);
    if ws == 0.0 {
        return Ok(1.0);
    }
    // the smaller root lies below the maximum of c / (1 + ws c^2)^{3/2}
    let c_max = (0.5 / ws).sqrt();
    let mut c = 1.0f64;
    for _ in 0..500 {
        let next = (1.0 + ws * c * c).powf(1.5);
        if next > c_max {
            return Err(Error::SimulationRejected(format!(
                "feedback w = {w} with t_L = {t_l} is too strong for a unit leading amplitude"
            )));
        }
        if (next - c).abs() < 1e-15 * c {
            return Ok(next);
        }
        c = next;
    }
    Ok(c)
}

/// Derives an independent 64-bit seed for `stream` from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream + 1);
    rng.next_u64()
}

struct Feedback<'a> {
    /// Pre-drawn shocks of the driving series, same time index as the path.
    shocks: &'a [f64],
    amplitude: f64,
    decay: f64,
}

/// Raw path over `total` steps. Returns the returns, own shocks and the
/// number of floored days after `burn`.
fn generate(
    total: usize,
    burn: usize,
    sigma_bar: f64,
    own_amplitude: f64,
    t_l: f64,
    seed: u64,
    cross: Option<&Feedback<'_>>,
) -> (Vec<f64>, Vec<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = (-1.0 / t_l).exp();
    let floor = VOL_FLOOR_FRACTION * sigma_bar;
    let (mut x, mut xc) = (0.0, 0.0);
    let mut returns = Vec::with_capacity(total);
    let mut shocks = Vec::with_capacity(total);
    let mut floored = 0;
    for t in 0..total {
        let cross_term = cross.map_or(0.0, |c| c.amplitude * xc);
        let raw = sigma_bar * (1.0 - own_amplitude * x - cross_term);
        if raw < floor && t >= burn {
            floored += 1;
        }
        let sigma = raw.max(floor);
        let xi: f64 = StandardNormal.sample(&mut rng);
        returns.push(sigma * xi);
        shocks.push(xi);
        x = decay * (x + xi);
        if let Some(c) = cross {
            xc = c.decay * (xc + c.shocks[t]);
        }
    }
    (returns, shocks, floored)
}

fn check_floor(floored: usize, n: usize) -> Result<()> {
    if floored as f64 > MAX_FLOORED_FRACTION * n as f64 {
        return Err(Error::SimulationRejected(format!(
            "volatility floor binds on {floored} of {n} days"
        )));
    }
    Ok(())
}

/// Single leveraged path, deterministic in `cfg.seed`. A burn-in of
/// `10 t_L` days is discarded.
pub fn simulate_leveraged(cfg: &SimConfig) -> Result<ReturnSeries> {
    cfg.validate()?;
    let c = kernel_normalization(cfg.w, cfg.t_l)?;
    let burn = cfg.burn_in();
    let (r, _, floored) = generate(cfg.n + burn, burn, cfg.sigma_bar, cfg.w * c, cfg.t_l, cfg.seed, None);
    check_floor(floored, cfg.n)?;
    ReturnSeries::with_business_days("SIM", default_start_date(), r[burn..].to_vec())
}

/// Market shocks feeding residual volatility:
/// `sigma_eps,t -= sigma_bar_eps w sum_k e^{-k/t_L} xi^Phi_{t-k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossKernel {
    pub w: f64,
    pub t_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSimConfig {
    pub market: SimConfig,
    pub betas: Vec<f64>,
    pub idio: Vec<SimConfig>,
    pub caps: Vec<f64>,
    pub cross: Option<CrossKernel>,
}

impl FactorSimConfig {
    /// Universe whose stocks share `idio` parameters; every seed is derived
    /// from `master_seed` (stream 0 for the market, `i + 1` for stock `i`).
    pub fn homogeneous(
        master_seed: u64,
        market: SimConfig,
        idio: SimConfig,
        betas: Vec<f64>,
        caps: Vec<f64>,
        cross: Option<CrossKernel>,
    ) -> Self {
        let market = SimConfig { seed: derive_seed(master_seed, 0), ..market };
        let idio = (0..betas.len())
            .map(|i| SimConfig { seed: derive_seed(master_seed, i as u64 + 1), n: market.n, ..idio })
            .collect();
        Self { market, betas, idio, caps, cross }
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.betas.len() != self.idio.len() || self.betas.len() != self.caps.len() {
            return Err(Error::invalid("betas, idio and caps must have equal length"));
        }
        for cfg in &self.idio {
            cfg.validate()?;
            if cfg.n != self.market.n {
                return Err(Error::invalid("idiosyncratic paths must match the market length"));
            }
        }
        for cap in &self.caps {
            ensure_positive(*cap, "market cap")?;
        }
        if let Some(x) = self.cross {
            ensure_positive(x.t_l, "cross t_L")?;
            if !(0.0..0.5).contains(&x.w) {
                return Err(Error::invalid("cross amplitude outside [0, 0.5)"));
            }
        }
        if self.betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("betas must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorUniverse {
    pub market: ReturnSeries,
    pub stocks: Vec<ReturnSeries>,
}

/// Market path plus `beta_i Phi + eps_i` stock paths. All paths share one
/// burn-in (the longest of the configured ones), so the market equals
/// `simulate_leveraged(&cfg.market)` whenever its own burn-in is the longest.
pub fn simulate_factor_universe(cfg: &FactorSimConfig) -> Result<FactorUniverse> {
    cfg.validate()?;
    let burn = std::iter::once(cfg.market.burn_in())
        .chain(cfg.idio.iter().map(SimConfig::burn_in))
        .chain(cfg.cross.map(|x| (10.0 * x.t_l).ceil() as usize))
        .max()
        .unwrap_or(0);
    let total = cfg.market.n + burn;
    let m = &cfg.market;
    let (phi, phi_shocks, floored) =
        generate(total, burn, m.sigma_bar, m.w * kernel_normalization(m.w, m.t_l)?, m.t_l, m.seed, None);
    check_floor(floored, m.n)?;
    let phi = phi[burn..].to_vec();
    let start = default_start_date();
    let market = ReturnSeries::with_business_days("MKT", start, phi.clone())?;

    let stocks = cfg
        .idio
        .par_iter()
        .enumerate()
        .map(|(i, idio)| {
            let c = kernel_normalization(idio.w, idio.t_l)?;
            let feedback = cfg.cross.map(|x| Feedback {
                shocks: &phi_shocks,
                amplitude: x.w,
                decay: (-1.0 / x.t_l).exp(),
            });
            let (eps, _, floored) =
                generate(total, burn, idio.sigma_bar, idio.w * c, idio.t_l, idio.seed, feedback.as_ref());
            check_floor(floored, idio.n)?;
            let r: Vec<f64> =
                phi.iter().zip(&eps[burn..]).map(|(p, e)| cfg.betas[i] * p + e).collect();
            let mut s = ReturnSeries::with_business_days(format!("STK{i:03}"), start, r)?;
            s.set_market_cap(Some(cfg.caps[i]))?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorUniverse { market, stocks })
}

/// Law followed by simulated ATM vols: `dSigma/Sigma = gamma(T) r + noise eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GammaLaw {
    Rule { rule: GammaRule, alpha: f64, t_l: f64 },
    /// One gamma per panel maturity.
    PerMaturity(Vec<f64>),
}

impl GammaLaw {
    pub fn gammas(&self, maturities: &[u32]) -> Result<Vec<f64>> {
        match self {
            GammaLaw::Rule { rule, alpha, t_l } => maturities
                .iter()
                .map(|t| gamma_for_rule(*rule, *alpha, *t_l, *t as f64))
                .collect(),
            GammaLaw::PerMaturity(g) => {
                if g.len() != maturities.len() {
                    return Err(Error::invalid("one gamma per maturity required"));
                }
                Ok(g.clone())
            }
        }
    }
}

/// ATM vol panel driven by `underlying`. The panel starts the business day
/// before the first return at the underlying's sample vol for every tenor;
/// each following date applies `Sigma <- Sigma (1 + gamma(T) r + noise eta)`,
/// floored at [`PANEL_VOL_FLOOR`].
pub fn simulate_vol_panel(
    underlying: &ReturnSeries,
    law: &GammaLaw,
    noise: f64,
    maturities: &[u32],
    seed: u64,
) -> Result<AtmVolPanel> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("noise must be >= 0"));
    }
    if maturities.is_empty() || maturities[0] == 0 || maturities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("maturities must be strictly increasing and > 0"));
    }
    let gammas = law.gammas(maturities)?;
    let base = estimators::std_dev(underlying.returns()).max(PANEL_VOL_FLOOR);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = vec![base; maturities.len()];
    let mut vols = Vec::with_capacity(underlying.len() + 1);
    vols.push(current.iter().map(|v| Some(*v)).collect::<Vec<_>>());
    for r in underlying.returns() {
        for (v, g) in current.iter_mut().zip(&gammas) {
            let eta: f64 = if noise > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
            *v = (*v * (1.0 + g * r + noise * eta)).max(PANEL_VOL_FLOOR);
        }
        vols.push(current.iter().map(|v| Some(*v)).collect());
    }
    let mut dates = Vec::with_capacity(underlying.len() + 1);
    dates.push(previous_business_day(underlying.dates()[0]));
    dates.extend_from_slice(underlying.dates());
    AtmVolPanel::new(underlying.ticker(), dates, maturities.to_vec(), vols)
}

/// Trading-day labels used by simulated series.
pub fn simulated_dates(n: usize) -> Vec<Date> {
    business_days(default_start_date(), n)
}

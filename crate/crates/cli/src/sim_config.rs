use serde::Deserialize;

use ilev::simulator::{derive_seed, CrossKernel, FactorSimConfig, SimConfig};

use crate::{SimulateArgs, DEFAULT_MATURITIES};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instrument {
    pub sigma_bar: f64,
    pub w: f64,
    pub t_l: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stock {
    pub beta: f64,
    pub market_cap: f64,
    pub sigma_bar: f64,
    pub w: f64,
    pub t_l: f64,
    /// Panel law parameter; defaults to `w / sigma0`.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cross {
    pub w: f64,
    pub t_l: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    pub seed: u64,
    pub n: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub maturities: Option<Vec<u32>>,
    pub market: Instrument,
    pub market_alpha: Option<f64>,
    #[serde(default)]
    pub stocks: Vec<Stock>,
    pub cross: Option<Cross>,
}

fn default_noise() -> f64 {
    0.01
}

impl SimFile {
    /// Flag-driven universe: betas spread over [0.6, 1.4], caps log-spaced
    /// over [1e9, 1e11] and residual feedback falling from 0.06 to 0.02
    /// with size.
    pub fn from_flags(a: &SimulateArgs) -> Self {
        let k = a.stocks;
        let frac = |i: usize| if k > 1 { i as f64 / (k - 1) as f64 } else { 0.5 };
        let stocks = (0..k)
            .map(|i| Stock {
                beta: 0.6 + 0.8 * frac(i),
                market_cap: 10f64.powf(9.0 + 2.0 * frac(i)),
                sigma_bar: 0.015,
                w: 0.06 - 0.04 * frac(i),
                t_l: 12.0,
                alpha: None,
            })
            .collect();
        Self {
            seed: a.seed,
            n: a.n,
            noise: a.noise,
            maturities: a.maturities.clone(),
            market: Instrument { sigma_bar: a.sigma_bar, w: a.w, t_l: a.t_l },
            market_alpha: None,
            stocks,
            cross: (a.cross_w > 0.0).then_some(Cross { w: a.cross_w, t_l: 12.0 }),
        }
    }

    pub fn maturities(&self) -> Vec<u32> {
        self.maturities.clone().unwrap_or_else(|| DEFAULT_MATURITIES.to_vec())
    }

    /// Seeds: stream 0 market, `1 + i` stock `i`; panels use `1000 + i`.
    pub fn factor_config(&self) -> FactorSimConfig {
        let m = &self.market;
        let market = SimConfig { n: self.n, sigma_bar: m.sigma_bar, w: m.w, t_l: m.t_l, seed: derive_seed(self.seed, 0) };
        let idio = self
            .stocks
            .iter()
            .enumerate()
            .map(|(i, s)| SimConfig {
                n: self.n,
                sigma_bar: s.sigma_bar,
                w: s.w,
                t_l: s.t_l,
                seed: derive_seed(self.seed, i as u64 + 1),
            })
            .collect();
        FactorSimConfig {
            market,
            betas: self.stocks.iter().map(|s| s.beta).collect(),
            idio,
            caps: self.stocks.iter().map(|s| s.market_cap).collect(),
            cross: self.cross.as_ref().map(|c| CrossKernel { w: c.w, t_l: c.t_l }),
        }
    }

    pub fn panel_seed(&self, instrument: usize) -> u64 {
        derive_seed(self.seed, 1000 + instrument as u64)
    }

    pub fn market_alpha(&self) -> f64 {
        self.market_alpha.unwrap_or(self.market.w / self.market.sigma_bar)
    }

    /// `(alpha, t_L)` of stock `i`'s panel law; `sigma0` is the total vol.
    pub fn stock_law(&self, i: usize) -> (f64, f64) {
        let s = &self.stocks[i];
        let sigma0 = (s.beta * self.market.sigma_bar).hypot(s.sigma_bar);
        (s.alpha.unwrap_or(s.w / sigma0), s.t_l)
    }
}

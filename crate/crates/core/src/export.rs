//! Plot-ready tables and the text formats read back by `market_data`.
//!
//! Numbers are printed with 9 significant digits through Rust's own
//! formatter, which never consults the locale, so equal inputs give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LeverageCurve;
use crate::factor_model::{FactorFit, SkewDecomposition};
use crate::market_data::{
    expect_header, parse_finite, read_file, read_table, AtmVolPanel, DatedValues, InstrumentMeta, Parsed,
    ReturnSeries,
};
use crate::regression::RegressionResult;
use crate::skew_term::{ExpLeverageFit, SkewCurve};
use crate::smile::SmilePoint;
use crate::smile_dynamics::{GammaCurve, ImpliedGamma};

/// `x` with 9 significant digits, trailing zeros removed. Plain notation
/// for exponents in `-5..9`, scientific otherwise.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let s = format!("{:.*}", (8 - exp).max(0) as usize, x);
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => fmt_num(*x),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x.into())
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|c| quote(&c.render())).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Array of objects keyed by column name, with the same number strings
    /// as the CSV form.
    pub fn to_json(&self) -> String {
        let mut out = String::from("[\n");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str("  {");
            for (j, (h, c)) in self.header.iter().zip(row).enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                let value = match c {
                    Cell::Text(s) => json_string(s),
                    Cell::Num(x) if !x.is_finite() => "null".into(),
                    other => other.render(),
                };
                let _ = write!(out, "{}: {}", json_string(h), value);
            }
            out.push('}');
            if i + 1 < self.rows.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("]\n");
        out
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn leverage_table(g: &LeverageCurve) -> Table {
    let mut t = Table::new(&["lag", "value", "stderr", "n_eff"]);
    for i in 0..g.len() {
        t.push(vec![g.lags[i].into(), g.values[i].into(), g.stderr[i].into(), g.n_eff[i].into()]);
    }
    t
}

pub fn skew_table(c: &SkewCurve) -> Table {
    let mut t = Table::new(&["T_days", "zeta", "stderr", "source"]);
    for i in 0..c.len() {
        t.push(vec![c.maturities[i].into(), c.zeta[i].into(), c.stderr[i].into(), c.source.as_str().into()]);
    }
    t
}

pub fn fit_table(f: &ExpLeverageFit) -> Table {
    let mut t = Table::new(&["A", "t_L_days", "sse", "lag_lo", "lag_hi", "no_leverage"]);
    t.push(vec![
        f.amplitude.into(),
        f.t_l.into(),
        f.sse.into(),
        f.lag_lo.into(),
        f.lag_hi.into(),
        f.no_leverage_detected.to_string().into(),
    ]);
    t
}

pub fn decomposition_table(d: &SkewDecomposition) -> Table {
    let mut t = Table::new(&[
        "T_days",
        "zeta_total",
        "stderr_total",
        "zeta_eps_eps",
        "w_phi_eps_term",
        "w_phi_phi_term",
        "recombined",
        "stderr_combined",
        "residual_term",
        "stderr_residual",
    ]);
    let (pe, pp, se) = (d.weighted_phi_eps(), d.weighted_phi_phi(), d.combined_stderr());
    for i in 0..d.total.len() {
        t.push(vec![
            d.total.maturities[i].into(),
            d.total.zeta[i].into(),
            d.total.stderr[i].into(),
            d.zeta_eps_eps.zeta[i].into(),
            pe[i].into(),
            pp[i].into(),
            d.recombined.zeta[i].into(),
            se[i].into(),
            d.residual_term.zeta[i].into(),
            d.residual_term.stderr[i].into(),
        ]);
    }
    t
}

/// One row per instrument; the scatter of `ratio` against market cap.
pub fn factor_fit_table(rows: &[(String, Option<f64>, FactorFit)]) -> Table {
    let mut t = Table::new(&["ticker", "market_cap", "beta", "sigma_phi", "sigma_eps", "sigma_total", "ratio"]);
    for (ticker, cap, f) in rows {
        t.push(vec![
            ticker.as_str().into(),
            cap.map_or(Cell::Text(String::new()), Cell::Num),
            f.beta.into(),
            f.sigma_phi.into(),
            f.sigma_eps.into(),
            f.sigma_total.into(),
            f.ratio.into(),
        ]);
    }
    t
}

pub fn smile_table(points: &[(f64, SmilePoint)]) -> Table {
    let mut t = Table::new(&["K", "M", "sigma_implied", "flag"]);
    for (k, p) in points {
        let flag = if p.in_window { "ok" } else { "outside-window" };
        t.push(vec![(*k).into(), p.moneyness.into(), p.sigma_implied.into(), flag.into()]);
    }
    t
}

pub fn gamma_table(curves: &[GammaCurve]) -> Table {
    let mut t = Table::new(&["T_days", "gamma", "rule", "alpha", "t_L_days"]);
    for c in curves {
        for (m, g) in c.maturities.iter().zip(&c.gamma) {
            t.push(vec![(*m).into(), (*g).into(), c.rule.as_str().into(), c.alpha.into(), c.t_l.into()]);
        }
    }
    t
}

pub const IMPLIED_GAMMA_HEADER: [&str; 7] = ["ticker", "T_days", "tenor_days", "gamma_imp", "stderr", "r_squared", "n"];

/// Row of an implied-gamma file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedGammaRow {
    pub ticker: String,
    pub t_days: u32,
    pub tenor_days: u32,
    pub gamma: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl ImpliedGammaRow {
    pub fn from_estimate(ticker: &str, t_days: u32, est: &ImpliedGamma) -> Self {
        Self {
            ticker: ticker.to_string(),
            t_days,
            tenor_days: est.tenor,
            gamma: est.gamma(),
            stderr: est.regression.stderr_slope,
            r_squared: est.regression.r_squared,
            n: est.regression.n,
        }
    }
}

pub fn implied_gamma_table(rows: &[ImpliedGammaRow]) -> Table {
    let mut t = Table::new(&IMPLIED_GAMMA_HEADER);
    for r in rows {
        t.push(vec![
            r.ticker.as_str().into(),
            r.t_days.into(),
            r.tenor_days.into(),
            r.gamma.into(),
            r.stderr.into(),
            r.r_squared.into(),
            r.n.into(),
        ]);
    }
    t
}

/// Reads the implied-gamma table; rows with unreadable fields are dropped.
pub fn parse_implied_gamma(text: &str) -> Result<Parsed<Vec<ImpliedGammaRow>>> {
    let (header, rows) = read_table(text)?;
    let expected: Vec<String> = IMPLIED_GAMMA_HEADER.iter().map(|h| h.to_ascii_lowercase()).collect();
    let expected: Vec<&str> = expected.iter().map(String::as_str).collect();
    expect_header(&header, &expected)?;
    let mut out = Vec::new();
    let mut dropped = 0;
    for (_, rec) in &rows {
        let row = (|| {
            if rec.len() != 7 || rec[0].is_empty() {
                return None;
            }
            Some(ImpliedGammaRow {
                ticker: rec[0].to_string(),
                t_days: rec[1].parse().ok().filter(|t| *t > 0)?,
                tenor_days: rec[2].parse().ok()?,
                gamma: parse_finite(&rec[3])?,
                stderr: parse_finite(&rec[4]).filter(|s| *s >= 0.0)?,
                r_squared: parse_finite(&rec[5])?,
                n: rec[6].parse().ok()?,
            })
        })();
        match row {
            Some(r) => out.push(r),
            None => dropped += 1,
        }
    }
    if out.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(Parsed { value: out, dropped })
}

pub fn load_implied_gamma(path: impl AsRef<Path>) -> Result<Parsed<Vec<ImpliedGammaRow>>> {
    parse_implied_gamma(&read_file(path.as_ref())?)
}

/// Market-cap regression of one maturity: `gamma = a + b log10(cap)`.
pub fn mcap_table(fits: &[(u32, RegressionResult)]) -> Table {
    let mut t = Table::new(&["T_days", "a", "b", "stderr_a", "stderr_b", "r_squared", "n"]);
    for (m, r) in fits {
        t.push(vec![
            (*m).into(),
            r.intercept.into(),
            r.slope.into(),
            r.stderr_intercept.into(),
            r.stderr_slope.into(),
            r.r_squared.into(),
            r.n.into(),
        ]);
    }
    t
}

/// `date,return`, readable by `parse_returns`.
pub fn returns_csv(s: &ReturnSeries) -> String {
    let mut out = String::from("date,return\n");
    for (d, r) in s.dates().iter().zip(s.returns()) {
        let _ = writeln!(out, "{},{}", d.format("%Y-%m-%d"), fmt_num(*r));
    }
    out
}

/// `date,maturity_days,atm_vol` with per-square-root-day vols; missing
/// cells are skipped.
pub fn vol_panel_csv(p: &AtmVolPanel) -> String {
    let mut out = String::from("date,maturity_days,atm_vol\n");
    for (di, d) in p.dates().iter().enumerate() {
        for (mi, m) in p.maturities().iter().enumerate() {
            if let Some(v) = p.vol(di, mi) {
                let _ = writeln!(out, "{},{},{}", d.format("%Y-%m-%d"), m, fmt_num(v));
            }
        }
    }
    out
}

/// `ticker,market_cap,is_index`, readable by `parse_metadata`.
pub fn metadata_csv(metas: &[InstrumentMeta]) -> String {
    let mut out = String::from("ticker,market_cap,is_index\n");
    for m in metas {
        let cap = m.market_cap.map(fmt_num).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", quote(&m.ticker), cap, m.is_index);
    }
    out
}

//! Daily return series, ATM implied-vol panels and instrument metadata.
//!
//! Conventions used across the crate:
//!
//! * returns are relative (arithmetic) close-to-close returns, `S_{t+1}/S_t - 1`,
//!   labelled with the date of the later close;
//! * time is measured in trading days, volatilities are per square-root day;
//! * missing dates are dropped, never interpolated.
//!
//! The text parsers (`parse_*`) accept arbitrary input and never panic; rows
//! that cannot be interpreted are dropped and counted in [`Parsed::dropped`].

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Date = NaiveDate;

/// Trading days per year, used only for annualized-vol conversion.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// A parsed value plus the number of input rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub dropped: usize,
}

/// Anything that carries a strictly increasing date index with one value per date.
pub trait DatedValues {
    fn dates(&self) -> &[Date];
    fn values(&self) -> &[f64];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    ticker: String,
    dates: Vec<Date>,
    returns: Vec<f64>,
    market_cap: Option<f64>,
}

impl ReturnSeries {
    /// Builds a validated series. Dates must be strictly increasing, returns
    /// finite and `> -1`, and there must be at least two observations.
    pub fn new(
        ticker: impl Into<String>,
        dates: Vec<Date>,
        returns: Vec<f64>,
        market_cap: Option<f64>,
    ) -> Result<Self> {
        if dates.len() != returns.len() {
            return Err(Error::invalid(format!(
                "{} dates for {} returns",
                dates.len(),
                returns.len()
            )));
        }
        if returns.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: returns.len() });
        }
        check_strictly_increasing(&dates)?;
        if let Some(r) = returns.iter().find(|r| !r.is_finite() || **r <= -1.0) {
            return Err(Error::invalid(format!("return {r} is not finite or is <= -1")));
        }
        if let Some(cap) = market_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(Error::invalid(format!("market cap {cap} must be positive")));
            }
        }
        Ok(Self { ticker: ticker.into(), dates, returns, market_cap })
    }

    /// Series labelled with consecutive business days starting at `start`.
    pub fn with_business_days(
        ticker: impl Into<String>,
        start: Date,
        returns: Vec<f64>,
    ) -> Result<Self> {
        let dates = business_days(start, returns.len());
        Self::new(ticker, dates, returns, None)
    }

    /// Relative returns from a dated close series; each return carries the
    /// date of the later close.
    pub fn from_prices(ticker: impl Into<String>, dates: &[Date], prices: &[f64]) -> Result<Self> {
        if dates.len() != prices.len() {
            return Err(Error::invalid("dates and prices differ in length"));
        }
        let returns = returns_from_prices(prices)?;
        Self::new(ticker, dates[1..].to_vec(), returns, None)
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn market_cap(&self) -> Option<f64> {
        self.market_cap
    }

    pub fn set_market_cap(&mut self, cap: Option<f64>) -> Result<()> {
        if let Some(c) = cap {
            crate::error::ensure_positive(c, "market cap")?;
        }
        self.market_cap = cap;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

impl DatedValues for ReturnSeries {
    fn dates(&self) -> &[Date] {
        &self.dates
    }
    fn values(&self) -> &[f64] {
        &self.returns
    }
}

/// A bare dated column, e.g. one maturity of a vol panel.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedColumn {
    pub dates: Vec<Date>,
    pub values: Vec<f64>,
}

impl DatedValues for DatedColumn {
    fn dates(&self) -> &[Date] {
        &self.dates
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmVolPanel {
    ticker: String,
    dates: Vec<Date>,
    maturities: Vec<u32>,
    /// Date-major: `vols[date][maturity]`.
    vols: Vec<Vec<Option<f64>>>,
}

impl AtmVolPanel {
    pub fn new(
        ticker: impl Into<String>,
        dates: Vec<Date>,
        maturities: Vec<u32>,
        vols: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        check_strictly_increasing(&dates)?;
        if maturities.is_empty() || maturities[0] == 0 {
            return Err(Error::invalid("maturities must be non-empty and > 0"));
        }
        if maturities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("maturities must be strictly increasing"));
        }
        if vols.len() != dates.len() || vols.iter().any(|row| row.len() != maturities.len()) {
            return Err(Error::invalid("vol matrix shape does not match dates x maturities"));
        }
        for v in vols.iter().flatten().flatten() {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("vol {v} must be positive and finite")));
            }
        }
        Ok(Self { ticker: ticker.into(), dates, maturities, vols })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn dates(&self) -> &[Date] {
        &self.dates
    }

    pub fn maturities(&self) -> &[u32] {
        &self.maturities
    }

    pub fn vol(&self, date_idx: usize, maturity_idx: usize) -> Option<f64> {
        self.vols[date_idx][maturity_idx]
    }

    /// Index of the quoted tenor closest to `t_days` and its distance in days.
    /// Ties go to the shorter tenor.
    pub fn nearest_tenor(&self, t_days: u32) -> (usize, u32) {
        let mut best = (0, self.maturities[0].abs_diff(t_days));
        for (i, m) in self.maturities.iter().enumerate().skip(1) {
            let d = m.abs_diff(t_days);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Same panel with every vol multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        crate::error::ensure_positive(factor, "scale factor")?;
        let vols = self
            .vols
            .iter()
            .map(|row| row.iter().map(|v| v.map(|x| x * factor)).collect())
            .collect();
        Self::new(self.ticker.clone(), self.dates.clone(), self.maturities.clone(), vols)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentMeta {
    pub ticker: String,
    pub market_cap: Option<f64>,
    pub is_index: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub dates: Vec<Date>,
    pub series_a: Vec<f64>,
    pub series_b: Vec<f64>,
}

impl AlignedPair {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// `r_t = S_{t+1}/S_t - 1`; output is one shorter than the input.
pub fn returns_from_prices(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: prices.len() });
    }
    if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!("non-positive price {p}")));
    }
    Ok(prices.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

/// Inner join of two dated series on their date labels, preserving order.
pub fn align<A: DatedValues + ?Sized, B: DatedValues + ?Sized>(a: &A, b: &B) -> Result<AlignedPair> {
    let (da, va) = (a.dates(), a.values());
    let (db, vb) = (b.dates(), b.values());
    if da.is_empty() || db.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut out = AlignedPair { dates: Vec::new(), series_a: Vec::new(), series_b: Vec::new() };
    let (mut i, mut j) = (0, 0);
    while i < da.len() && j < db.len() {
        match da[i].cmp(&db[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.dates.push(da[i]);
                out.series_a.push(va[i]);
                out.series_b.push(vb[j]);
                i += 1;
                j += 1;
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapBucket {
    pub label: String,
    /// Inclusive lower bound; `None` for the bottom bucket.
    pub lower: Option<f64>,
    /// Exclusive upper bound; `None` for the top bucket.
    pub upper: Option<f64>,
    pub tickers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CapBuckets {
    /// Non-empty buckets keyed by bucket index (0 = smallest caps).
    pub buckets: BTreeMap<usize, CapBucket>,
    pub unknown_cap: Vec<String>,
}

/// Assigns each instrument to the half-open bucket `[edge_i, edge_{i+1})`.
/// A cap exactly on an edge lands in the upper bucket.
pub fn bucket_by_cap(metas: &[InstrumentMeta], edges: &[f64]) -> Result<CapBuckets> {
    if edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::invalid("bucket edges must be strictly ascending"));
    }
    let mut out = CapBuckets::default();
    for meta in metas {
        let Some(cap) = meta.market_cap else {
            out.unknown_cap.push(meta.ticker.clone());
            continue;
        };
        let idx = edges.partition_point(|e| *e <= cap);
        let bucket = out.buckets.entry(idx).or_insert_with(|| CapBucket {
            label: bucket_label(edges, idx),
            lower: idx.checked_sub(1).map(|k| edges[k]),
            upper: edges.get(idx).copied(),
            tickers: Vec::new(),
        });
        bucket.tickers.push(meta.ticker.clone());
    }
    Ok(out)
}

fn bucket_label(edges: &[f64], idx: usize) -> String {
    if edges.len() == 2 {
        return ["small", "mid", "large"][idx].to_string();
    }
    match (idx.checked_sub(1).map(|k| edges[k]), edges.get(idx)) {
        (None, Some(hi)) => format!("<{hi:e}"),
        (Some(lo), Some(hi)) => format!("{lo:e}..{hi:e}"),
        (Some(lo), None) => format!(">={lo:e}"),
        (None, None) => "all".to_string(),
    }
}

/// `n` consecutive Monday-to-Friday dates starting at the first business day
/// on or after `start`.
pub fn business_days(start: Date, n: usize) -> Vec<Date> {
    let mut d = start;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// The business day strictly before `d`.
pub fn previous_business_day(d: Date) -> Date {
    let mut p = d - Duration::days(1);
    while matches!(p.weekday(), Weekday::Sat | Weekday::Sun) {
        p -= Duration::days(1);
    }
    p
}

fn check_strictly_increasing(dates: &[Date]) -> Result<()> {
    for w in dates.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateDate(w[0].to_string()));
        }
        if w[0] > w[1] {
            return Err(Error::invalid("dates must be strictly increasing"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Picks the delimiter from the header line: tab, semicolon, else comma.
fn sniff_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else if header.contains(';') {
        b';'
    } else {
        b','
    }
}

/// 1-based line number and fields.
pub(crate) type Record = (usize, csv::StringRecord);

/// Header fields, lower-cased and trimmed, plus the data records.
pub(crate) fn read_table(text: &str) -> Result<(Vec<String>, Vec<Record>)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line() as usize);
                rows.push((line, r));
            }
            // Unreadable records are dropped by the callers' counting, so keep
            // a sentinel with no fields.
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                rows.push((line, csv::StringRecord::new()));
            }
        }
    }
    Ok((header, rows))
}

pub(crate) fn expect_header(found: &[String], expected: &[&str]) -> Result<()> {
    if found.len() == expected.len() && found.iter().zip(expected).all(|(f, e)| f == e) {
        Ok(())
    } else {
        Err(Error::MalformedHeader { expected: expected.join(","), found: found.join(",") })
    }
}

fn parse_date(s: &str) -> Option<Date> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

pub(crate) fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Sorts by date and rejects duplicates.
fn sort_dated<T>(mut rows: Vec<(Date, T)>) -> Result<Vec<(Date, T)>> {
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateDate(w[0].0.to_string()));
    }
    Ok(rows)
}

/// Parses a `date,return` (or `date,log_return`) table. Rows are sorted by
/// date; rows with a missing, non-numeric, non-finite or `<= -1` return are
/// dropped.
pub fn parse_returns(text: &str, ticker: &str) -> Result<Parsed<ReturnSeries>> {
    let (header, rows) = read_table(text)?;
    let log = if expect_header(&header, &["date", "return"]).is_ok() {
        false
    } else {
        expect_header(&header, &["date", "log_return"])
            .map_err(|_| Error::MalformedHeader {
                expected: "date,return".into(),
                found: header.join(","),
            })?;
        true
    };
    let mut dropped = 0;
    let mut good = Vec::with_capacity(rows.len());
    for (_, rec) in &rows {
        let parsed = match (rec.get(0).and_then(parse_date), rec.get(1).and_then(parse_finite)) {
            (Some(d), Some(x)) if rec.len() == 2 => {
                let r = if log { x.exp_m1() } else { x };
                (r.is_finite() && r > -1.0).then_some((d, r))
            }
            _ => None,
        };
        match parsed {
            Some(row) => good.push(row),
            None => dropped += 1,
        }
    }
    let good = sort_dated(good)?;
    if good.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: good.len() });
    }
    let (dates, returns) = good.into_iter().unzip();
    Ok(Parsed { value: ReturnSeries::new(ticker, dates, returns, None)?, dropped })
}

pub fn load_returns(path: impl AsRef<Path>, ticker: &str) -> Result<Parsed<ReturnSeries>> {
    parse_returns(&read_file(path.as_ref())?, ticker)
}

/// Parses a `date,close` table into returns. Unparsable rows are dropped, a
/// non-positive close is an error.
pub fn parse_prices(text: &str, ticker: &str) -> Result<Parsed<ReturnSeries>> {
    let (header, rows) = read_table(text)?;
    expect_header(&header, &["date", "close"])?;
    let mut dropped = 0;
    let mut good = Vec::with_capacity(rows.len());
    for (_, rec) in &rows {
        match (rec.get(0).and_then(parse_date), rec.get(1).and_then(parse_finite)) {
            (Some(d), Some(p)) if rec.len() == 2 => good.push((d, p)),
            _ => dropped += 1,
        }
    }
    let good = sort_dated(good)?;
    let (dates, prices): (Vec<Date>, Vec<f64>) = good.into_iter().unzip();
    Ok(Parsed { value: ReturnSeries::from_prices(ticker, &dates, &prices)?, dropped })
}

pub fn load_prices(path: impl AsRef<Path>, ticker: &str) -> Result<Parsed<ReturnSeries>> {
    parse_prices(&read_file(path.as_ref())?, ticker)
}

/// Parses a long-form `date,maturity_days,atm_vol` table. With `annualized`
/// the vols are divided by `sqrt(252)` to get per-square-root-day units.
pub fn parse_vol_panel(text: &str, ticker: &str, annualized: bool) -> Result<Parsed<AtmVolPanel>> {
    let (header, rows) = read_table(text)?;
    expect_header(&header, &["date", "maturity_days", "atm_vol"])?;
    let scale = if annualized { TRADING_DAYS_PER_YEAR.sqrt().recip() } else { 1.0 };
    let mut dropped = 0;
    let mut cells: BTreeMap<(Date, u32), f64> = BTreeMap::new();
    for (line, rec) in &rows {
        let cell = match (
            rec.get(0).and_then(parse_date),
            rec.get(1).and_then(|s| s.parse::<u32>().ok()).filter(|m| *m > 0),
            rec.get(2).and_then(parse_finite).map(|v| v * scale).filter(|v| *v > 0.0),
        ) {
            (Some(d), Some(m), Some(v)) if rec.len() == 3 => ((d, m), v),
            _ => {
                dropped += 1;
                continue;
            }
        };
        if cells.insert(cell.0, cell.1).is_some() {
            return Err(Error::Parse {
                line: *line,
                message: format!("duplicate entry for {} at maturity {}", cell.0 .0, cell.0 .1),
            });
        }
    }
    if cells.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut dates: Vec<Date> = cells.keys().map(|k| k.0).collect();
    dates.dedup();
    let mut maturities: Vec<u32> = cells.keys().map(|k| k.1).collect();
    maturities.sort_unstable();
    maturities.dedup();
    let vols = dates
        .iter()
        .map(|d| maturities.iter().map(|m| cells.get(&(*d, *m)).copied()).collect())
        .collect();
    Ok(Parsed { value: AtmVolPanel::new(ticker, dates, maturities, vols)?, dropped })
}

pub fn load_vol_panel(
    path: impl AsRef<Path>,
    ticker: &str,
    annualized: bool,
) -> Result<Parsed<AtmVolPanel>> {
    parse_vol_panel(&read_file(path.as_ref())?, ticker, annualized)
}

/// Parses `ticker,market_cap,is_index`. An empty cap means unknown; rows with
/// an invalid cap or flag are dropped.
pub fn parse_metadata(text: &str) -> Result<Parsed<Vec<InstrumentMeta>>> {
    let (header, rows) = read_table(text)?;
    expect_header(&header, &["ticker", "market_cap", "is_index"])?;
    let mut dropped = 0;
    let mut out = Vec::with_capacity(rows.len());
    for (_, rec) in &rows {
        let ticker = rec.get(0).filter(|t| !t.is_empty());
        let cap = match rec.get(1) {
            Some("") => Some(None),
            Some(s) => parse_finite(s).filter(|c| *c > 0.0).map(Some),
            None => None,
        };
        let is_index = match rec.get(2).map(str::to_ascii_lowercase).as_deref() {
            Some("true" | "1" | "yes") => Some(true),
            Some("false" | "0" | "no" | "") => Some(false),
            _ => None,
        };
        match (ticker, cap, is_index) {
            (Some(t), Some(c), Some(i)) if rec.len() == 3 => {
                out.push(InstrumentMeta { ticker: t.to_string(), market_cap: c, is_index: i })
            }
            _ => dropped += 1,
        }
    }
    Ok(Parsed { value: out, dropped })
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<Parsed<Vec<InstrumentMeta>>> {
    parse_metadata(&read_file(path.as_ref())?)
}

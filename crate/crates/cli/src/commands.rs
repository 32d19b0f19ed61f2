use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use ilev::estimators::{leverage_correlation, leverage_correlation_with, moment_summary, LeverageCurve, StderrMethod};
use ilev::export::{self, ImpliedGammaRow, Table};
use ilev::factor_model::{decompose_factor_series, fit_factor, SkewDecomposition};
use ilev::market_data::{load_metadata, load_returns, load_vol_panel, InstrumentMeta, ReturnSeries};
use ilev::simulator::{simulate_factor_universe, simulate_vol_panel, GammaLaw};
use ilev::skew_term::{fit_exponential, skew_curve_closed_form, skew_curve_direct, skew_curve_discrete, ExpLeverageFit};
use ilev::smile::{smile_at_strikes, ExpansionOrder, SmileParams};
use ilev::smile_dynamics::{
    alpha_from, estimate_gamma_implied, mcap_regression, GammaCurve, GammaRule, ImpliedGammaOptions,
};

use crate::sim_config::SimFile;
use crate::{usage, Cli, Command, Format, GlobalOpts, Order, SimulateArgs, SkewMethod, DEFAULT_MATURITIES};

const FIT_MAX_LAG: u32 = 250;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Leverage { returns, ticker, max_lag, bootstrap_seed } => {
            cmd_leverage(g, returns, ticker.as_deref(), *max_lag, *bootstrap_seed)
        }
        Command::Skew { returns, maturities, method, amplitude, t_l, zeta1 } => {
            cmd_skew(g, returns.as_deref(), &grid(maturities), *method, *amplitude, *t_l, *zeta1)
        }
        Command::Decompose { stock, market, maturities, metadata } => {
            cmd_decompose(g, stock, market, &grid(maturities), metadata.as_deref())
        }
        Command::Gamma { amplitude, t_l, sigma0, returns, rules, maturities } => {
            cmd_gamma(g, *amplitude, *t_l, *sigma0, returns.as_deref(), rules, &grid(maturities))
        }
        Command::GammaImplied { panel, returns, maturities, vol_annualized, absolute, winsorize } => {
            let opts = ImpliedGammaOptions { absolute: *absolute, winsorize: *winsorize };
            cmd_gamma_implied(g, panel, returns, &grid(maturities), *vol_annualized, opts)
        }
        Command::Mcap { gamma, metadata, maturities } => cmd_mcap(g, gamma, metadata, maturities.as_deref()),
        Command::Smile { sigma, zeta, kappa, t_days, rate, spot, strikes, order, window } => {
            let p = SmileParams { sigma: *sigma, zeta: *zeta, kappa: *kappa, t_days: *t_days, rate: *rate, spot: *spot };
            cmd_smile(g, &p, strikes, *order, *window)
        }
        Command::Simulate(args) => cmd_simulate(g, args),
    }
}

fn grid(m: &Option<Vec<u32>>) -> Vec<u32> {
    let mut v = m.clone().unwrap_or_else(|| DEFAULT_MATURITIES.to_vec());
    v.sort_unstable();
    v.dedup();
    v
}

fn output_path(g: &GlobalOpts, name: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| g.out_dir.join(format!("{name}.{}", g.format.ext())))
}

/// `out.csv` -> `out.<suffix>.csv`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}{ext}"))
}

fn write_table(g: &GlobalOpts, path: &Path, table: &Table) -> Result<()> {
    let text = match g.format {
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    };
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ticker_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "X".into())
}

fn read_returns(path: &Path, ticker: Option<&str>) -> Result<ReturnSeries> {
    let t = ticker.map(str::to_string).unwrap_or_else(|| ticker_of(path));
    let parsed = load_returns(path, &t).with_context(|| format!("loading {}", path.display()))?;
    if parsed.dropped > 0 {
        eprintln!("warning: {}: dropped {} unreadable rows", path.display(), parsed.dropped);
    }
    Ok(parsed.value)
}

fn read_metadata(path: &Path) -> Result<Vec<InstrumentMeta>> {
    let parsed = load_metadata(path).with_context(|| format!("loading {}", path.display()))?;
    if parsed.dropped > 0 {
        eprintln!("warning: {}: dropped {} unreadable rows", path.display(), parsed.dropped);
    }
    Ok(parsed.value)
}

/// Two-pass fit of the leverage curve of `r`.
fn fit_leverage(r: &ReturnSeries) -> Result<(LeverageCurve, ExpLeverageFit)> {
    let max_lag = FIT_MAX_LAG.min((r.len().saturating_sub(11)) as u32).max(1);
    let g = leverage_correlation(r.returns(), r.returns(), max_lag)?;
    let fit = fit_exponential(&g, None)?;
    Ok((g, fit))
}

fn cmd_leverage(g: &GlobalOpts, path: &Path, ticker: Option<&str>, max_lag: u32, seed: Option<u64>) -> Result<()> {
    let r = read_returns(path, ticker)?;
    let method = seed.map_or(StderrMethod::Asymptotic, StderrMethod::bootstrap);
    let curve = leverage_correlation_with(r.returns(), r.returns(), max_lag, method)?;
    let out = output_path(g, "leverage");
    write_table(g, &out, &export::leverage_table(&curve))?;
    println!("{}: {} days, {} lags written to {}", r.ticker(), r.len(), curve.len(), out.display());
    match fit_exponential(&curve, None) {
        Ok(fit) => {
            let fit_out = sibling(&out, "fit");
            write_table(g, &fit_out, &export::fit_table(&fit))?;
            println!(
                "fit: A = {}, t_L = {} days (lags {}..{}){}",
                export::fmt_num(fit.amplitude),
                export::fmt_num(fit.t_l),
                fit.lag_lo,
                fit.lag_hi,
                if fit.no_leverage_detected { ", no negative leverage detected" } else { "" }
            );
        }
        Err(e) => println!("fit: skipped ({e})"),
    }
    Ok(())
}

fn cmd_skew(
    g: &GlobalOpts,
    returns: Option<&Path>,
    maturities: &[u32],
    method: SkewMethod,
    amplitude: Option<f64>,
    t_l: Option<f64>,
    zeta1: Option<f64>,
) -> Result<()> {
    if method != SkewMethod::ClosedForm && (amplitude.is_some() || t_l.is_some()) {
        return Err(usage("--A and --t-l only apply to --method closed-form"));
    }
    if amplitude.is_some() != t_l.is_some() {
        return Err(usage("--A and --t-l must be given together"));
    }
    let series = returns.map(|p| read_returns(p, None)).transpose()?;
    let curve = match method {
        SkewMethod::Discrete | SkewMethod::Direct => {
            let Some(r) = &series else {
                return Err(usage("--returns is required for this method"));
            };
            if method == SkewMethod::Direct {
                skew_curve_direct(r.returns(), maturities)?
            } else {
                let m = moment_summary(r.returns())?;
                let max_lag = maturities.last().copied().unwrap_or(1).saturating_sub(1).max(1);
                let lev = leverage_correlation(r.returns(), r.returns(), max_lag)?;
                skew_curve_discrete(zeta1.unwrap_or(m.zeta1), m.stderr_zeta1(), &lev, maturities)?
            }
        }
        SkewMethod::ClosedForm => {
            let (a, tl, z1) = match (amplitude, t_l, &series) {
                (Some(a), Some(tl), s) => {
                    let z1 = match (zeta1, s) {
                        (Some(z), _) => z,
                        (None, Some(r)) => moment_summary(r.returns())?.zeta1,
                        (None, None) => 0.0,
                    };
                    (a, tl, z1)
                }
                (_, _, Some(r)) => {
                    let (_, fit) = fit_leverage(r)?;
                    let z1 = match zeta1 {
                        Some(z) => z,
                        None => moment_summary(r.returns())?.zeta1,
                    };
                    (fit.amplitude, fit.t_l, z1)
                }
                _ => return Err(usage("closed form needs --A and --t-l, or --returns")),
            };
            println!("closed form with zeta1 = {}, A = {}, t_L = {}", export::fmt_num(z1), export::fmt_num(a), export::fmt_num(tl));
            skew_curve_closed_form(z1, a, tl, maturities)?
        }
    };
    let out = output_path(g, "skew");
    write_table(g, &out, &export::skew_table(&curve))?;
    for (t, z) in curve.maturities.iter().zip(&curve.zeta) {
        println!("zeta({t}) = {}", export::fmt_num(*z));
    }
    println!("{} maturities written to {}", curve.len(), out.display());
    Ok(())
}

fn cmd_decompose(
    g: &GlobalOpts,
    stocks: &[PathBuf],
    market: &Path,
    maturities: &[u32],
    metadata: Option<&Path>,
) -> Result<()> {
    let market = read_returns(market, None)?;
    let caps: BTreeMap<String, f64> = match metadata {
        Some(p) => read_metadata(p)?.into_iter().filter_map(|m| m.market_cap.map(|c| (m.ticker, c))).collect(),
        None => BTreeMap::new(),
    };
    let stocks = stocks.iter().map(|p| read_returns(p, None)).collect::<Result<Vec<_>>>()?;
    let results: Vec<SkewDecomposition> = stocks
        .par_iter()
        .map(|s| {
            let fs = fit_factor(s, &market).with_context(|| format!("factor fit for {}", s.ticker()))?;
            decompose_factor_series(&fs, maturities).with_context(|| format!("decomposing {}", s.ticker()))
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new(&["ticker"]);
    let mut fits = Vec::new();
    for (s, d) in stocks.iter().zip(&results) {
        let t = export::decomposition_table(d);
        if table.header.len() == 1 {
            table.header.extend(t.header.iter().cloned());
        }
        for row in t.rows {
            let mut full = vec![s.ticker().into()];
            full.extend(row);
            table.push(full);
        }
        let cap = s.market_cap().or_else(|| caps.get(s.ticker()).copied());
        fits.push((s.ticker().to_string(), cap, d.fit));
        println!(
            "{}: beta = {}, ratio = {}, zeta({}) total = {}, recombined = {}",
            s.ticker(),
            export::fmt_num(d.fit.beta),
            export::fmt_num(d.fit.ratio),
            d.total.maturities[0],
            export::fmt_num(d.total.zeta[0]),
            export::fmt_num(d.recombined.zeta[0])
        );
    }
    let out = output_path(g, "decompose");
    write_table(g, &out, &table)?;
    let ratio_out = sibling(&out, "factors");
    write_table(g, &ratio_out, &export::factor_fit_table(&fits))?;
    println!("decomposition written to {}, factor fits to {}", out.display(), ratio_out.display());
    Ok(())
}

fn cmd_gamma(
    g: &GlobalOpts,
    amplitude: Option<f64>,
    t_l: Option<f64>,
    sigma0: Option<f64>,
    returns: Option<&Path>,
    rules: &[String],
    maturities: &[u32],
) -> Result<()> {
    let rules = rules
        .iter()
        .map(|r| r.parse::<GammaRule>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if rules.contains(&GammaRule::Implied) {
        return Err(usage("the implied rule is estimated by `gamma-implied`"));
    }
    let (a, tl, s0) = match (amplitude, t_l, sigma0, returns) {
        (Some(a), Some(tl), Some(s0), None) => (a, tl, s0),
        (None, None, None, Some(p)) => {
            let r = read_returns(p, None)?;
            let (_, fit) = fit_leverage(&r)?;
            (fit.amplitude, fit.t_l, moment_summary(r.returns())?.sigma)
        }
        _ => return Err(usage("give either --A, --t-l and --sigma0, or --returns")),
    };
    let alpha = alpha_from(a, s0)?;
    let curves = rules
        .iter()
        .map(|r| GammaCurve::from_rule(*r, alpha, tl, maturities))
        .collect::<ilev::Result<Vec<_>>>()?;
    let out = output_path(g, "gamma");
    write_table(g, &out, &export::gamma_table(&curves))?;
    println!(
        "alpha = {} (A = {}, sigma0 = {}), t_L = {} days",
        export::fmt_num(alpha),
        export::fmt_num(a),
        export::fmt_num(s0),
        export::fmt_num(tl)
    );
    println!("{} curves written to {}", curves.len(), out.display());
    Ok(())
}

fn cmd_gamma_implied(
    g: &GlobalOpts,
    panels: &[PathBuf],
    returns: &[PathBuf],
    maturities: &[u32],
    annualized: bool,
    opts: ImpliedGammaOptions,
) -> Result<()> {
    if panels.len() != returns.len() {
        return Err(usage("give one --panel per --returns"));
    }
    let rows: Vec<Vec<ImpliedGammaRow>> = panels
        .par_iter()
        .zip(returns)
        .map(|(pp, rp)| {
            let r = read_returns(rp, None)?;
            let parsed = load_vol_panel(pp, r.ticker(), annualized).with_context(|| format!("loading {}", pp.display()))?;
            if parsed.dropped > 0 {
                eprintln!("warning: {}: dropped {} unreadable rows", pp.display(), parsed.dropped);
            }
            maturities
                .iter()
                .map(|t| {
                    let est = estimate_gamma_implied(&parsed.value, &r, *t, opts)
                        .with_context(|| format!("{} at T = {t}", r.ticker()))?;
                    Ok(ImpliedGammaRow::from_estimate(r.ticker(), *t, &est))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ImpliedGammaRow> = rows.into_iter().flatten().collect();
    for r in &rows {
        if r.tenor_days != r.t_days {
            eprintln!("warning: {} T = {} uses quoted tenor {}", r.ticker, r.t_days, r.tenor_days);
        }
    }
    let out = output_path(g, "gamma_implied");
    write_table(g, &out, &export::implied_gamma_table(&rows))?;
    for r in &rows {
        println!("{} T = {}: gamma = {} +- {}", r.ticker, r.t_days, export::fmt_num(r.gamma), export::fmt_num(r.stderr));
    }
    println!("{} estimates written to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_mcap(g: &GlobalOpts, gamma: &Path, metadata: &Path, maturities: Option<&[u32]>) -> Result<()> {
    let parsed = export::load_implied_gamma(gamma).with_context(|| format!("loading {}", gamma.display()))?;
    if parsed.dropped > 0 {
        eprintln!("warning: {}: dropped {} unreadable rows", gamma.display(), parsed.dropped);
    }
    let caps: BTreeMap<String, f64> = read_metadata(metadata)?
        .into_iter()
        .filter(|m| !m.is_index)
        .filter_map(|m| m.market_cap.map(|c| (m.ticker, c)))
        .collect();
    let wanted: BTreeSet<u32> = match maturities {
        Some(m) => m.iter().copied().collect(),
        None => parsed.value.iter().map(|r| r.t_days).collect(),
    };
    let mut fits = Vec::new();
    for t in wanted {
        let points: Vec<(f64, f64)> = parsed
            .value
            .iter()
            .filter(|r| r.t_days == t)
            .filter_map(|r| caps.get(&r.ticker).map(|c| (*c, r.gamma)))
            .collect();
        if points.is_empty() {
            bail!("no stock with a known market cap has an estimate at T = {t}");
        }
        let fit = mcap_regression(&points).with_context(|| format!("regression at T = {t}"))?;
        println!(
            "T = {t}: gamma = {} + {} log10(cap) over {} stocks",
            export::fmt_num(fit.intercept),
            export::fmt_num(fit.slope),
            fit.n
        );
        fits.push((t, fit));
    }
    let out = output_path(g, "mcap");
    write_table(g, &out, &export::mcap_table(&fits))?;
    println!("{} regressions written to {}", fits.len(), out.display());
    Ok(())
}

fn cmd_smile(g: &GlobalOpts, p: &SmileParams, strikes: &[f64], order: Order, window: f64) -> Result<()> {
    if window.is_nan() || window <= 0.0 {
        return Err(usage("--window must be > 0"));
    }
    let order = match order {
        Order::Skew => ExpansionOrder::SkewOnly,
        Order::SkewKurtosis => ExpansionOrder::SkewKurtosis,
    };
    let points = smile_at_strikes(strikes, p, order, window)?;
    let outside = points.iter().filter(|(_, s)| !s.in_window).count();
    if outside > 0 {
        eprintln!("warning: {outside} strikes lie outside |M| <= {window}");
    }
    let out = output_path(g, "smile");
    write_table(g, &out, &export::smile_table(&points))?;
    println!("{} strikes written to {}", points.len(), out.display());
    Ok(())
}

fn cmd_simulate(g: &GlobalOpts, args: &SimulateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SimFile>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SimFile::from_flags(args),
    };
    let maturities = cfg.maturities();
    let dir = g.out.clone().unwrap_or_else(|| g.out_dir.clone());
    let universe = simulate_factor_universe(&cfg.factor_config())?;

    let mut laws = vec![(universe.market.clone(), cfg.market_alpha(), cfg.market.t_l)];
    for (i, s) in universe.stocks.iter().enumerate() {
        let (alpha, t_l) = cfg.stock_law(i);
        laws.push((s.clone(), alpha, t_l));
    }
    let panels = laws
        .par_iter()
        .enumerate()
        .map(|(i, (series, alpha, t_l))| {
            let law = GammaLaw::Rule { rule: GammaRule::Theoretical, alpha: *alpha, t_l: *t_l };
            let panel = simulate_vol_panel(series, &law, cfg.noise, &maturities, cfg.panel_seed(i))?;
            Ok((panel, law.gammas(&maturities)?))
        })
        .collect::<ilev::Result<Vec<_>>>()?;

    let mut metas = Vec::new();
    let mut truth = Table::new(&["ticker", "T_days", "gamma", "alpha", "t_L_days"]);
    for ((series, alpha, t_l), (panel, gammas)) in laws.iter().zip(&panels) {
        let name = series.ticker();
        write_text(&dir.join(format!("{name}.csv")), &export::returns_csv(series))?;
        write_text(&dir.join(format!("{name}_panel.csv")), &export::vol_panel_csv(panel))?;
        metas.push(InstrumentMeta {
            ticker: name.to_string(),
            market_cap: series.market_cap(),
            is_index: series.market_cap().is_none(),
        });
        for (t, gm) in maturities.iter().zip(gammas) {
            truth.push(vec![name.into(), (*t).into(), (*gm).into(), (*alpha).into(), (*t_l).into()]);
        }
    }
    write_text(&dir.join("metadata.csv"), &export::metadata_csv(&metas))?;
    write_text(&dir.join("gamma_true.csv"), &truth.to_csv())?;
    println!(
        "simulated {} instruments over {} days (seed {}) into {}",
        metas.len(),
        cfg.n,
        cfg.seed,
        dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{CommandFactory, Parser};

    use crate::exit_status;

    fn demo(file: &str) -> String {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/demo").join(file).display().to_string()
    }

    /// Parses and runs `args` with output under `dir`; `Err` carries the exit status.
    fn ilev(dir: &Path, args: &[&str]) -> std::result::Result<(), u8> {
        let mut argv = vec!["ilev", "--out-dir", dir.to_str().unwrap()];
        argv.extend_from_slice(args);
        let cli = Cli::try_parse_from(argv).map_err(|e| e.exit_code() as u8)?;
        run(&cli).map_err(|e| exit_status(&e))
    }

    fn read(dir: &Path, name: &str) -> String {
        fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn leverage_on_demo_writes_curve_and_fit() {
        let dir = tempfile::tempdir().unwrap();
        ilev(dir.path(), &["leverage", "--returns", &demo("MKT.csv"), "--max-lag", "60"]).unwrap();
        let table = read(dir.path(), "leverage.csv");
        assert_eq!(table.lines().next(), Some("lag,value,stderr,n_eff"));
        assert_eq!(table.lines().count(), 61);
        assert!(read(dir.path(), "leverage.fit.csv").starts_with("A,t_L_days,"));
    }

    #[test]
    fn usage_errors_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let m = demo("MKT.csv");
        for args in [
            vec!["leverage", "--returns", m.as_str(), "--max-lag", "0"],
            vec!["skew", "--returns", m.as_str(), "--method", "discrete", "--A", "0.1"],
            vec!["skew", "--method", "closed-form", "--A", "0.1"],
            vec!["gamma", "--A", "0.16"],
            vec!["gamma", "--A", "0.16", "--t-l", "20", "--sigma0", "0.01", "--rules", "bogus"],
            vec!["gamma", "--A", "0.16", "--t-l", "20", "--sigma0", "0.01", "--rules", "implied"],
            vec!["gamma-implied", "--panel", "a", "--panel", "b", "--returns", "c"],
            vec!["nonsense"],
        ] {
            assert_eq!(ilev(dir.path(), &args), Err(2), "{args:?}");
        }
    }

    #[test]
    fn data_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "").unwrap();
        assert_eq!(ilev(dir.path(), &["leverage", "--returns", empty.to_str().unwrap()]), Err(1));
        assert_eq!(ilev(dir.path(), &["leverage", "--returns", "/nonexistent/x.csv"]), Err(1));
        assert_eq!(ilev(dir.path(), &["gamma", "--A=-1", "--t-l", "20", "--sigma0", "0.01"]), Err(1));
    }

    #[test]
    fn closed_form_skew_as_json() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.json");
        let args = ["skew", "--method", "closed-form", "--A", "0.16", "--t-l", "31", "--maturities", "62"];
        let mut args = args.to_vec();
        args.extend(["--format", "json", "--out", out.to_str().unwrap()]);
        ilev(dir.path(), &args).unwrap();
        let text = fs::read_to_string(out).unwrap();
        assert!(text.contains("\"zeta\": -1.07275668"), "{text}");
        assert!(text.contains("\"source\": \"closed-form\""));
    }

    #[test]
    fn gamma_curves_per_rule() {
        let dir = tempfile::tempdir().unwrap();
        ilev(dir.path(), &["gamma", "--A", "0.16", "--t-l", "20", "--sigma0", "0.01", "--maturities", "5,21"]).unwrap();
        let text = read(dir.path(), "gamma.csv");
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "T_days,gamma,rule,alpha,t_L_days");
        assert_eq!(rows.len(), 7);
        assert!(rows.contains(&"5,0,sticky-delta,8,20"));
    }

    #[test]
    fn smile_flags_outside_window() {
        let dir = tempfile::tempdir().unwrap();
        ilev(dir.path(), &["smile", "--sigma", "0.01", "--zeta", "-0.6", "--T", "25", "--strikes", "80,100,105"]).unwrap();
        let text = read(dir.path(), "smile.csv");
        let rows: Vec<&str> = text.lines().collect();
        assert!(rows[1].starts_with("80,-4,") && rows[1].ends_with("outside-window"));
        assert_eq!(rows[2], "100,0,0.01,ok");
        assert_eq!(rows[3], "105,1,0.009,ok");
    }

    #[test]
    fn closed_loop_recovers_configured_gamma() {
        let dir = tempfile::tempdir().unwrap();
        let sim = dir.path().join("sim");
        let s = sim.to_str().unwrap();
        ilev(dir.path(), &["simulate", "--n", "3000", "--seed", "3", "--maturities", "21,63", "--out", s]).unwrap();
        let (panel, returns) = (format!("{s}/MKT_panel.csv"), format!("{s}/MKT.csv"));
        ilev(dir.path(), &["gamma-implied", "--panel", &panel, "--returns", &returns, "--maturities", "21,63"]).unwrap();
        let est = read(dir.path(), "gamma_implied.csv");
        let truth = read(&sim, "gamma_true.csv");
        for (e, t) in est.lines().skip(1).zip(truth.lines().skip(1)) {
            let e: Vec<&str> = e.split(',').collect();
            let t: Vec<&str> = t.split(',').collect();
            assert_eq!(e[1], t[1]);
            let (g, se, truth): (f64, f64, f64) = (e[3].parse().unwrap(), e[4].parse().unwrap(), t[2].parse().unwrap());
            assert!((g - truth).abs() < 4.0 * se, "{g} vs {truth} (se {se})");
        }
    }

    #[test]
    fn simulate_from_config_matches_demo() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/demo.toml");
        ilev(dir.path(), &["simulate", "--config", cfg.to_str().unwrap()]).unwrap();
        for name in ["MKT.csv", "STK002_panel.csv", "metadata.csv", "gamma_true.csv"] {
            assert_eq!(read(dir.path(), name), fs::read_to_string(demo(name)).unwrap(), "{name}");
        }
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, "seed = 1\nn = 2000\nbogus = 3\n").unwrap();
        assert_eq!(ilev(dir.path(), &["simulate", "--config", bad.to_str().unwrap()]), Err(2));
    }

    #[test]
    fn decompose_and_mcap_on_demo() {
        let dir = tempfile::tempdir().unwrap();
        let (market, meta) = (demo("MKT.csv"), demo("metadata.csv"));
        let stocks: Vec<String> = (0..4).map(|i| demo(&format!("STK{i:03}.csv"))).collect();
        let panels: Vec<String> = (0..4).map(|i| demo(&format!("STK{i:03}_panel.csv"))).collect();

        let mut args = vec!["decompose", "--market", &market, "--metadata", &meta];
        for s in &stocks {
            args.extend(["--stock", s.as_str()]);
        }
        ilev(dir.path(), &args).unwrap();
        let factors = read(dir.path(), "decompose.factors.csv");
        assert_eq!(factors.lines().count(), 5);
        assert!(factors.lines().nth(1).unwrap().starts_with("STK000,800000000,"));
        assert_eq!(read(dir.path(), "decompose.csv").lines().count(), 1 + 4 * DEFAULT_MATURITIES.len());

        let mut args = vec!["gamma-implied", "--maturities", "21,252"];
        for (p, s) in panels.iter().zip(&stocks) {
            args.extend(["--panel", p.as_str(), "--returns", s.as_str()]);
        }
        ilev(dir.path(), &args).unwrap();
        let g = dir.path().join("gamma_implied.csv");
        ilev(dir.path(), &["mcap", "--gamma", g.to_str().unwrap(), "--metadata", &meta]).unwrap();
        let text = read(dir.path(), "mcap.csv");
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("T_days,a,b,stderr_a,stderr_b,r_squared,n\n21,"));
    }

    #[test]
    fn inputs_are_not_modified() {
        let dir = tempfile::tempdir().unwrap();
        let before = fs::read(demo("MKT.csv")).unwrap();
        ilev(dir.path(), &["skew", "--returns", &demo("MKT.csv"), "--method", "direct"]).unwrap();
        assert_eq!(fs::read(demo("MKT.csv")).unwrap(), before);
    }

    #[test]
    fn help_lists_pipelines() {
        let help = Cli::command().render_long_help().to_string();
        for cmd in ["leverage", "skew", "decompose", "gamma-implied", "mcap", "smile", "simulate"] {
            assert!(help.contains(&format!("  {cmd} ")), "{cmd}");
        }
        Cli::command().debug_assert();
    }
}

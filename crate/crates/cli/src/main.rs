use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod sim_config;

pub const DEFAULT_MATURITIES: [u32; 7] = [5, 10, 21, 42, 63, 126, 252];

const PIPELINES: &str = "\
Pipelines (every command writes a plot-ready table):
  leverage        returns -> leverage correlation g(t) per lag, plus exponential fit (A, t_L)
  skew            returns -> skewness term structure zeta(T) (lag sum, closed form or direct)
  decompose       stock + market returns -> one-factor skew decomposition and beta ratio per stock
  gamma           (A, t_L, sigma0) or returns -> model implied-leverage curves per rule
  gamma-implied   ATM vol panel + returns -> regression estimate of gamma(T)
  mcap            implied-gamma table + metadata -> gamma(T) = a + b log10(cap)
  smile           sigma, zeta, kappa -> implied vol against strike near the money
  simulate        synthetic returns, ATM vol panels and metadata for closed-loop runs

Exit status: 0 on success, 1 for data errors, 2 for usage errors.";

#[derive(Parser, Debug)]
#[command(name = "ilev", version, about = "Leverage, skew term structure and implied leverage analysis", after_help = PIPELINES)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Output file (default: <ILEV_OUT_DIR>/<command>.<format>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory used when --out is not given.
    #[arg(long, global = true, env = "ILEV_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads for per-instrument work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkewMethod {
    Discrete,
    ClosedForm,
    Direct,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Skew,
    SkewKurtosis,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Leverage correlation function and its exponential fit.
    Leverage {
        #[arg(long)]
        returns: PathBuf,
        #[arg(long)]
        ticker: Option<String>,
        #[arg(long, default_value_t = 250, value_parser = clap::value_parser!(u32).range(1..))]
        max_lag: u32,
        /// Block-bootstrap standard errors with this seed.
        #[arg(long)]
        bootstrap_seed: Option<u64>,
    },
    /// Skewness term structure.
    #[command(allow_negative_numbers = true)]
    Skew {
        #[arg(long)]
        returns: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
        maturities: Option<Vec<u32>>,
        #[arg(long, value_enum, default_value_t = SkewMethod::Discrete)]
        method: SkewMethod,
        /// Leverage amplitude for the closed form (fitted from --returns if absent).
        #[arg(long = "A")]
        amplitude: Option<f64>,
        #[arg(long)]
        t_l: Option<f64>,
        #[arg(long)]
        zeta1: Option<f64>,
    },
    /// One-factor decomposition of stock skew.
    Decompose {
        /// Stock returns file; repeat for several stocks.
        #[arg(long, required = true)]
        stock: Vec<PathBuf>,
        #[arg(long)]
        market: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
        maturities: Option<Vec<u32>>,
        /// Metadata file supplying market caps for the ratio table.
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Model implied-leverage curves.
    Gamma {
        #[arg(long = "A")]
        amplitude: Option<f64>,
        #[arg(long)]
        t_l: Option<f64>,
        #[arg(long)]
        sigma0: Option<f64>,
        /// Estimate A, t_L and sigma0 from a returns file instead.
        #[arg(long, conflicts_with_all = ["amplitude", "t_l", "sigma0"])]
        returns: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "theoretical,sticky-strike,sticky-delta")]
        rules: Vec<String>,
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
        maturities: Option<Vec<u32>>,
    },
    /// Regression estimate of gamma(T) from ATM vol panels.
    GammaImplied {
        /// ATM vol panel; repeat together with --returns, in the same order.
        #[arg(long, required = true)]
        panel: Vec<PathBuf>,
        #[arg(long, required = true)]
        returns: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
        maturities: Option<Vec<u32>>,
        /// Panel vols are annualized.
        #[arg(long)]
        vol_annualized: bool,
        /// Regress absolute instead of relative vol changes.
        #[arg(long)]
        absolute: bool,
        /// Clamp both variables to their 1%-99% quantiles.
        #[arg(long)]
        winsorize: bool,
    },
    /// Market-cap regression of implied gamma.
    Mcap {
        #[arg(long)]
        gamma: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
        /// Maturities to regress (default: every maturity in the gamma file).
        #[arg(long = "T", value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
        maturities: Option<Vec<u32>>,
    },
    /// Near-the-money implied vol smile.
    #[command(allow_negative_numbers = true)]
    Smile {
        /// Vol per square-root day over the maturity.
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        zeta: f64,
        #[arg(long, default_value_t = 0.0)]
        kappa: f64,
        #[arg(long = "T")]
        t_days: f64,
        /// Rate per day.
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 100.0)]
        spot: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        strikes: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Order::SkewKurtosis)]
        order: Order,
        #[arg(long, default_value_t = 1.5)]
        window: f64,
    },
    /// Synthetic returns, vol panels and metadata.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// TOML configuration; flags below are ignored when given. Files go to
    /// the directory named by --out (default: the output directory).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 2500)]
    pub n: usize,
    #[arg(long, default_value_t = 0.01)]
    pub sigma_bar: f64,
    /// Market feedback amplitude; the leverage amplitude is 2w.
    #[arg(long, default_value_t = 0.05)]
    pub w: f64,
    #[arg(long, default_value_t = 20.0)]
    pub t_l: f64,
    /// Number of stocks loaded on the market.
    #[arg(long, default_value_t = 0)]
    pub stocks: usize,
    /// Amplitude of market shocks in residual vol (0 = off).
    #[arg(long, default_value_t = 0.0)]
    pub cross_w: f64,
    /// Relative vol-of-vol of the ATM panels.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
    pub maturities: Option<Vec<u32>>,
}

/// Error that maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}

/// 2 for usage errors, 1 for everything else.
pub fn exit_status(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        2
    } else {
        1
    }
}

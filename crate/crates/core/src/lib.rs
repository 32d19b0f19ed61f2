//! Leverage correlation, skew term structure and implied leverage of the
//! ATM smile, estimated from daily returns and ATM vol panels.

pub mod error;
pub mod estimators;
pub mod export;
pub mod factor_model;
pub mod market_data;
pub mod regression;
pub mod simulator;
pub mod skew_term;
pub mod smile;
pub mod smile_dynamics;

pub use error::{Error, Result};

//! Multi-agent REITs trading research framework: data ingestion, indicator
//! battery, dynamic volatility thresholds, macro quadrant classification,
//! agent context assembly, LLM gateway with offline replay, prediction
//! parsing, reward scoring, and a single-asset backtest engine.
//!
//! Everything is deterministic offline: `stub` and `replay` gateway modes
//! make full runs reproducible byte-for-byte.

pub mod agent_context;
pub mod backtest;
pub mod cli;
pub mod config;
pub mod error;
pub mod gateway;
pub mod indicators;
pub mod macro_state;
pub mod market_data;
pub mod prediction;
pub mod reward;
pub mod threshold;

pub use error::{Error, Result};

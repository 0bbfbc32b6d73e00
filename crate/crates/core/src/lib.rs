//! Online deep recurrent Q-learning for intraday FX trading.
//!
//! Tick files are resampled to 15-minute bars and aligned across twelve pairs
//! ([`market_data`]), turned into normalized states ([`features`]), and traded
//! by a DRQN agent ([`agent`], [`nn`]) in a mark-to-market environment that
//! reports the reward of every action on each step ([`env`]). The [`trainer`]
//! runs the single-pass online loop and [`analytics`] computes the reports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod analytics;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod features;
pub mod market_data;
pub mod nn;
pub mod synthetic;
pub mod trainer;

pub use agent::{Agent, AgentConfig, ExplorationMode, ReplayMemory};
pub use env::{Action, AugmentedTransition, PortfolioLedger, SimParams, TradeRecord, TradingEnv};
pub use error::{Error, Result};
pub use features::{MarketState, STATE_DIM};
pub use market_data::{AlignedDataset, Bar, CurrencyPair, TickRecord};
pub use nn::{NetShape, QNetwork};
pub use trainer::{run, run_suite, RunConfig, RunLog, RunOutcome, StepRecord, Trainer};

//! The trading MDP.
//!
//! Actions are target positions in `{-1, 0, +1}` units of the trade size. The
//! agent observes the state at the close of slot `k`; its action executes at the
//! open of slot `k + 1` and the portfolio is marked to that bar's close:
//!
//! ```text
//! v_t = v_{t-1} + a_t * c * (close_t - open_t) - d_t
//! d_t = c * |a_t - a_{t-1}| * spread
//! r_t = ln(v_t / v_{t-1})
//! ```
//!
//! Because orders are assumed to have no market impact, the same bar gives the
//! reward every other action would have earned, and the next state differs across
//! actions only in its position one-hot. [`TradingEnv::step_augmented`] returns that
//! per-action feedback alongside the executed step.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{time_features, FeaturePipeline, MarketState};
use crate::market_data::{AlignedDataset, Bar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Short,
    Flat,
    Long,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Short, Action::Flat, Action::Long];

    pub fn value(self) -> i8 {
        match self {
            Action::Short => -1,
            Action::Flat => 0,
            Action::Long => 1,
        }
    }

    pub fn index(self) -> usize {
        (self.value() + 1) as usize
    }

    pub fn from_index(index: usize) -> Action {
        Action::ALL[index]
    }

    pub fn from_value(value: i8) -> Option<Action> {
        match value {
            -1 => Some(Action::Short),
            0 => Some(Action::Flat),
            1 => Some(Action::Long),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.value())
    }
}

/// Fixed trading frictions and sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub initial_cash: f64,
    /// Units traded per unit of position.
    pub trade_size: f64,
    /// Spread in price units (basis points already converted).
    pub spread: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            initial_cash: 100_000.0,
            trade_size: 100_000.0,
            spread: 0.08 * 0.0001,
        }
    }
}

pub fn commission(prev: Action, new: Action, trade_size: f64, spread: f64) -> f64 {
    trade_size * f64::from((new.value() - prev.value()).abs()) * spread
}

/// Portfolio value after holding `action` through `bar`, coming from `prev`.
///
/// Both the executed step and the counterfactual rewards go through this one
/// expression, so the executed entry of the reward vector is bit-identical to
/// the environment reward.
pub fn mark_to_market(value: f64, prev: Action, action: Action, bar: &Bar, params: &SimParams) -> f64 {
    value + f64::from(action.value()) * params.trade_size * (bar.close - bar.open)
        - commission(prev, action, params.trade_size, params.spread)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub direction: i8,
    /// Slot of the first bar held.
    pub entry_time: usize,
    /// Slot of the bar at whose open the position was closed.
    pub exit_time: usize,
    pub entry_price: f64,
    pub exit_price: f64,
    /// Accrued mark-to-market PnL net of the commission shares of entry and exit.
    pub pnl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenTrade {
    pub direction: i8,
    pub entry_time: usize,
    pub entry_price: f64,
    pub pnl: f64,
}

/// Mark-to-market account: value, current position and trade log.
#[derive(Debug, Clone)]
pub struct PortfolioLedger {
    pub value: f64,
    pub position: Action,
    pub params: SimParams,
    pub trade_log: Vec<TradeRecord>,
    pub open_trade: Option<OpenTrade>,
}

impl PortfolioLedger {
    pub fn new(params: SimParams) -> Self {
        PortfolioLedger {
            value: params.initial_cash,
            position: Action::Flat,
            params,
            trade_log: Vec::new(),
            open_trade: None,
        }
    }

    /// Log return each action would earn on `bar` from the current ledger state.
    pub fn counterfactual_rewards(&self, bar: &Bar, slot: usize) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for a in Action::ALL {
            let v = mark_to_market(self.value, self.position, a, bar, &self.params);
            if !(v > 0.0) {
                return Err(Error::Bankrupt { slot, value: v });
            }
            out[a.index()] = (v / self.value).ln();
        }
        Ok(out)
    }

    /// Executes `action` on `bar` (at its open, marked to its close) and returns
    /// the log-return reward. The ledger is unchanged on bankruptcy.
    pub fn apply(&mut self, action: Action, bar: &Bar, slot: usize) -> Result<f64> {
        let new_value = mark_to_market(self.value, self.position, action, bar, &self.params);
        if !(new_value > 0.0) {
            return Err(Error::Bankrupt { slot, value: new_value });
        }
        let reward = (new_value / self.value).ln();

        let fee = commission(self.position, action, self.params.trade_size, self.params.spread);
        if action != self.position {
            let reversal = self.position != Action::Flat && action != Action::Flat;
            let (exit_fee, entry_fee) = if reversal {
                (0.5 * fee, 0.5 * fee)
            } else if action == Action::Flat {
                (fee, 0.0)
            } else {
                (0.0, fee)
            };
            if let Some(open) = self.open_trade.take() {
                self.trade_log.push(TradeRecord {
                    direction: open.direction,
                    entry_time: open.entry_time,
                    exit_time: slot,
                    entry_price: open.entry_price,
                    exit_price: bar.open,
                    pnl: open.pnl - exit_fee,
                });
            }
            if action != Action::Flat {
                self.open_trade = Some(OpenTrade {
                    direction: action.value(),
                    entry_time: slot,
                    entry_price: bar.open,
                    pnl: -entry_fee,
                });
            }
        }
        if let Some(open) = self.open_trade.as_mut() {
            open.pnl += f64::from(action.value()) * self.params.trade_size * (bar.close - bar.open);
        }

        self.value = new_value;
        self.position = action;
        Ok(reward)
    }
}

/// One environment step with the feedback for every action.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTransition {
    /// Slot whose close produced `state`.
    pub time: usize,
    pub state: MarketState,
    /// Log return per action index.
    pub rewards: [f64; 3],
    /// Non-position part of the next state, shared by all actions.
    pub next_core: Vec<f64>,
    pub executed: Action,
}

impl AugmentedTransition {
    pub fn next_state(&self, action: Action) -> MarketState {
        MarketState::from_core(&self.next_core, action)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub value: f64,
    /// Slot of the bar the action was executed on.
    pub slot: usize,
    pub next_state: MarketState,
    pub done: bool,
}

/// Single-pair environment over an aligned panel; the other pairs only feed
/// features.
#[derive(Clone)]
pub struct TradingEnv<'a> {
    data: &'a AlignedDataset,
    pair: usize,
    pipeline: FeaturePipeline,
    /// Slot of the current observation.
    cursor: usize,
    start_slot: usize,
    core: Vec<f64>,
    ledger: PortfolioLedger,
}

impl<'a> TradingEnv<'a> {
    /// Warms the feature windows and positions the environment on its first
    /// observation.
    pub fn new(data: &'a AlignedDataset, pair: usize, params: SimParams) -> Result<Self> {
        if pair >= data.pairs.len() {
            return Err(Error::Config(format!("pair index {pair} out of range")));
        }
        let mut pipeline = FeaturePipeline::new(data.pairs.len());
        for slot in 0..data.len() {
            if let Some(market) = pipeline.push_slot(data.bars.iter().map(|s| &s[slot]))? {
                let core = core_features(data.grid[slot], &market);
                return Ok(TradingEnv {
                    data,
                    pair,
                    pipeline,
                    cursor: slot,
                    start_slot: slot,
                    core,
                    ledger: PortfolioLedger::new(params),
                });
            }
        }
        Err(Error::Feature(format!(
            "dataset of {} slots is too short to warm up the features",
            data.len()
        )))
    }

    pub fn state(&self) -> MarketState {
        MarketState::from_core(&self.core, self.ledger.position)
    }

    pub fn ledger(&self) -> &PortfolioLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> PortfolioLedger {
        self.ledger
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Slot of the first observation.
    pub fn start_slot(&self) -> usize {
        self.start_slot
    }

    /// Number of steps a full pass over the data takes.
    pub fn total_steps(&self) -> usize {
        self.data.len() - 1 - self.start_slot
    }

    pub fn is_done(&self) -> bool {
        self.cursor + 1 >= self.data.len()
    }

    /// Bars the agent trades on, in step order.
    pub fn traded_bars(&self) -> &'a [Bar] {
        &self.data.bars[self.pair][self.start_slot + 1..]
    }

    /// Counterfactual rewards for the next bar, before any mutation.
    pub fn augment_rewards(&self) -> Result<[f64; 3]> {
        let slot = self.next_slot()?;
        self.ledger
            .counterfactual_rewards(&self.data.bars[self.pair][slot], slot)
    }

    fn next_slot(&self) -> Result<usize> {
        if self.is_done() {
            return Err(Error::Contract("step past the end of the data".into()));
        }
        Ok(self.cursor + 1)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        self.step_augmented(action).map(|(o, _)| o)
    }

    /// Executes `action`, advances the features, and returns the outcome with the
    /// augmented transition for the replay memory.
    pub fn step_augmented(&mut self, action: Action) -> Result<(StepOutcome, AugmentedTransition)> {
        let slot = self.next_slot()?;
        let bar = self.data.bars[self.pair][slot];
        let state = self.state();
        let rewards = self.ledger.counterfactual_rewards(&bar, slot)?;
        let reward = self.ledger.apply(action, &bar, slot)?;

        let market = self
            .pipeline
            .push_slot(self.data.bars.iter().map(|s| &s[slot]))?
            .expect("pipeline stays warm once full");
        let next_core = core_features(self.data.grid[slot], &market);
        let transition = AugmentedTransition {
            time: self.cursor,
            state,
            rewards,
            next_core: next_core.clone(),
            executed: action,
        };
        self.core = next_core;
        self.cursor = slot;
        let outcome = StepOutcome {
            reward,
            value: self.ledger.value,
            slot,
            next_state: self.state(),
            done: self.is_done(),
        };
        Ok((outcome, transition))
    }
}

fn core_features(timestamp: i64, market: &[f64]) -> Vec<f64> {
    let mut core = Vec::with_capacity(3 + market.len());
    core.extend_from_slice(&time_features(timestamp).as_array());
    core.extend_from_slice(market);
    core
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    BuyAndHold,
    SellAndHold,
}

impl BaselineMode {
    pub fn action(self) -> Action {
        match self {
            BaselineMode::BuyAndHold => Action::Long,
            BaselineMode::SellAndHold => Action::Short,
        }
    }
}

/// Equity of holding a constant position over `bars`, entered at the first bar's
/// open. Returns `bars.len() + 1` values starting at the initial cash. The value
/// may go non-positive; baselines are not stopped out.
pub fn baseline_equity(bars: &[Bar], mode: BaselineMode, params: &SimParams) -> Vec<f64> {
    let action = mode.action();
    let mut out = Vec::with_capacity(bars.len() + 1);
    let mut value = params.initial_cash;
    let mut prev = Action::Flat;
    out.push(value);
    for bar in bars {
        value = mark_to_market(value, prev, action, bar, params);
        prev = action;
        out.push(value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(open: f64, close: f64) -> Bar {
        Bar {
            start: 0,
            open,
            high: open.max(close),
            low: open.min(close),
            close,
            tick_volume: 1,
        }
    }

    fn params(spread: f64) -> SimParams {
        SimParams {
            initial_cash: 100_000.0,
            trade_size: 100_000.0,
            spread,
        }
    }

    #[test]
    fn action_bijection() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), *a);
            assert_eq!(Action::from_value(a.value()), Some(*a));
        }
        assert_eq!(Action::from_value(2), None);
    }

    #[test]
    fn commission_cases() {
        let c = 100_000.0;
        let s = 8e-6;
        assert!((commission(Action::Flat, Action::Long, c, s) - 0.8).abs() < 1e-12);
        assert_eq!(commission(Action::Long, Action::Long, c, s), 0.0);
        let rev = commission(Action::Long, Action::Short, c, s);
        assert!((rev - 1.6).abs() < 1e-12);
        assert_eq!(rev, 2.0 * commission(Action::Flat, Action::Long, c, s));
    }

    #[test]
    fn step_value_update() {
        let mut l = PortfolioLedger::new(params(8e-6));
        let r = l.apply(Action::Long, &bar(1.0, 1.001), 1).unwrap();
        assert!((l.value - 100_099.2).abs() < 1e-8);
        assert!((r - 1.000992f64.ln()).abs() < 1e-15);
        assert!((r - 9.915e-4).abs() < 1e-7);

        let mut l = PortfolioLedger::new(params(8e-6));
        assert_eq!(l.apply(Action::Flat, &bar(1.0, 1.1), 1).unwrap(), 0.0);
        assert_eq!(l.value, 100_000.0);

        l.apply(Action::Long, &bar(1.0, 1.0), 2).unwrap();
        let r = l.apply(Action::Long, &bar(1.2, 1.2), 3).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn augmentation_example() {
        // +10 of unrealized PnL for the long action.
        let l = PortfolioLedger::new(params(0.0));
        let v = l.value;
        let r = l.counterfactual_rewards(&bar(1.0, 1.0001), 0).unwrap();
        let expect = [(1.0 - 10.0 / v).ln(), 0.0, (1.0 + 10.0 / v).ln()];
        for i in 0..3 {
            assert!((r[i] - expect[i]).abs() < 1e-12);
        }
        assert_eq!(l.counterfactual_rewards(&bar(1.0, 1.0), 0).unwrap(), [0.0; 3]);
    }

    #[test]
    fn bankruptcy_is_reported() {
        let mut l = PortfolioLedger::new(params(0.0));
        let err = l.apply(Action::Long, &bar(1.0, -0.5), 4);
        assert!(matches!(err, Err(Error::Bankrupt { slot: 4, .. })));
        assert_eq!(l.value, 100_000.0);
        assert!(l.counterfactual_rewards(&bar(1.0, -0.5), 4).is_err());
    }

    #[test]
    fn trade_bookkeeping() {
        let p = params(1e-4);
        let mut l = PortfolioLedger::new(p);
        l.apply(Action::Long, &bar(1.0, 1.01), 1).unwrap(); // open long, fee 10
        l.apply(Action::Long, &bar(1.01, 1.02), 2).unwrap();
        l.apply(Action::Short, &bar(1.02, 1.0), 3).unwrap(); // reversal, fee 20
        l.apply(Action::Flat, &bar(1.0, 1.0), 4).unwrap(); // close, fee 10
        assert_eq!(l.trade_log.len(), 2);
        let long = &l.trade_log[0];
        assert_eq!((long.direction, long.entry_time, long.exit_time), (1, 1, 3));
        assert!((long.pnl - (2000.0 - 10.0 - 10.0)).abs() < 1e-6);
        let short = &l.trade_log[1];
        assert_eq!((short.direction, short.entry_time, short.exit_time), (-1, 3, 4));
        assert!((short.pnl - (2000.0 - 10.0 - 10.0)).abs() < 1e-6);
        let total: f64 = l.trade_log.iter().map(|t| t.pnl).sum();
        assert!((total - (l.value - p.initial_cash)).abs() < 1e-6);
        assert!(l.open_trade.is_none());
    }

    #[test]
    fn baselines() {
        let p = params(0.0);
        let rising: Vec<Bar> = (0..10)
            .map(|i| bar(1.0 + i as f64 * 0.01, 1.005 + i as f64 * 0.01))
            .collect();
        let eq = baseline_equity(&rising, BaselineMode::BuyAndHold, &p);
        assert_eq!(eq.len(), 11);
        assert!(eq.windows(2).all(|w| w[1] > w[0]));

        let short = baseline_equity(&rising, BaselineMode::SellAndHold, &p);
        for (l, s) in eq.iter().zip(&short) {
            assert!(((l - p.initial_cash) + (s - p.initial_cash)).abs() < 1e-9);
        }

        let p = params(8e-6);
        let flat = vec![bar(1.0, 1.0); 5];
        let eq = baseline_equity(&flat, BaselineMode::BuyAndHold, &p);
        assert!(eq[1..].iter().all(|&v| (v - (100_000.0 - 0.8)).abs() < 1e-9));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn action() -> impl Strategy<Value = Action> {
            (0usize..3).prop_map(Action::from_index)
        }

        proptest! {
            #[test]
            fn commission_law(p in action(), n in action(), c in 1.0..1e6f64, s in 0.0..1e-2f64) {
                let k = commission(p, n, c, s);
                prop_assert_eq!(k, commission(n, p, c, s));
                prop_assert_eq!(k == 0.0, p == n || s == 0.0);
                prop_assert_eq!(commission(Action::Short, Action::Long, c, s), 2.0 * commission(Action::Flat, Action::Long, c, s));
            }

            #[test]
            fn ledger_identities(
                moves in prop::collection::vec((action(), -2e-3..2e-3f64), 1..200),
                spread in 0.0..3e-4f64,
            ) {
                let mut ledger = PortfolioLedger::new(params(spread));
                let v0 = ledger.value;
                let mut price = 1.2;
                let mut sum = 0.0;
                for (slot, &(a, dp)) in moves.iter().enumerate() {
                    let b = bar(price, price + dp);
                    price += dp;
                    let cf = ledger.counterfactual_rewards(&b, slot).unwrap();
                    let r = ledger.apply(a, &b, slot).unwrap();
                    prop_assert_eq!(r.to_bits(), cf[a.index()].to_bits());
                    sum += r;
                }
                let ln = (ledger.value / v0).ln();
                prop_assert!((sum - ln).abs() <= 1e-12 * ln.abs().max(1e-3));
                let booked: f64 = ledger.trade_log.iter().map(|t| t.pnl).sum::<f64>()
                    + ledger.open_trade.as_ref().map_or(0.0, |t| t.pnl);
                prop_assert!((booked - (ledger.value - v0)).abs() < 1e-6);
            }
        }
    }
}

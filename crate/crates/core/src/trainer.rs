//! The online training loop, run artifacts and repeated-run suites.
//!
//! A run is one pass over the data with no episodes. Per step the counter is
//! incremented, the agent acts greedily on the current state, the environment
//! executes the action on the next bar, the augmented transition is stored, the
//! online network trains when the memory is full and `counter % seq_len == 0`,
//! and the target network is soft-updated.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, ReplayMemory};
use crate::analytics::{self, compute_report, EquityRow, MetricsReport, ReportInputs};
use crate::checkpoint;
use crate::env::{baseline_equity, BaselineMode, PortfolioLedger, SimParams, TradeRecord, TradingEnv};
use crate::error::{Error, Result};
use crate::features::{state_dim, MarketState};
use crate::market_data::{AlignedDataset, Bar, CurrencyPair, UNIVERSE};
use crate::nn::NetShape;

/// Default data directory when `--data-dir` is not given.
pub const DATA_DIR_ENV: &str = "FXDRQN_DATA_DIR";
pub const DATASET_FILE: &str = "dataset.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pair: CurrencyPair,
    /// Dataset cache written by `ingest`.
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    /// Spread in basis points of the pair's quote unit.
    pub spread_bp: f64,
    pub initial_cash: f64,
    pub trade_size: f64,
    pub hidden_units: usize,
    pub lstm_units: usize,
    /// Stop after this many steps instead of the end of the data.
    pub max_steps: Option<usize>,
    /// Write an intermediate checkpoint every this many steps.
    pub checkpoint_every: Option<usize>,
    /// Parent of the run-stamped output directories.
    pub out_dir: PathBuf,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pair: "EURUSD".parse().expect("valid pair"),
            dataset: None,
            seed: 0,
            spread_bp: 0.08,
            initial_cash: 100_000.0,
            trade_size: 100_000.0,
            hidden_units: 256,
            lstm_units: 256,
            max_steps: None,
            checkpoint_every: None,
            out_dir: PathBuf::from("runs"),
            agent: AgentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !UNIVERSE.contains(&self.pair.as_str()) {
            return Err(Error::Config(format!("{} is not in the trading universe", self.pair)));
        }
        if !(self.spread_bp >= 0.0) {
            return Err(Error::Config("spread_bp must be >= 0".into()));
        }
        if !(self.initial_cash > 0.0 && self.trade_size > 0.0) {
            return Err(Error::Config("initial cash and trade size must be positive".into()));
        }
        if self.hidden_units == 0 || self.lstm_units == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        self.agent.validate()
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            initial_cash: self.initial_cash,
            trade_size: self.trade_size,
            spread: self.spread_bp * self.pair.bp_unit(),
        }
    }

    pub fn shape(&self, n_pairs: usize) -> NetShape {
        NetShape::new(state_dim(n_pairs), self.hidden_units, self.lstm_units, 3)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// One environment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: u64,
    /// Loop counter; starts at 1 and is incremented before acting.
    pub counter: u64,
    /// Slot of the bar the action executed on.
    pub slot: usize,
    pub action: i8,
    pub reward: f64,
    pub value: f64,
    /// Training loss when this step trained.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    /// Portfolio value before the first step followed by the value after each step.
    pub fn equity(&self, initial: f64) -> Vec<f64> {
        std::iter::once(initial)
            .chain(self.records.iter().map(|r| r.value))
            .collect()
    }

    pub fn training_events(&self) -> usize {
        self.records.iter().filter(|r| r.loss.is_some()).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.records)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Ok(RunLog {
            records: read_rows(path)?,
        })
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| analytics::csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| analytics::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| analytics::csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| analytics::csv_err(path, e)))
        .collect()
}

/// Incremental driver for one run.
#[derive(Clone)]
pub struct Trainer<'a> {
    pub env: TradingEnv<'a>,
    pub agent: Agent,
    pub memory: ReplayMemory,
    counter: u64,
    state: MarketState,
    log: RunLog,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &RunConfig, data: &'a AlignedDataset) -> Result<Self> {
        config.validate()?;
        let pair = data
            .pair_index(&config.pair)
            .ok_or_else(|| Error::Config(format!("{} is not in the dataset", config.pair)))?;
        let env = TradingEnv::new(data, pair, config.sim_params())?;
        let agent = Agent::new(config.shape(data.pairs.len()), config.agent, config.seed)?;
        let state = env.state();
        Ok(Trainer {
            env,
            agent,
            memory: ReplayMemory::new(config.agent.memory_capacity),
            counter: 1,
            state,
            log: RunLog::default(),
        })
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.env.is_done()
    }

    /// Runs one step. Returns `Ok(None)` once the data is exhausted.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.env.is_done() {
            return Ok(None);
        }
        self.counter += 1;
        let decision = self.agent.act(&self.state)?;
        let (outcome, transition) = self.env.step_augmented(decision.action)?;
        self.memory.store(transition)?;
        let seq_len = self.agent.config.seq_len as u64;
        let loss = if self.memory.is_full() && self.counter % seq_len == 0 {
            self.agent.train_from(&self.memory)?.map(|s| s.loss)
        } else {
            None
        };
        self.agent.soft_update()?;
        self.state = outcome.next_state;
        let record = StepRecord {
            step: self.log.len() as u64 + 1,
            counter: self.counter,
            slot: outcome.slot,
            action: decision.action.value(),
            reward: outcome.reward,
            value: outcome.value,
            loss,
        };
        self.log.records.push(record);
        Ok(Some(record))
    }

    /// Steps until the data ends, `max_steps` is reached, or the run fails.
    /// Bankruptcy and numerical faults end the run with the partial log kept.
    pub fn run(
        mut self,
        max_steps: Option<usize>,
        mut on_step: impl FnMut(&Trainer<'a>) -> Result<()>,
    ) -> Result<RunOutcome> {
        let mut failure = None;
        while max_steps.is_none_or(|m| self.log.len() < m) {
            match self.step() {
                Ok(Some(_)) => on_step(&self)?,
                Ok(None) => break,
                Err(e @ (Error::Bankrupt { .. } | Error::NumericalFault(_))) => {
                    log::warn!("run failed at step {}: {e}", self.log.len() + 1);
                    failure = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let traded = self.env.traded_bars();
        let traded = &traded[..self.log.len().min(traded.len())];
        Ok(RunOutcome {
            log: self.log,
            traded_bars: traded.to_vec(),
            initial_cash: self.env.ledger().params.initial_cash,
            ledger: self.env.into_ledger(),
            agent: self.agent,
            failure,
        })
    }
}

/// Result of a finished (or failed) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub agent: Agent,
    pub ledger: PortfolioLedger,
    /// Bars executed on, one per logged step.
    pub traded_bars: Vec<Bar>,
    pub initial_cash: f64,
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn equity(&self) -> Vec<f64> {
        self.log.equity(self.initial_cash)
    }

    pub fn baselines(&self) -> (Vec<f64>, Vec<f64>) {
        let p = &self.ledger.params;
        (
            baseline_equity(&self.traded_bars, BaselineMode::BuyAndHold, p),
            baseline_equity(&self.traded_bars, BaselineMode::SellAndHold, p),
        )
    }

    pub fn trades(&self) -> &[TradeRecord] {
        &self.ledger.trade_log
    }

    /// Sum of step rewards, the final cumulative log return.
    pub fn cumulative_log_return(&self) -> f64 {
        self.log.records.iter().map(|r| r.reward).sum()
    }

    pub fn report(&self) -> MetricsReport {
        let rewards = self.log.rewards();
        let equity = self.equity();
        let (buy, sell) = self.baselines();
        compute_report(&ReportInputs {
            step_returns: &rewards,
            equity: &equity,
            buy_and_hold: &buy,
            sell_and_hold: &sell,
            trades: self.trades(),
        })
    }

    pub fn equity_rows(&self) -> Vec<EquityRow> {
        let equity = self.equity();
        let (buy, sell) = self.baselines();
        let base = if sell.last() > buy.last() { sell } else { buy };
        equity
            .iter()
            .enumerate()
            .map(|(t, &v)| EquityRow {
                time: t,
                equity: Some(v),
                baseline_equity: base.get(t).copied(),
                mean: None,
                sigma: None,
            })
            .collect()
    }
}

/// Runs `config` over `data` in memory.
pub fn run(config: &RunConfig, data: &AlignedDataset) -> Result<RunOutcome> {
    Trainer::new(config, data)?.run(config.max_steps, |_| Ok(()))
}

/// Creates a fresh directory `<parent>/<stamp>-<pair>-s<seed>`.
pub fn create_run_dir(parent: &Path, pair: &CurrencyPair, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    for n in 0.. {
        let name = match n {
            0 => format!("{stamp}-{pair}-s{seed}"),
            _ => format!("{stamp}-{pair}-s{seed}-{n}"),
        };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

pub const CONFIG_FILE: &str = "config.toml";
pub const RUNLOG_FILE: &str = "runlog.csv";
pub const TRADES_FILE: &str = "trades.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_DIR: &str = "reports";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Runs `config` and writes the config snapshot, run log, trades, checkpoints
/// and reports under `dir`.
pub fn run_in_dir(config: &RunConfig, data: &AlignedDataset, dir: &Path) -> Result<RunOutcome> {
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, config.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;

    let every = config.checkpoint_every;
    let outcome = Trainer::new(config, data)?.run(config.max_steps, |t| {
        let n = t.log().len();
        if every.is_some_and(|k| n % k == 0) {
            checkpoint::save(&t.agent, &ckpt_dir.join(format!("step-{n:08}.ckpt")))?;
        }
        Ok(())
    })?;
    checkpoint::save(&outcome.agent, &ckpt_dir.join(FINAL_CHECKPOINT))?;
    outcome.log.write_csv(&dir.join(RUNLOG_FILE))?;
    write_rows(&dir.join(TRADES_FILE), outcome.trades())?;
    let title = match &outcome.failure {
        Some(f) => format!("{} seed {} (failed: {f})", config.pair, config.seed),
        None => format!("{} seed {}", config.pair, config.seed),
    };
    analytics::emit_report(&dir.join(REPORT_DIR), &title, &outcome.report(), &outcome.equity_rows())?;
    Ok(outcome)
}

/// `repeats` consecutive seeds starting at `base`.
pub fn suite_seeds(base: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|k| base.wrapping_add(k)).collect()
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub config_index: usize,
    pub seed: u64,
    /// Equity curve and metrics, or the error that stopped the run.
    pub result: std::result::Result<(Vec<f64>, MetricsReport), String>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteResult {
    pub runs: Vec<SuiteRun>,
    /// Per config: mean and standard deviation of equity per time index over
    /// the runs that completed.
    pub aggregates: Vec<Vec<(f64, f64)>>,
}

/// Runs every config once per seed and aggregates equity per config.
pub fn run_suite(configs: &[RunConfig], seeds: &[u64], data: &AlignedDataset) -> SuiteResult {
    let mut result = SuiteResult::default();
    for (i, base) in configs.iter().enumerate() {
        let mut curves = Vec::new();
        for &seed in seeds {
            let cfg = RunConfig { seed, ..base.clone() };
            let run = match run(&cfg, data) {
                Ok(o) => {
                    let eq = o.equity();
                    if o.failure.is_none() {
                        curves.push(eq.clone());
                    }
                    SuiteRun {
                        config_index: i,
                        seed,
                        result: Ok((eq, o.report())),
                        failure: o.failure,
                    }
                }
                Err(e) => SuiteRun {
                    config_index: i,
                    seed,
                    result: Err(e.to_string()),
                    failure: Some(e.to_string()),
                },
            };
            if let Some(f) = &run.failure {
                log::warn!("config {i} seed {seed} failed: {f}");
            }
            result.runs.push(run);
        }
        result.aggregates.push(analytics::aggregate_curves(&curves));
    }
    result
}

/// Equity-file rows for an aggregated suite.
pub fn aggregate_rows(aggregate: &[(f64, f64)], baseline: Option<&[f64]>) -> Vec<EquityRow> {
    aggregate
        .iter()
        .enumerate()
        .map(|(t, &(m, s))| EquityRow {
            time: t,
            equity: None,
            baseline_equity: baseline.and_then(|b| b.get(t).copied()),
            mean: Some(m),
            sigma: Some(s),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{sinusoid_dataset, SinusoidSpec};

    fn small_config() -> RunConfig {
        RunConfig {
            hidden_units: 8,
            lstm_units: 8,
            agent: AgentConfig {
                seq_len: 4,
                memory_capacity: 8,
                ..AgentConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_toml_roundtrip() {
        let cfg = RunConfig {
            dataset: Some("/data/x.bin".into()),
            max_steps: Some(10),
            ..small_config()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let partial = RunConfig::from_toml("seed = 7\n[agent]\ntau = 0.5\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.agent.tau, 0.5);
        assert_eq!(partial.agent.seq_len, 96);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad_pair = RunConfig {
            pair: "EURSEK".parse().unwrap(),
            ..RunConfig::default()
        };
        assert!(bad_pair.validate().is_err());
        let bad_spread = RunConfig {
            spread_bp: -1.0,
            ..RunConfig::default()
        };
        assert!(bad_spread.validate().is_err());
    }

    #[test]
    fn jpy_spread_scaling() {
        let cfg = RunConfig {
            pair: "USDJPY".parse().unwrap(),
            spread_bp: 2.0,
            ..RunConfig::default()
        };
        assert!((cfg.sim_params().spread - 0.02).abs() < 1e-15);
        assert!((RunConfig::default().sim_params().spread - 0.08e-4).abs() < 1e-18);
    }

    #[test]
    fn counter_and_training_schedule() {
        let data = sinusoid_dataset(&SinusoidSpec {
            slots: 160,
            ..SinusoidSpec::default()
        });
        let out = run(&small_config(), &data).unwrap();
        let n = out.log.len();
        assert_eq!(n, 160 - 104);
        for (k, r) in out.log.records.iter().enumerate() {
            assert_eq!(r.step, k as u64 + 1);
            assert_eq!(r.counter, k as u64 + 2);
            let expect = r.step >= 8 && r.counter % 4 == 0;
            assert_eq!(r.loss.is_some(), expect, "step {}", r.step);
        }
    }

    #[test]
    fn suite_of_zero_repeats_is_empty() {
        let data = sinusoid_dataset(&SinusoidSpec {
            slots: 130,
            ..SinusoidSpec::default()
        });
        let res = run_suite(&[small_config()], &[], &data);
        assert!(res.runs.is_empty());
        assert!(res.aggregates[0].is_empty());
    }

    #[test]
    fn identical_seeds_give_zero_sigma() {
        let data = sinusoid_dataset(&SinusoidSpec {
            slots: 140,
            ..SinusoidSpec::default()
        });
        let res = run_suite(&[small_config()], &[3, 3, 3], &data);
        assert_eq!(res.runs.len(), 3);
        assert!(res.aggregates[0].iter().all(|&(_, s)| s == 0.0));
        let res = run_suite(&[small_config()], &suite_seeds(10, 5), &data);
        assert_eq!(res.runs.len(), 5);
        assert_eq!(res.aggregates[0].len(), 140 - 104 + 1);
    }
}

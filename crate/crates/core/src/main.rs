use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fxdrqn::analytics::{self, compute_report, ReportInputs};
use fxdrqn::env::{baseline_equity, BaselineMode, TradeRecord};
use fxdrqn::market_data::{self, AlignedDataset};
use fxdrqn::synthetic::{sinusoid_dataset, SinusoidSpec};
use fxdrqn::trainer::{self, RunConfig, RunLog, DATASET_FILE, DATA_DIR_ENV};
use fxdrqn::{CurrencyPair, ExplorationMode};

#[derive(Parser)]
#[command(name = "fxdrqn", version, about = "Online DRQN trading on 15-minute FX bars")]
struct Cli {
    /// Directory holding the dataset cache.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample tick files into an aligned bar dataset cache.
    Ingest {
        /// Directory of tick files (plain or gzip).
        ticks: PathBuf,
        /// Output cache; defaults to <data-dir>/dataset.bin.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accept a subset of the twelve-pair universe.
        #[arg(long)]
        partial: bool,
    },
    /// Write a synthetic sinusoid dataset cache.
    Synth {
        #[arg(long, default_value_t = 20_105)]
        slots: usize,
        #[arg(long, default_value_t = 192.0)]
        period: f64,
        #[arg(long, default_value_t = 0.01)]
        amplitude: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One training run.
    Train(RunArgs),
    /// Repeated runs over seeds and optional spread sweep.
    Suite {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Explicit seeds; overrides --repeats.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Run one config per spread value.
        #[arg(long, value_delimiter = ',')]
        sweep_spread_bp: Vec<f64>,
    },
    /// Recompute the reports of a finished run directory.
    Report { run_dir: PathBuf },
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML file with any of the options below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Traded pair, e.g. EURUSD.
    #[arg(long)]
    pair: Option<CurrencyPair>,
    /// Dataset cache; defaults to <data-dir>/dataset.bin.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Spread in points; a point is 0.01 on JPY-quoted pairs and 1e-4 otherwise.
    #[arg(long)]
    spread_bp: Option<f64>,
    #[arg(long)]
    initial_cash: Option<f64>,
    /// Units traded per position.
    #[arg(long)]
    trade_size: Option<f64>,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    lstm_units: Option<usize>,
    /// Stop after this many environment steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Write a checkpoint every N steps.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Parent of the run-stamped output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Training sequence length and update period.
    #[arg(long)]
    seq_len: Option<usize>,
    /// Replay memory size in steps.
    #[arg(long)]
    memory_capacity: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Soft target update rate.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Global gradient norm clip.
    #[arg(long, conflicts_with = "no_grad_clip")]
    grad_clip: Option<f64>,
    #[arg(long)]
    no_grad_clip: bool,
    /// Switch to epsilon-greedy exploration.
    #[arg(long, conflicts_with = "greedy")]
    epsilon: Option<f64>,
    /// Force greedy acting.
    #[arg(long)]
    greedy: bool,
}

impl RunArgs {
    fn resolve(&self, data_dir: &Path) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        set!(
            pair,
            seed,
            spread_bp,
            initial_cash,
            trade_size,
            hidden_units,
            lstm_units,
            out_dir
        );
        macro_rules! set_agent {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.agent.$f = v; })*};
        }
        set_agent!(seq_len, memory_capacity, gamma, tau, lr);
        if self.dataset.is_some() {
            c.dataset = self.dataset.clone();
        }
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        if self.checkpoint_every.is_some() {
            c.checkpoint_every = self.checkpoint_every;
        }
        if let Some(g) = self.grad_clip {
            c.agent.grad_clip = Some(g);
        }
        if self.no_grad_clip {
            c.agent.grad_clip = None;
        }
        if let Some(epsilon) = self.epsilon {
            c.agent.exploration = ExplorationMode::EpsilonGreedy { epsilon };
        }
        if self.greedy {
            c.agent.exploration = ExplorationMode::Greedy;
        }
        if c.dataset.is_none() {
            c.dataset = Some(data_dir.join(DATASET_FILE));
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_dataset(config: &RunConfig) -> anyhow::Result<AlignedDataset> {
    let path = config.dataset.as_deref().context("no dataset configured")?;
    Ok(market_data::load_cache(path)?)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { ticks, out, partial } => {
            let out = out.unwrap_or_else(|| cli.data_dir.join(DATASET_FILE));
            let data = market_data::ingest_dir(&ticks, !partial)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            market_data::save_cache(&data, &out)?;
            println!("{} pairs, {} slots -> {}", data.pairs.len(), data.len(), out.display());
        }
        Command::Synth {
            slots,
            period,
            amplitude,
            out,
        } => {
            let out = out.unwrap_or_else(|| cli.data_dir.join(DATASET_FILE));
            let data = sinusoid_dataset(&SinusoidSpec {
                slots,
                period,
                amplitude,
                ..SinusoidSpec::default()
            });
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            market_data::save_cache(&data, &out)?;
            println!("{} slots -> {}", data.len(), out.display());
        }
        Command::Train(args) => {
            let config = args.resolve(&cli.data_dir)?;
            let data = load_dataset(&config)?;
            let dir = trainer::create_run_dir(&config.out_dir, &config.pair, config.seed)?;
            let outcome = trainer::run_in_dir(&config, &data, &dir)?;
            print!(
                "{}",
                analytics::format_summary(&config.pair.to_string(), &outcome.report())
            );
            println!("run directory: {}", dir.display());
            if let Some(f) = outcome.failure {
                bail!("run failed: {f}");
            }
        }
        Command::Suite {
            run,
            repeats,
            seeds,
            sweep_spread_bp,
        } => {
            let base = run.resolve(&cli.data_dir)?;
            let data = load_dataset(&base)?;
            let seeds = if seeds.is_empty() {
                trainer::suite_seeds(base.seed, repeats)
            } else {
                seeds
            };
            let configs: Vec<RunConfig> = if sweep_spread_bp.is_empty() {
                vec![base.clone()]
            } else {
                sweep_spread_bp
                    .iter()
                    .map(|&s| RunConfig {
                        spread_bp: s,
                        ..base.clone()
                    })
                    .collect()
            };
            let dir = trainer::create_run_dir(&base.out_dir, &base.pair, base.seed)?;
            let result = trainer::run_suite(&configs, &seeds, &data);
            for (i, cfg) in configs.iter().enumerate() {
                let sub = dir.join(format!("config-{i}"));
                fs::create_dir_all(&sub).with_context(|| format!("creating {}", sub.display()))?;
                fs::write(sub.join(trainer::CONFIG_FILE), cfg.to_toml()?)?;
                for r in result.runs.iter().filter(|r| r.config_index == i) {
                    match &r.result {
                        Ok((_, report)) => {
                            let title = format!("{} spread {} seed {}", cfg.pair, cfg.spread_bp, r.seed);
                            let text = analytics::format_summary(&title, report);
                            fs::write(sub.join(format!("summary-s{}.txt", r.seed)), &text)?;
                            print!("{text}");
                        }
                        Err(e) => println!("{} seed {}: error: {e}", cfg.pair, r.seed),
                    }
                }
                let pair = data.pair_index(&cfg.pair).context("pair missing from dataset")?;
                let start = fxdrqn::features::WARMUP_LAST_SLOT + 1;
                let bars = data.series(pair).get(start..).unwrap_or(&[]);
                let buy = baseline_equity(bars, BaselineMode::BuyAndHold, &cfg.sim_params());
                let sell = baseline_equity(bars, BaselineMode::SellAndHold, &cfg.sim_params());
                let base_curve = if sell.last() > buy.last() { sell } else { buy };
                let rows = trainer::aggregate_rows(&result.aggregates[i], Some(&base_curve));
                analytics::write_equity_csv(&sub.join("equity.csv"), &rows)?;
            }
            println!("suite directory: {}", dir.display());
        }
        Command::Report { run_dir } => {
            let cfg_path = run_dir.join(trainer::CONFIG_FILE);
            let text = fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
            let config = RunConfig::from_toml(&text)?;
            let log = RunLog::read_csv(&run_dir.join(trainer::RUNLOG_FILE))?;
            let trades: Vec<TradeRecord> = trainer::read_rows(&run_dir.join(trainer::TRADES_FILE))?;
            let data = load_dataset(&config)?;
            let pair = data.pair_index(&config.pair).context("pair missing from dataset")?;
            let bars: Vec<_> = log.records.iter().map(|r| data.series(pair)[r.slot]).collect();
            let params = config.sim_params();
            let buy = baseline_equity(&bars, BaselineMode::BuyAndHold, &params);
            let sell = baseline_equity(&bars, BaselineMode::SellAndHold, &params);
            let rewards = log.rewards();
            let equity = log.equity(config.initial_cash);
            let inputs = ReportInputs {
                step_returns: &rewards,
                equity: &equity,
                buy_and_hold: &buy,
                sell_and_hold: &sell,
                trades: &trades,
            };
            let report = compute_report(&inputs);
            let (_, base_curve) = inputs.chosen_baseline();
            let rows: Vec<_> = equity
                .iter()
                .enumerate()
                .map(|(t, &v)| analytics::EquityRow {
                    time: t,
                    equity: Some(v),
                    baseline_equity: base_curve.get(t).copied(),
                    mean: None,
                    sigma: None,
                })
                .collect();
            let title = format!("{} seed {}", config.pair, config.seed);
            analytics::emit_report(&run_dir.join(trainer::REPORT_DIR), &title, &report, &rows)?;
            print!("{}", analytics::format_summary(&title, &report));
        }
    }
    Ok(())
}

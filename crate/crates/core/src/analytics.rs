//! Performance and trading statistics.
//!
//! A "day" is a block of 96 consecutive steps; one-step log returns are summed
//! per block and annualized with 252 days. Ratios that would divide by a zero
//! deviation are reported as `None`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::TradeRecord;
use crate::error::{Error, Result};

pub const STEPS_PER_DAY: usize = 96;
pub const TRADING_DAYS: f64 = 252.0;

/// Sums step log returns into complete days; a trailing partial day is dropped.
pub fn daily_returns(step_returns: &[f64]) -> Vec<f64> {
    step_returns
        .chunks_exact(STEPS_PER_DAY)
        .map(|day| day.iter().sum())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annualized {
    pub annual_return: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Annual return `mean * 252`, Sharpe `mean / std * sqrt(252)` with population
/// std, and Sortino with the zero-target downside deviation
/// `sqrt(mean(min(d, 0)^2))`.
pub fn annualize(daily: &[f64]) -> Annualized {
    if daily.is_empty() {
        return Annualized {
            annual_return: 0.0,
            sharpe: None,
            sortino: None,
        };
    }
    let m = mean(daily);
    let annual_return = m * TRADING_DAYS;
    if daily.len() < 2 {
        return Annualized {
            annual_return,
            sharpe: None,
            sortino: None,
        };
    }
    let std = (daily.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / daily.len() as f64).sqrt();
    let downside = (daily.iter().map(|d| d.min(0.0).powi(2)).sum::<f64>() / daily.len() as f64).sqrt();
    // Deviations at rounding level of the mean count as zero.
    let floor = 8.0 * f64::EPSILON * m.abs();
    let ratio = |dev: f64| (dev > floor).then(|| m / dev * TRADING_DAYS.sqrt());
    Annualized {
        annual_return,
        sharpe: ratio(std),
        sortino: ratio(downside),
    }
}

/// Worst peak-to-trough decline as a fraction of the peak, `<= 0`.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in equity {
        peak = peak.max(v);
        if peak > 0.0 {
            worst = worst.min((v - peak) / peak);
        }
    }
    worst
}

/// Every 96th point of an equity curve, starting with the first.
pub fn daily_sample(equity: &[f64]) -> Vec<f64> {
    equity.iter().step_by(STEPS_PER_DAY).copied().collect()
}

/// Step log returns of an equity curve; `None` if any value is non-positive.
pub fn step_log_returns(equity: &[f64]) -> Option<Vec<f64>> {
    if equity.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    Some(equity.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Pearson correlation; `None` on unequal lengths, fewer than 2 points, or zero
/// variance on either side.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeStats {
    pub num_trades: usize,
    pub win_rate: f64,
    pub avg_profit: f64,
    pub avg_loss: f64,
    pub expectation: f64,
    /// Steps per trade.
    pub frequency: f64,
    pub no_trades: bool,
}

pub fn trade_stats(trades: &[TradeRecord], total_steps: usize) -> TradeStats {
    if trades.is_empty() {
        return TradeStats {
            num_trades: 0,
            win_rate: 0.0,
            avg_profit: 0.0,
            avg_loss: 0.0,
            expectation: 0.0,
            frequency: 0.0,
            no_trades: true,
        };
    }
    let n = trades.len();
    let (wins, losses): (Vec<f64>, Vec<f64>) = {
        let (w, l): (Vec<&TradeRecord>, Vec<&TradeRecord>) = trades.iter().partition(|t| t.pnl > 0.0);
        (w.iter().map(|t| t.pnl).collect(), l.iter().map(|t| t.pnl).collect())
    };
    let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { mean(v) };
    let win_rate = wins.len() as f64 / n as f64;
    let avg_profit = avg(&wins);
    let avg_loss = avg(&losses);
    TradeStats {
        num_trades: n,
        win_rate,
        avg_profit,
        avg_loss,
        expectation: expectation(win_rate, avg_profit, avg_loss),
        frequency: total_steps as f64 / n as f64,
        no_trades: false,
    }
}

pub fn expectation(win_rate: f64, avg_profit: f64, avg_loss: f64) -> f64 {
    win_rate * avg_profit + (1.0 - win_rate) * avg_loss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    BuyAndHold,
    SellAndHold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub net_profit: f64,
    pub annual_return: f64,
    pub baseline: Baseline,
    pub baseline_annual_return: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub mdd: f64,
    pub corr_baseline: Option<f64>,
    pub trades: TradeStats,
    pub steps: usize,
}

/// Inputs for [`compute_report`]; equity curves have one more point than steps.
pub struct ReportInputs<'a> {
    pub step_returns: &'a [f64],
    pub equity: &'a [f64],
    pub buy_and_hold: &'a [f64],
    pub sell_and_hold: &'a [f64],
    pub trades: &'a [TradeRecord],
}

impl ReportInputs<'_> {
    /// The better of the two baselines by final equity.
    pub fn chosen_baseline(&self) -> (Baseline, &[f64]) {
        let last = |c: &[f64]| c.last().copied().unwrap_or(f64::NEG_INFINITY);
        if last(self.sell_and_hold) > last(self.buy_and_hold) {
            (Baseline::SellAndHold, self.sell_and_hold)
        } else {
            (Baseline::BuyAndHold, self.buy_and_hold)
        }
    }
}

pub fn compute_report(inp: &ReportInputs<'_>) -> MetricsReport {
    let daily = daily_returns(inp.step_returns);
    let ann = annualize(&daily);
    let (baseline, base_curve) = inp.chosen_baseline();
    let base_daily = step_log_returns(base_curve).map(|r| daily_returns(&r));
    let baseline_annual_return = base_daily.as_ref().map_or(f64::NAN, |d| annualize(d).annual_return);
    let corr_baseline = base_daily.and_then(|b| {
        let n = b.len().min(daily.len());
        pearson(&daily[..n], &b[..n])
    });
    let net_profit = match (inp.equity.first(), inp.equity.last()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    MetricsReport {
        net_profit,
        annual_return: ann.annual_return,
        baseline,
        baseline_annual_return,
        sharpe: ann.sharpe,
        sortino: ann.sortino,
        mdd: max_drawdown(&daily_sample(inp.equity)),
        corr_baseline,
        trades: trade_stats(inp.trades, inp.step_returns.len()),
        steps: inp.step_returns.len(),
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.prec$}"))
}

/// Two-column human-readable summary, one line per statistic.
pub fn format_summary(title: &str, r: &MetricsReport) -> String {
    let t = &r.trades;
    let base = match r.baseline {
        Baseline::BuyAndHold => "buy-and-hold",
        Baseline::SellAndHold => "sell-and-hold",
    };
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{:<16}{:.2}", "net_profit", r.net_profit);
    let _ = writeln!(
        s,
        "{:<16}{:.2}% ({base} {:.2}%)",
        "annual_return",
        100.0 * r.annual_return,
        100.0 * r.baseline_annual_return
    );
    let _ = writeln!(s, "{:<16}{}", "sharpe", opt(r.sharpe, 2));
    let _ = writeln!(s, "{:<16}{}", "sortino", opt(r.sortino, 2));
    let _ = writeln!(s, "{:<16}{:.2}%", "mdd", 100.0 * r.mdd);
    let _ = writeln!(s, "{:<16}{}", "corr_baseline", opt(r.corr_baseline, 2));
    let _ = writeln!(s, "{:<16}{}", "num_trades", t.num_trades);
    if t.no_trades {
        let _ = writeln!(s, "{:<16}none", "trades");
    } else {
        let _ = writeln!(s, "{:<16}{:.1}%", "win_rate", 100.0 * t.win_rate);
        let _ = writeln!(s, "{:<16}{:.2}", "avg_profit", t.avg_profit);
        let _ = writeln!(s, "{:<16}{:.2}", "avg_loss", t.avg_loss);
        let _ = writeln!(s, "{:<16}{:.2}", "expectation", t.expectation);
        let _ = writeln!(s, "{:<16}{:.2}", "frequency", t.frequency);
    }
    let _ = writeln!(s, "{:<16}{}", "steps", r.steps);
    s
}

pub const EQUITY_HEADER: [&str; 5] = ["time", "equity", "baseline_equity", "mean", "sigma"];

/// One row of the plot-ready equity file. `mean`/`sigma` are filled for
/// aggregated suites and left empty otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityRow {
    pub time: usize,
    pub equity: Option<f64>,
    pub baseline_equity: Option<f64>,
    pub mean: Option<f64>,
    pub sigma: Option<f64>,
}

pub fn write_equity_csv(path: &Path, rows: &[EquityRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(EQUITY_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        w.write_record([
            r.time.to_string(),
            f(r.equity),
            f(r.baseline_equity),
            f(r.mean),
            f(r.sigma),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_equity_csv(path: &Path) -> Result<Vec<EquityRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `summary.txt` and `equity.csv` into `dir`.
pub fn emit_report(dir: &Path, title: &str, report: &MetricsReport, rows: &[EquityRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, format_summary(title, report)).map_err(|e| Error::io(&summary, e))?;
    write_equity_csv(&dir.join("equity.csv"), rows)
}

/// Per-time-index mean and population standard deviation across curves,
/// truncated to the shortest curve.
pub fn aggregate_curves(curves: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let Some(len) = curves.iter().map(Vec::len).min() else {
        return Vec::new();
    };
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = curves.iter().map(|c| c[t]).collect();
            if vals.iter().all(|&v| v == vals[0]) {
                return (vals[0], 0.0);
            }
            let m = mean(&vals);
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            (m, var.sqrt())
        })
        .collect()
}

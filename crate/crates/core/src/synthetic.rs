//! Deterministic synthetic panels for tests and smoke runs.

use std::f64::consts::TAU;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::market_data::{AlignedDataset, Bar, CurrencyPair, BAR_INTERVAL_MS, UNIVERSE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidSpec {
    pub slots: usize,
    /// Period in bars.
    pub period: f64,
    /// Relative amplitude around the base price.
    pub amplitude: f64,
    /// Spread the twelve pairs evenly over one period instead of moving in phase.
    pub staggered_phase: bool,
    pub tick_volume: u64,
}

impl Default for SinusoidSpec {
    fn default() -> Self {
        SinusoidSpec {
            slots: 20_000,
            period: 192.0,
            amplitude: 0.01,
            staggered_phase: true,
            tick_volume: 100,
        }
    }
}

/// Monday 2012-01-02 00:00 UTC.
pub fn default_start_ms() -> i64 {
    NaiveDate::from_ymd_opt(2012, 1, 2)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp_millis())
        .expect("valid date")
}

fn base_price(pair: &CurrencyPair) -> f64 {
    if pair.quote() == "JPY" {
        100.0
    } else {
        1.0
    }
}

/// Every universe pair closes at `base * (1 + amplitude * sin(2πt/period + φ))`
/// with each bar opening at the previous close, on a gapless 15-minute grid.
pub fn sinusoid_dataset(spec: &SinusoidSpec) -> AlignedDataset {
    let start = default_start_ms();
    let grid: Vec<i64> = (0..spec.slots as i64).map(|i| start + i * BAR_INTERVAL_MS).collect();
    let pairs = CurrencyPair::universe();
    let bars = pairs
        .iter()
        .enumerate()
        .map(|(k, pair)| {
            let phase = if spec.staggered_phase {
                TAU * k as f64 / UNIVERSE.len() as f64
            } else {
                0.0
            };
            let base = base_price(pair);
            let price = |t: f64| base * (1.0 + spec.amplitude * (TAU * t / spec.period + phase).sin());
            grid.iter()
                .enumerate()
                .map(|(i, &ts)| {
                    let open = price(i as f64 - 1.0);
                    let close = price(i as f64);
                    Bar {
                        start: ts,
                        open,
                        high: open.max(close),
                        low: open.min(close),
                        close,
                        tick_volume: spec.tick_volume,
                    }
                })
                .collect()
        })
        .collect();
    AlignedDataset { pairs, grid, bars }
}

/// Geometric random walks with per-bar log volatility `vol` and random tick
/// volumes, one independent path per universe pair.
pub fn random_walk_dataset(slots: usize, vol: f64, seed: u64) -> AlignedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, vol).expect("finite volatility");
    let start = default_start_ms();
    let grid: Vec<i64> = (0..slots as i64).map(|i| start + i * BAR_INTERVAL_MS).collect();
    let pairs = CurrencyPair::universe();
    let bars = pairs
        .iter()
        .map(|pair| {
            let mut close = base_price(pair);
            grid.iter()
                .map(|&ts| {
                    let open = close;
                    close = open * step.sample(&mut rng).exp();
                    let wick = open.max(close) * (1.0 + 0.1 * vol);
                    Bar {
                        start: ts,
                        open,
                        high: wick,
                        low: open.min(close) / (1.0 + 0.1 * vol),
                        close,
                        tick_volume: 1 + (step.sample(&mut rng).abs() / vol * 50.0) as u64,
                    }
                })
                .collect()
        })
        .collect();
    AlignedDataset { pairs, grid, bars }
}

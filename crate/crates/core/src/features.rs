//! Market state construction.
//!
//! A state is `[time (3) | market (16 per pair) | position one-hot (3)]`, which is
//! 198 values for the twelve-pair universe. Per pair the market block holds the 8
//! most recent close log returns followed by the 8 most recent tick-volume log
//! returns, most recent first, each z-scored over a rolling 96-sample window and
//! clamped to `[-10, 10]`.

use std::collections::VecDeque;
use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Timelike};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::market_data::{AlignedDataset, Bar};

pub const TIME_DIM: usize = 3;
pub const POSITION_DIM: usize = 3;
pub const RETURNS_PER_SERIES: usize = 8;
pub const FEATURES_PER_PAIR: usize = 2 * RETURNS_PER_SERIES;
pub const ZSCORE_WINDOW: usize = 96;
pub const CLIP: f64 = 10.0;
/// Standard deviations below this normalize to 0.
pub const STD_FLOOR: f64 = 1e-8;
/// Full state width for the twelve-pair universe.
pub const STATE_DIM: usize = state_dim(12);

pub const fn state_dim(n_pairs: usize) -> usize {
    TIME_DIM + FEATURES_PER_PAIR * n_pairs + POSITION_DIM
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFeatures {
    pub minute_enc: f64,
    pub hour_enc: f64,
    pub dow_enc: f64,
}

impl TimeFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.minute_enc, self.hour_enc, self.dow_enc]
    }
}

fn cyclic(t: u32, period: u32) -> f64 {
    (2.0 * PI * f64::from(t) / f64::from(period)).sin()
}

/// Sinusoidal clock encoding of a UTC timestamp (milliseconds). Weekday is
/// Monday = 0.
pub fn time_features(timestamp_ms: i64) -> TimeFeatures {
    let dt = DateTime::from_timestamp_millis(timestamp_ms).expect("timestamp in chrono range");
    TimeFeatures {
        minute_enc: cyclic(dt.minute(), 60),
        hour_enc: cyclic(dt.hour(), 24),
        dow_enc: cyclic(dt.weekday().num_days_from_monday(), 7),
    }
}

/// `series` holds the last 9 values, oldest first. Returns the 8 log returns,
/// most recent first.
pub fn log_return_stack(series: &[f64]) -> Result<[f64; RETURNS_PER_SERIES]> {
    if series.len() != RETURNS_PER_SERIES + 1 {
        return Err(Error::Feature(format!(
            "need {} values, got {}",
            RETURNS_PER_SERIES + 1,
            series.len()
        )));
    }
    if let Some(v) = series.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Feature(format!("non-positive value {v} in return series")));
    }
    let last = series.len() - 1;
    let mut out = [0.0; RETURNS_PER_SERIES];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (series[last - i] / series[last - i - 1]).ln();
    }
    Ok(out)
}

/// Rolling mean and population standard deviation over the most recent `window`
/// samples of each dimension.
///
/// Moments are maintained with Welford add/remove updates and recomputed exactly
/// every `window` pushes so rounding drift stays bounded on long streams.
#[derive(Debug, Clone)]
pub struct RollingNormalizer {
    window: usize,
    history: Vec<VecDeque<f64>>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    since_refresh: usize,
}

impl RollingNormalizer {
    pub fn new(dim: usize, window: usize) -> Self {
        assert!(window > 0, "window must be positive");
        RollingNormalizer {
            window,
            history: vec![VecDeque::with_capacity(window + 1); dim],
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            since_refresh: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.history.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Samples currently held (identical across dimensions).
    pub fn len(&self) -> usize {
        self.history.first().map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.window
    }

    pub fn push(&mut self, raw: &[f64]) {
        assert_eq!(raw.len(), self.dim(), "normalizer dimension mismatch");
        for (d, &x) in raw.iter().enumerate() {
            let hist = &mut self.history[d];
            hist.push_back(x);
            let n = hist.len() as f64;
            let delta = x - self.mean[d];
            self.mean[d] += delta / n;
            self.m2[d] += delta * (x - self.mean[d]);
            if hist.len() > self.window {
                let old = hist.pop_front().unwrap();
                let n = hist.len() as f64;
                let delta = old - self.mean[d];
                self.mean[d] -= delta / n;
                self.m2[d] -= delta * (old - self.mean[d]);
            }
        }
        self.since_refresh += 1;
        if self.since_refresh >= self.window {
            self.refresh();
        }
    }

    fn refresh(&mut self) {
        for d in 0..self.dim() {
            let hist = &self.history[d];
            let n = hist.len() as f64;
            let mean = hist.iter().sum::<f64>() / n;
            self.mean[d] = mean;
            self.m2[d] = hist.iter().map(|x| (x - mean) * (x - mean)).sum();
        }
        self.since_refresh = 0;
    }

    pub fn mean(&self, d: usize) -> f64 {
        self.mean[d]
    }

    pub fn std(&self, d: usize) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        (self.m2[d].max(0.0) / n as f64).sqrt()
    }

    pub fn zscore(&self, d: usize, raw: f64) -> f64 {
        let std = self.std(d);
        if std < STD_FLOOR {
            0.0
        } else {
            ((raw - self.mean[d]) / std).clamp(-CLIP, CLIP)
        }
    }

    /// Pushes `raw` into the windows, then returns its clipped z-scores.
    pub fn normalize(&mut self, raw: &[f64]) -> Vec<f64> {
        self.push(raw);
        raw.iter().enumerate().map(|(d, &x)| self.zscore(d, x)).collect()
    }
}

/// `[0,1,0]`-style encoding; index 0 is short, 1 flat, 2 long.
pub fn position_one_hot(position: Action) -> [f64; POSITION_DIM] {
    let mut v = [0.0; POSITION_DIM];
    v[position.index()] = 1.0;
    v
}

/// A flattened observation `[time | market | position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    values: Vec<f64>,
}

impl MarketState {
    pub fn assemble(time: TimeFeatures, market: &[f64], position: Action) -> MarketState {
        let mut values = Vec::with_capacity(TIME_DIM + market.len() + POSITION_DIM);
        values.extend_from_slice(&time.as_array());
        values.extend_from_slice(market);
        values.extend_from_slice(&position_one_hot(position));
        MarketState { values }
    }

    /// Attaches a position to the 195-style non-position prefix.
    pub fn from_core(core: &[f64], position: Action) -> MarketState {
        let mut values = Vec::with_capacity(core.len() + POSITION_DIM);
        values.extend_from_slice(core);
        values.extend_from_slice(&position_one_hot(position));
        MarketState { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Everything except the position one-hot.
    pub fn core(&self) -> &[f64] {
        &self.values[..self.values.len() - POSITION_DIM]
    }

    pub fn time(&self) -> &[f64] {
        &self.values[..TIME_DIM]
    }

    pub fn market(&self) -> &[f64] {
        &self.values[TIME_DIM..self.values.len() - POSITION_DIM]
    }

    pub fn position(&self) -> Action {
        let oh = &self.values[self.values.len() - POSITION_DIM..];
        let idx = oh.iter().position(|&v| v == 1.0).expect("valid one-hot");
        Action::from_index(idx)
    }
}

/// Streams aligned bar slots into normalized market feature vectors.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    n_pairs: usize,
    closes: Vec<VecDeque<f64>>,
    volumes: Vec<VecDeque<f64>>,
    normalizer: RollingNormalizer,
}

impl FeaturePipeline {
    pub fn new(n_pairs: usize) -> Self {
        FeaturePipeline {
            n_pairs,
            closes: vec![VecDeque::with_capacity(RETURNS_PER_SERIES + 2); n_pairs],
            volumes: vec![VecDeque::with_capacity(RETURNS_PER_SERIES + 2); n_pairs],
            normalizer: RollingNormalizer::new(FEATURES_PER_PAIR * n_pairs, ZSCORE_WINDOW),
        }
    }

    pub fn market_dim(&self) -> usize {
        FEATURES_PER_PAIR * self.n_pairs
    }

    /// Feeds one grid slot (one bar per pair, panel order). Returns the normalized
    /// market block once both the return stacks and the z-score windows are full.
    pub fn push_slot<'b>(&mut self, bars: impl IntoIterator<Item = &'b Bar>) -> Result<Option<Vec<f64>>> {
        let mut n = 0;
        for (p, bar) in bars.into_iter().enumerate() {
            if p >= self.n_pairs {
                return Err(Error::Feature("more bars than pairs in slot".into()));
            }
            push_bounded(&mut self.closes[p], bar.close);
            // Forward-filled bars carry zero volume; the floor keeps ln defined.
            push_bounded(&mut self.volumes[p], (bar.tick_volume as f64).max(1.0));
            n += 1;
        }
        if n != self.n_pairs {
            return Err(Error::Feature(format!("expected {} bars, got {n}", self.n_pairs)));
        }
        if self.closes[0].len() < RETURNS_PER_SERIES + 1 {
            return Ok(None);
        }
        let mut raw = Vec::with_capacity(self.market_dim());
        for p in 0..self.n_pairs {
            raw.extend_from_slice(&log_return_stack(self.closes[p].make_contiguous())?);
            raw.extend_from_slice(&log_return_stack(self.volumes[p].make_contiguous())?);
        }
        let z = self.normalizer.normalize(&raw);
        Ok(self.normalizer.is_full().then_some(z))
    }
}

fn push_bounded(q: &mut VecDeque<f64>, v: f64) {
    q.push_back(v);
    if q.len() > RETURNS_PER_SERIES + 1 {
        q.pop_front();
    }
}

/// Slot index of the first full observation: 9 closes give the first return
/// stack at slot 8, then the z-score windows need 96 samples.
pub const WARMUP_LAST_SLOT: usize = RETURNS_PER_SERIES + ZSCORE_WINDOW - 1;

/// Runs the pipeline over every slot, returning `(slot, market block)` for each
/// warm slot. Used for inspection and tests; the environment streams instead.
pub fn market_features(dataset: &AlignedDataset) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut pipe = FeaturePipeline::new(dataset.pairs.len());
    let mut out = Vec::new();
    for slot in 0..dataset.len() {
        if let Some(m) = pipe.push_slot(dataset.bars.iter().map(|s| &s[slot]))? {
            out.push((slot, m));
        }
    }
    Ok(out)
}

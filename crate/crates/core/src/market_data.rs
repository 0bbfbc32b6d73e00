//! Tick ingestion, 15-minute bar resampling and multi-pair alignment.
//!
//! Tick files are plain comma-separated text, one quote per line:
//!
//! ```text
//! EUR/USD,20120102 00:00:01.123,1.29568,1.29578
//! ```
//!
//! Files may be gzip-compressed; compression is detected from the magic bytes.
//! Bars are built on the mid-price `(bid + ask) / 2` with the tick count as volume.
//! Alignment forward-fills missing slots with flat zero-volume bars so every pair
//! has exactly one bar per grid slot.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDateTime;
use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bar width used throughout: 15 minutes in milliseconds.
pub const BAR_INTERVAL_MS: i64 = 15 * 60 * 1000;

/// The twelve pairs of the trading universe, in panel order.
pub const UNIVERSE: [&str; 12] = [
    "AUDJPY", "AUDNZD", "AUDUSD", "CADJPY", "CHFJPY", "EURGBP", "EURJPY", "EURUSD", "GBPJPY", "GBPUSD", "NZDUSD",
    "USDCAD",
];

/// Six-letter pair code, stored without separator (`EURUSD`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CurrencyPair(String);

impl CurrencyPair {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn base(&self) -> &str {
        &self.0[..3]
    }

    pub fn quote(&self) -> &str {
        &self.0[3..]
    }

    /// Price value of one basis point: 0.01 for JPY-quoted pairs, 0.0001 otherwise.
    pub fn bp_unit(&self) -> f64 {
        if self.quote() == "JPY" {
            0.01
        } else {
            0.0001
        }
    }

    pub fn universe() -> Vec<CurrencyPair> {
        UNIVERSE.iter().map(|p| CurrencyPair(p.to_string())).collect()
    }
}

impl FromStr for CurrencyPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let code: String = s
            .trim()
            .chars()
            .filter(|c| *c != '/')
            .map(|c| c.to_ascii_uppercase())
            .collect();
        if code.len() != 6 || !code.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(Error::Config(format!("invalid currency pair `{s}`")));
        }
        Ok(CurrencyPair(code))
    }
}

impl TryFrom<String> for CurrencyPair {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CurrencyPair> for String {
    fn from(p: CurrencyPair) -> String {
        p.0
    }
}

impl fmt::Display for CurrencyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub pair: CurrencyPair,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub bid: f64,
    pub ask: f64,
}

impl TickRecord {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// Parses one quote line. `line_no` is only used for error messages.
pub fn parse_tick_line(line: &str, line_no: usize) -> Result<TickRecord> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(err(format!("expected 4 fields, found {}", fields.len())));
    }
    let pair: CurrencyPair = fields[0]
        .parse()
        .map_err(|_| err(format!("bad pair `{}`", fields[0])))?;
    let timestamp = NaiveDateTime::parse_from_str(fields[1], "%Y%m%d %H:%M:%S%.3f")
        .map_err(|e| err(format!("bad timestamp `{}`: {e}", fields[1])))?
        .and_utc()
        .timestamp_millis();
    let number = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(format!("bad price `{s}`")))
    };
    let bid = number(fields[2])?;
    let ask = number(fields[3])?;
    if bid <= 0.0 || ask < bid {
        return Err(err(format!("invalid quote bid={bid} ask={ask}")));
    }
    Ok(TickRecord {
        pair,
        timestamp,
        bid,
        ask,
    })
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Reads a whole tick file. Blank lines are skipped; timestamps must not decrease.
pub fn read_tick_file(path: &Path) -> Result<Vec<TickRecord>> {
    let reader = open_maybe_gz(path)?;
    let mut ticks: Vec<TickRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tick = parse_tick_line(&line, i + 1).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })?;
        if let Some(prev) = ticks.last() {
            if tick.timestamp < prev.timestamp {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("{}: timestamp goes backwards", path.display()),
                });
            }
        }
        ticks.push(tick);
    }
    Ok(ticks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    /// Interval start, milliseconds since the Unix epoch, UTC.
    pub start: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub tick_volume: u64,
}

impl Bar {
    fn flat(start: i64, price: f64) -> Bar {
        Bar {
            start,
            open: price,
            high: price,
            low: price,
            close: price,
            tick_volume: 0,
        }
    }
}

/// Aggregates time-ordered ticks of one pair into OHLC bars of `interval_ms`.
/// Intervals without ticks produce no bar.
pub fn resample(ticks: &[TickRecord], interval_ms: i64) -> Vec<Bar> {
    assert!(interval_ms > 0, "interval must be positive");
    let mut bars: Vec<Bar> = Vec::new();
    for tick in ticks {
        let start = tick.timestamp - tick.timestamp.rem_euclid(interval_ms);
        let mid = tick.mid();
        match bars.last_mut() {
            Some(bar) if bar.start == start => {
                bar.high = bar.high.max(mid);
                bar.low = bar.low.min(mid);
                bar.close = mid;
                bar.tick_volume += 1;
            }
            _ => bars.push(Bar {
                start,
                open: mid,
                high: mid,
                low: mid,
                close: mid,
                tick_volume: 1,
            }),
        }
    }
    bars
}

/// The time-aligned multi-pair panel: `bars[pair][slot]` starts at `grid[slot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub pairs: Vec<CurrencyPair>,
    pub grid: Vec<i64>,
    pub bars: Vec<Vec<Bar>>,
}

impl AlignedDataset {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn pair_index(&self, pair: &CurrencyPair) -> Option<usize> {
        self.pairs.iter().position(|p| p == pair)
    }

    pub fn series(&self, pair: usize) -> &[Bar] {
        &self.bars[pair]
    }

    /// Returns `(pair, bars)` per pair, the input form of [`align`].
    pub fn to_sequences(&self) -> Vec<(CurrencyPair, Vec<Bar>)> {
        self.pairs.iter().cloned().zip(self.bars.iter().cloned()).collect()
    }

    /// Checks the panel invariants.
    pub fn validate(&self) -> Result<()> {
        if self.bars.len() != self.pairs.len() {
            return Err(Error::Alignment("pair count mismatch".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Alignment("grid not strictly increasing".into()));
        }
        for (pair, bars) in self.pairs.iter().zip(&self.bars) {
            if bars.len() != self.grid.len() {
                return Err(Error::Alignment(format!("{pair}: bar count differs from grid")));
            }
            if bars.iter().zip(&self.grid).any(|(b, t)| b.start != *t) {
                return Err(Error::Alignment(format!("{pair}: bar start off grid")));
            }
        }
        Ok(())
    }
}

/// Merges per-pair bar sequences onto one grid.
///
/// The grid is the sorted union of bar starts, beginning at the latest first bar
/// among all pairs. Slots a pair did not trade are filled flat at its previous close
/// with zero volume.
pub fn align(per_pair: Vec<(CurrencyPair, Vec<Bar>)>) -> Result<AlignedDataset> {
    if per_pair.is_empty() {
        return Err(Error::Alignment("no pairs given".into()));
    }
    let mut first_common = i64::MIN;
    for (pair, bars) in &per_pair {
        let first = bars
            .first()
            .ok_or_else(|| Error::Alignment(format!("{pair} has no bars")))?;
        if bars.windows(2).any(|w| w[0].start >= w[1].start) {
            return Err(Error::Alignment(format!("{pair}: bars not strictly increasing")));
        }
        first_common = first_common.max(first.start);
    }

    let mut grid: Vec<i64> = per_pair
        .iter()
        .flat_map(|(_, bars)| bars.iter().map(|b| b.start))
        .filter(|&t| t >= first_common)
        .collect();
    grid.sort_unstable();
    grid.dedup();

    let mut pairs = Vec::with_capacity(per_pair.len());
    let mut panel = Vec::with_capacity(per_pair.len());
    for (pair, bars) in per_pair {
        let mut out = Vec::with_capacity(grid.len());
        // Last bar at or before the grid start seeds the fill price.
        let mut idx = bars.partition_point(|b| b.start < first_common);
        let mut last_close = if idx < bars.len() && bars[idx].start == first_common {
            bars[idx].close
        } else {
            bars[idx - 1].close
        };
        for &t in &grid {
            if idx < bars.len() && bars[idx].start == t {
                last_close = bars[idx].close;
                out.push(bars[idx]);
                idx += 1;
            } else {
                out.push(Bar::flat(t, last_close));
            }
        }
        pairs.push(pair);
        panel.push(out);
    }
    Ok(AlignedDataset {
        pairs,
        grid,
        bars: panel,
    })
}

/// Builds an aligned dataset from every tick file under `dir` (recursively).
///
/// Files are grouped by the pair named in their rows and concatenated in file-name
/// order. When `require_universe` is set, all twelve universe pairs must be present
/// and the panel is ordered as [`UNIVERSE`].
pub fn ingest_dir(dir: &Path, require_universe: bool) -> Result<AlignedDataset> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::Alignment(format!("no tick files under {}", dir.display())));
    }

    let mut ticks_by_pair: BTreeMap<CurrencyPair, Vec<TickRecord>> = BTreeMap::new();
    for path in &files {
        let ticks = read_tick_file(path)?;
        for t in ticks {
            ticks_by_pair.entry(t.pair.clone()).or_default().push(t);
        }
        log::debug!("read {}", path.display());
    }

    let order: Vec<CurrencyPair> = if require_universe {
        let universe = CurrencyPair::universe();
        for p in &universe {
            if !ticks_by_pair.contains_key(p) {
                return Err(Error::Alignment(format!("no ticks for {p}")));
            }
        }
        universe
    } else {
        ticks_by_pair.keys().cloned().collect()
    };

    let per_pair = order
        .into_iter()
        .map(|pair| {
            let mut ticks = ticks_by_pair.remove(&pair).unwrap_or_default();
            // Stable: keeps in-file order for equal timestamps across month files.
            ticks.sort_by_key(|t| t.timestamp);
            let bars = resample(&ticks, BAR_INTERVAL_MS);
            (pair, bars)
        })
        .collect();
    align(per_pair)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| !n.starts_with('.'))
        {
            out.push(path);
        }
    }
    Ok(())
}

const CACHE_MAGIC: &[u8; 8] = b"FXDRQNDS";
const CACHE_VERSION: u32 = 1;

/// Writes the dataset cache.
///
/// Layout, all integers and floats little-endian:
///
/// ```text
/// magic "FXDRQNDS" | version u32 | n_pairs u32 | n_slots u64
/// n_pairs x (len u16, utf8 pair code)
/// n_slots x start i64
/// n_pairs x n_slots x (open f64, high f64, low f64, close f64, tick_volume u64)
/// ```
pub fn save_cache(dataset: &AlignedDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + dataset.len() * (8 + dataset.pairs.len() * 40));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.pairs.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.grid.len() as u64).to_le_bytes());
    for p in &dataset.pairs {
        buf.extend_from_slice(&(p.as_str().len() as u16).to_le_bytes());
        buf.extend_from_slice(p.as_str().as_bytes());
    }
    for t in &dataset.grid {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for series in &dataset.bars {
        for b in series {
            for v in [b.open, b.high, b.low, b.close] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&b.tick_volume.to_le_bytes());
        }
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_cache(path: &Path) -> Result<AlignedDataset> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    if r.take(8)? != CACHE_MAGIC {
        return Err(Error::Format(format!("{}: not a dataset cache", path.display())));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let n_pairs = r.u32()? as usize;
    let n_slots = r.u64()? as usize;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("pair name is not utf8".into()))?;
        pairs.push(name.parse()?);
    }
    let grid = (0..n_slots).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
    let mut bars = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let mut series = Vec::with_capacity(n_slots);
        for &start in &grid {
            series.push(Bar {
                start,
                open: r.f64()?,
                high: r.f64()?,
                low: r.f64()?,
                close: r.f64()?,
                tick_volume: r.u64()?,
            });
        }
        bars.push(series);
    }
    if !r.is_at_end() {
        return Err(Error::Format("trailing bytes in dataset cache".into()));
    }
    let dataset = AlignedDataset { pairs, grid, bars };
    dataset.validate()?;
    Ok(dataset)
}

/// Little-endian cursor over a byte slice, shared with the checkpoint reader.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    pub(crate) fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub(crate) fn is_at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

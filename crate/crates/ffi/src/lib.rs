//! C ABI over the fxdrqn library.
//!
//! Objects are opaque handles created by `fx_*` constructors and released with
//! the matching `fx_*_free`. Fallible calls return an [`FxStatus`]; on failure
//! [`fx_last_error`] describes the most recent error on the calling thread.
//! Undefined ratios are reported as NaN.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fxdrqn::analytics;
use fxdrqn::env::{commission, Action};
use fxdrqn::market_data::{self, AlignedDataset};
use fxdrqn::synthetic::{sinusoid_dataset, SinusoidSpec};
use fxdrqn::trainer::{self, RunConfig, RunOutcome};
use fxdrqn::{checkpoint, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Bankrupt = 6,
    Numerical = 7,
    Config = 8,
    Panic = 9,
}

/// Aligned multi-pair bar panel.
pub struct FxDataset(AlignedDataset);

/// A finished training run.
pub struct FxRunResult(RunOutcome);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FxMetrics {
    pub net_profit: f64,
    pub annual_return: f64,
    pub sharpe: f64,
    pub sortino: f64,
    pub mdd: f64,
    pub corr_baseline: f64,
    pub num_trades: usize,
    pub win_rate: f64,
    pub avg_profit: f64,
    pub avg_loss: f64,
    pub expectation: f64,
    pub frequency: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FxAnnualized {
    pub annual_return: f64,
    pub sharpe: f64,
    pub sortino: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FxStatus {
    match e {
        Error::Io { .. } => FxStatus::Io,
        Error::Format(_) | Error::Parse { .. } => FxStatus::Format,
        Error::Alignment(_) | Error::Feature(_) => FxStatus::Data,
        Error::Bankrupt { .. } => FxStatus::Bankrupt,
        Error::NumericalFault(_) => FxStatus::Numerical,
        Error::Config(_) => FxStatus::Config,
        Error::Contract(_) => FxStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FxStatus, String)>) -> FxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FxStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FxStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (FxStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FxStatus, String) {
    (FxStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FxStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FxStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn nan_if_none(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset cache written by `fxdrqn ingest`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fx_dataset_load(path: *const c_char, out: *mut *mut FxDataset) -> FxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let data = market_data::load_cache(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(FxDataset(data)));
        Ok(())
    })
}

/// Twelve-pair sinusoid panel with `slots` bars.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fx_dataset_sinusoid(
    slots: usize,
    period: f64,
    amplitude: f64,
    out: *mut *mut FxDataset,
) -> FxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if slots == 0 || !(period > 0.0) || !(0.0..1.0).contains(&amplitude) {
            return Err((
                FxStatus::InvalidArgument,
                "need slots > 0, period > 0, 0 <= amplitude < 1".into(),
            ));
        }
        let data = sinusoid_dataset(&SinusoidSpec {
            slots,
            period,
            amplitude,
            ..SinusoidSpec::default()
        });
        *out = Box::into_raw(Box::new(FxDataset(data)));
        Ok(())
    })
}

/// Number of time slots, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fx_dataset_len(data: *const FxDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `data` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fx_dataset_free(data: *mut FxDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Runs one training pass. `config_toml` may be NULL for defaults; otherwise it
/// uses the same keys as the CLI config file. A bankrupt run still returns
/// `FX_STATUS_OK` with a handle; see [`fx_run_failed`].
///
/// # Safety
/// `data` must be a live dataset handle, `config_toml` NULL or NUL-terminated,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fx_run(
    data: *const FxDataset,
    config_toml: *const c_char,
    out: *mut *mut FxRunResult,
) -> FxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        let config = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml(str_arg(config_toml, "config_toml")?).map_err(lib_err)?
        };
        let outcome = trainer::run(&config, &data.0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(FxRunResult(outcome)));
        Ok(())
    })
}

/// Number of steps taken, or 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn fx_run_steps(run: *const FxRunResult) -> usize {
    run.as_ref().map_or(0, |r| r.0.log.len())
}

/// 1 if the run stopped early (bankruptcy or numerical fault), else 0.
///
/// # Safety
/// `run` must be NULL or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn fx_run_failed(run: *const FxRunResult) -> i32 {
    run.as_ref().map_or(0, |r| i32::from(r.0.failure.is_some()))
}

/// Copies up to `len` equity values (initial cash first, `steps + 1` in total)
/// into `buf` and stores the total available in `*available`.
///
/// # Safety
/// `run` must be a live handle, `buf` valid for `len` doubles (or NULL when
/// `len` is 0), and `available` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn fx_run_equity(
    run: *const FxRunResult,
    buf: *mut f64,
    len: usize,
    available: *mut usize,
) -> FxStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let equity = run.0.equity();
        if !available.is_null() {
            *available = equity.len();
        }
        if len > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            let n = len.min(equity.len());
            ptr::copy_nonoverlapping(equity.as_ptr(), buf, n);
        }
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fx_run_metrics(run: *const FxRunResult, out: *mut FxMetrics) -> FxStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = run.0.report();
        *out = FxMetrics {
            net_profit: r.net_profit,
            annual_return: r.annual_return,
            sharpe: nan_if_none(r.sharpe),
            sortino: nan_if_none(r.sortino),
            mdd: r.mdd,
            corr_baseline: nan_if_none(r.corr_baseline),
            num_trades: r.trades.num_trades,
            win_rate: r.trades.win_rate,
            avg_profit: r.trades.avg_profit,
            avg_loss: r.trades.avg_loss,
            expectation: r.trades.expectation,
            frequency: r.trades.frequency,
        };
        Ok(())
    })
}

/// Writes the final agent checkpoint of `run` to `path`.
///
/// # Safety
/// `run` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fx_run_save_checkpoint(run: *const FxRunResult, path: *const c_char) -> FxStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let path = str_arg(path, "path")?;
        checkpoint::save(&run.0.agent, Path::new(path)).map_err(lib_err)
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fx_run_free(run: *mut FxRunResult) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Transaction cost of moving from position `prev` to `next` (each -1, 0 or 1).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fx_commission(prev: i8, next: i8, trade_size: f64, spread: f64, out: *mut f64) -> FxStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (Some(p), Some(n)) = (Action::from_value(prev), Action::from_value(next)) else {
            return Err((FxStatus::InvalidArgument, "positions must be -1, 0 or 1".into()));
        };
        *out = commission(p, n, trade_size, spread);
        Ok(())
    })
}

/// Annualized return, Sharpe and Sortino of `n` daily log returns.
///
/// # Safety
/// `daily` must be valid for `n` doubles (or NULL when `n` is 0) and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fx_annualize(daily: *const f64, n: usize, out: *mut FxAnnualized) -> FxStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let xs: &[f64] = if n == 0 {
            &[]
        } else if daily.is_null() {
            return Err(null("daily"));
        } else {
            std::slice::from_raw_parts(daily, n)
        };
        let a = analytics::annualize(xs);
        *out = FxAnnualized {
            annual_return: a.annual_return,
            sharpe: nan_if_none(a.sharpe),
            sortino: nan_if_none(a.sortino),
        };
        Ok(())
    })
}

#ifndef FXDRQN_H
#define FXDRQN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FxStatus {
  FX_STATUS_OK = 0,
  FX_STATUS_NULL_POINTER = 1,
  FX_STATUS_INVALID_ARGUMENT = 2,
  FX_STATUS_IO = 3,
  FX_STATUS_FORMAT = 4,
  FX_STATUS_DATA = 5,
  FX_STATUS_BANKRUPT = 6,
  FX_STATUS_NUMERICAL = 7,
  FX_STATUS_CONFIG = 8,
  FX_STATUS_PANIC = 9,
} FxStatus;

/*
 Aligned multi-pair bar panel.
 */
typedef struct FxDataset FxDataset;

/*
 A finished training run.
 */
typedef struct FxRunResult FxRunResult;

typedef struct FxMetrics {
  double net_profit;
  double annual_return;
  double sharpe;
  double sortino;
  double mdd;
  double corr_baseline;
  size_t num_trades;
  double win_rate;
  double avg_profit;
  double avg_loss;
  double expectation;
  double frequency;
} FxMetrics;

typedef struct FxAnnualized {
  double annual_return;
  double sharpe;
  double sortino;
} FxAnnualized;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. Valid until the
 next failing call on the same thread.
 */
const char *fx_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *fx_version(void);

/*
 Loads a dataset cache written by `fxdrqn ingest`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FxStatus fx_dataset_load(const char *path, struct FxDataset **out);

/*
 Twelve-pair sinusoid panel with `slots` bars.

 # Safety
 `out` must be a valid pointer.
 */
enum FxStatus fx_dataset_sinusoid(size_t slots,
                                  double period,
                                  double amplitude,
                                  struct FxDataset **out);

/*
 Number of time slots, or 0 for NULL.

 # Safety
 `data` must be NULL or a live dataset handle.
 */
size_t fx_dataset_len(const struct FxDataset *data);

/*
 # Safety
 `data` must be NULL or a handle not yet freed.
 */
void fx_dataset_free(struct FxDataset *data);

/*
 Runs one training pass. `config_toml` may be NULL for defaults; otherwise it
 uses the same keys as the CLI config file. A bankrupt run still returns
 `FX_STATUS_OK` with a handle; see [`fx_run_failed`].

 # Safety
 `data` must be a live dataset handle, `config_toml` NULL or NUL-terminated,
 and `out` a valid pointer.
 */
enum FxStatus fx_run(const struct FxDataset *data,
                     const char *config_toml,
                     struct FxRunResult **out);

/*
 Number of steps taken, or 0 for NULL.

 # Safety
 `run` must be NULL or a live run handle.
 */
size_t fx_run_steps(const struct FxRunResult *run);

/*
 1 if the run stopped early (bankruptcy or numerical fault), else 0.

 # Safety
 `run` must be NULL or a live run handle.
 */
int32_t fx_run_failed(const struct FxRunResult *run);

/*
 Copies up to `len` equity values (initial cash first, `steps + 1` in total)
 into `buf` and stores the total available in `*available`.

 # Safety
 `run` must be a live handle, `buf` valid for `len` doubles (or NULL when
 `len` is 0), and `available` NULL or valid.
 */
enum FxStatus fx_run_equity(const struct FxRunResult *run,
                            double *buf,
                            size_t len,
                            size_t *available);

/*
 # Safety
 `run` must be a live handle and `out` a valid pointer.
 */
enum FxStatus fx_run_metrics(const struct FxRunResult *run, struct FxMetrics *out);

/*
 Writes the final agent checkpoint of `run` to `path`.

 # Safety
 `run` must be a live handle and `path` NUL-terminated.
 */
enum FxStatus fx_run_save_checkpoint(const struct FxRunResult *run, const char *path);

/*
 # Safety
 `run` must be NULL or a handle not yet freed.
 */
void fx_run_free(struct FxRunResult *run);

/*
 Transaction cost of moving from position `prev` to `next` (each -1, 0 or 1).

 # Safety
 `out` must be a valid pointer.
 */
enum FxStatus fx_commission(int8_t prev,
                            int8_t next,
                            double trade_size,
                            double spread,
                            double *out);

/*
 Annualized return, Sharpe and Sortino of `n` daily log returns.

 # Safety
 `daily` must be valid for `n` doubles (or NULL when `n` is 0) and `out` a
 valid pointer.
 */
enum FxStatus fx_annualize(const double *daily, size_t n, struct FxAnnualized *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FXDRQN_H */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef NFPLACE_H
#define NFPLACE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call. Values 2 to 4 match the exit codes of the
// command-line tool.
typedef enum NfStatus {
  NF_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or an undersized buffer.
  NF_STATUS_INVALID_ARGUMENT = 1,
  NF_STATUS_CONFIG = 2,
  NF_STATUS_INFEASIBLE = 3,
  NF_STATUS_NON_IDENTIFIABLE = 4,
  NF_STATUS_IO = 5,
  NF_STATUS_INTERNAL = 6,
} NfStatus;

typedef enum NfMode {
  NF_MODE_COHERENT = 0,
  NF_MODE_INCOHERENT = 1,
} NfMode;

typedef enum NfStrategy {
  NF_STRATEGY_EXHAUSTIVE = 0,
  NF_STRATEGY_GREEDY = 1,
} NfStrategy;

// Scenario, grid, body and sampling of a run configuration.
typedef struct NfContext NfContext;

// PEB over the pose grid.
typedef struct NfPebMap NfPebMap;

// Outcome of a placement search.
typedef struct NfTrial NfTrial;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *nf_version(void);

// Message of the last failed call on this thread, empty after a success.
// Valid until the next call on this thread.
const char *nf_last_error_message(void);

// Context with the built-in scenario, grid, body and sampling.
//
// # Safety
// `out` must be a valid pointer.
enum NfStatus nf_context_new_default(struct NfContext **out);

// Context from run-configuration JSON text; relative file references
// resolve against the working directory.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum NfStatus nf_context_from_json(const char *json, struct NfContext **out);

// Context from a run-configuration file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum NfStatus nf_context_from_file(const char *path, struct NfContext **out);

// # Safety
// `ctx` must come from an `nf_context_*` constructor or be null.
void nf_context_free(struct NfContext *ctx);

// Number of grid points.
//
// # Safety
// `ctx` must be a valid context.
enum NfStatus nf_context_grid_len(const struct NfContext *ctx, size_t *out);

// PEB in meters of the deployment `ids` with the vehicle at range `r_m`
// and heading `phi_deg`.
//
// # Safety
// `ctx` must be valid, `ids` must hold `n_ids` values and `out` be valid.
enum NfStatus nf_peb(const struct NfContext *ctx,
                     const size_t *ids,
                     size_t n_ids,
                     enum NfMode mode,
                     double r_m,
                     double phi_deg,
                     double *out);

// PEB of the deployment `ids` at every pose of the context's sampling.
//
// # Safety
// `ctx` must be valid, `ids` must hold `n_ids` values and `out` be valid.
enum NfStatus nf_peb_map(const struct NfContext *ctx,
                         const size_t *ids,
                         size_t n_ids,
                         enum NfMode mode,
                         struct NfPebMap **out);

// Headings and ranges of a map.
//
// # Safety
// All pointers must be valid.
enum NfStatus nf_peb_map_dims(const struct NfPebMap *map, size_t *n_phi, size_t *n_r);

// Copy the PEB values, heading-major (`buf[i_phi * n_r + j_r]`);
// non-identifiable cells are `+inf`.
//
// # Safety
// `map` must be valid and `buf` must hold `len` doubles.
enum NfStatus nf_peb_map_values(const struct NfPebMap *map, double *buf, size_t len);

// `(1 − ε)` percentile of the map; `+inf` when more than an ε fraction of
// cells is non-identifiable.
//
// # Safety
// `map` and `out` must be valid.
enum NfStatus nf_peb_map_rho(const struct NfPebMap *map, double epsilon, double *out);

// # Safety
// `map` must come from [`nf_peb_map`] or be null.
void nf_peb_map_free(struct NfPebMap *map);

// Selections reaching exactly `k` sub-arrays from `singles` centerline
// points and `pairs` mirrored pairs.
uint64_t nf_count_selections(size_t singles, size_t pairs, size_t k);

// Search the context's grid for the `k`-sub-array deployment with the
// lowest ρ. Greedy starts from the context's `trial.initial` or the
// default roof point.
//
// # Safety
// `ctx` and `out` must be valid.
enum NfStatus nf_optimize(const struct NfContext *ctx,
                          enum NfMode mode,
                          enum NfStrategy strategy,
                          size_t k,
                          struct NfTrial **out);

// Candidate counts of a trial.
//
// # Safety
// All pointers must be valid.
enum NfStatus nf_trial_counts(const struct NfTrial *trial,
                              size_t *total,
                              size_t *identifiable,
                              size_t *discarded);

// Best deployment: its ρ and grid-point ids. `n_ids` receives the number
// of ids even when `cap` is too small (then nothing is copied and
// `InvalidArgument` is returned).
//
// # Safety
// `trial`, `n_ids` and `rho_m` must be valid; `ids` must hold `cap` values.
enum NfStatus nf_trial_best(const struct NfTrial *trial,
                            size_t *ids,
                            size_t cap,
                            size_t *n_ids,
                            double *rho_m);

// # Safety
// `trial` must come from [`nf_optimize`] or be null.
void nf_trial_free(struct NfTrial *trial);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFPLACE_H */

#ifndef ISLANDCTL_H
#define ISLANDCTL_H

#pragma once

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IslandctlStatus {
  ISLANDCTL_STATUS_OK = 0,
  ISLANDCTL_STATUS_NULL_POINTER = 1,
  ISLANDCTL_STATUS_INVALID_ARGUMENT = 2,
  ISLANDCTL_STATUS_IO = 3,
  ISLANDCTL_STATUS_PARSE = 4,
  ISLANDCTL_STATUS_VALIDATION = 5,
  ISLANDCTL_STATUS_INFEASIBLE = 6,
  ISLANDCTL_STATUS_SOLVER = 7,
  ISLANDCTL_STATUS_INTERNAL = 8,
} IslandctlStatus;

typedef struct IslandctlScenario IslandctlScenario;

typedef struct IslandctlSchedule IslandctlSchedule;

typedef struct IslandctlTrace IslandctlTrace;

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library on the same thread.
const char *islandctl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *islandctl_version(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void islandctl_string_free(char *s);

// Loads and validates a scenario file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum IslandctlStatus islandctl_scenario_load(const char *path, struct IslandctlScenario **out);

// # Safety
// `s` must come from `islandctl_scenario_load` and not be freed twice.
void islandctl_scenario_free(struct IslandctlScenario *s);

// Number of assets in the scenario.
//
// # Safety
// `s` must be a live scenario handle.
size_t islandctl_scenario_asset_count(const struct IslandctlScenario *s);

// Solves the storage reservation schedule at confidence level `confidence`.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum IslandctlStatus islandctl_schedule_solve(const struct IslandctlScenario *scenario,
                                              double confidence,
                                              struct IslandctlSchedule **out);

// Reads a schedule previously written as JSON.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum IslandctlStatus islandctl_schedule_load(const char *path, struct IslandctlSchedule **out);

// A schedule that reserves nothing, aligned with the scenario start.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum IslandctlStatus islandctl_schedule_empty(const struct IslandctlScenario *scenario,
                                              struct IslandctlSchedule **out);

// # Safety
// `s` must be a live schedule handle; `objective` and `reserved_kwh` must be
// writable.
enum IslandctlStatus islandctl_schedule_totals(const struct IslandctlSchedule *s,
                                               double *objective,
                                               double *reserved_kwh);

// Schedule as JSON; free the result with `islandctl_string_free`.
//
// # Safety
// `s` must be a live schedule handle; `out` must be writable.
enum IslandctlStatus islandctl_schedule_to_json(const struct IslandctlSchedule *s, char **out);

// # Safety
// `s` must come from this library and not be freed twice.
void islandctl_schedule_free(struct IslandctlSchedule *s);

// Simulates islanded operation with the scenario's own settings.
//
// # Safety
// `scenario` and `schedule` must be live handles; `out` must be writable.
enum IslandctlStatus islandctl_island_run(const struct IslandctlScenario *scenario,
                                          const struct IslandctlSchedule *schedule,
                                          struct IslandctlTrace **out);

// Number of control intervals in the trace.
//
// # Safety
// `t` must be a live trace handle.
size_t islandctl_trace_len(const struct IslandctlTrace *t);

// Mean GFR power of control interval `index`.
//
// # Safety
// `t` must be a live trace handle; `gfr_kw` must be writable.
enum IslandctlStatus islandctl_trace_gfr_kw(const struct IslandctlTrace *t,
                                            size_t index,
                                            double *gfr_kw);

// Shed and curtailed energy over the whole trace.
//
// # Safety
// `t` must be a live trace handle; both outputs must be writable.
enum IslandctlStatus islandctl_trace_energy(const struct IslandctlTrace *t,
                                            double *shed_kwh,
                                            double *curtailed_kwh);

// Trace as CSV; free the result with `islandctl_string_free`.
//
// # Safety
// `t` must be a live trace handle; `out` must be writable.
enum IslandctlStatus islandctl_trace_to_csv(const struct IslandctlTrace *t, char **out);

// # Safety
// `t` must come from this library and not be freed twice.
void islandctl_trace_free(struct IslandctlTrace *t);

// Minimal control interval in milliseconds for a communication graph of the
// given diameter; negative on invalid input.
double islandctl_feasible_delta_t_ms(size_t diameter, double delay_ms, double margin_ms);

#endif  /* ISLANDCTL_H */

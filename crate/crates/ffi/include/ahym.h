#ifndef AHYM_H
#define AHYM_H

/* Generated by cbindgen from ahym-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum AhymStatus {
  /**
   * success
   */
  AHYM_STATUS_OK = 0,
  /**
   * unusable arguments or configuration
   */
  AHYM_STATUS_USAGE = 1,
  /**
   * numeric failure while running
   */
  AHYM_STATUS_NUMERIC = 2,
  /**
   * an invariant battery reported failures
   */
  AHYM_STATUS_INVARIANT = 3,
  /**
   * a required pointer argument was null
   */
  AHYM_STATUS_NULL_ARG = 4,
  /**
   * a string argument was not valid UTF-8
   */
  AHYM_STATUS_UTF8 = 5,
  /**
   * an internal panic was caught
   */
  AHYM_STATUS_PANIC = 6,
} AhymStatus;

/**
 * Opaque run-outcome handle.
 */
typedef struct AhymOutcome AhymOutcome;

/**
 * Opaque scenario handle.
 */
typedef struct AhymScenario AhymScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ahym_last_error_message(void);

/**
 * Parse a scenario from TOML text.
 */
enum AhymStatus ahym_scenario_from_toml(const char *text, struct AhymScenario **out);

/**
 * Load a scenario from a TOML file.
 */
enum AhymStatus ahym_scenario_from_file(const char *path, struct AhymScenario **out);

/**
 * Load one of the built-in scenario presets by name.
 */
enum AhymStatus ahym_scenario_from_preset(const char *name, struct AhymScenario **out);

/**
 * Release a scenario handle.
 */
void ahym_scenario_free(struct AhymScenario *scn);

/**
 * Execute a scenario; CSV series, JSON summaries and field dumps are
 * written under `out_dir`.
 */
enum AhymStatus ahym_run(const struct AhymScenario *scn,
                         const char *out_dir,
                         struct AhymOutcome **out);

/**
 * Release an outcome handle.
 */
void ahym_outcome_free(struct AhymOutcome *outcome);

/**
 * Exit code implied by the outcome (0 ok, 2 numeric failure, ...).
 */
int32_t ahym_outcome_exit_code(const struct AhymOutcome *outcome);

/**
 * JSON summary of a run outcome. Free with `ahym_string_free`.
 */
enum AhymStatus ahym_outcome_summary_json(const struct AhymOutcome *outcome, char **out);

/**
 * Run a named invariant battery; the JSON report is returned through
 * `report` (free with `ahym_string_free`). Returns `Invariant` when any
 * check fails, `Usage` for unknown suite names.
 */
enum AhymStatus ahym_verify(const char *suite, char **report);

/**
 * Newline-separated list of built-in scenario preset names.
 * Free with `ahym_string_free`.
 */
enum AhymStatus ahym_preset_names(char **out);

/**
 * The byte-exact field-dump layout and CSV schema documentation.
 * Free with `ahym_string_free`.
 */
enum AhymStatus ahym_dump_schema(char **out);

/**
 * Release a string returned by this library.
 */
void ahym_string_free(char *s);

/**
 * Library version as a static string (no free needed).
 */
const char *ahym_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AHYM_H */

#ifndef ACTRECON_H
#define ACTRECON_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  AR_STATUS_OK = 0,
  AR_STATUS_NULL_ARGUMENT = 1,
  AR_STATUS_INVALID_ARGUMENT = 2,
  AR_STATUS_IO = 3,
  AR_STATUS_PARSE = 4,
  AR_STATUS_CONFIG = 5,
  AR_STATUS_MISSING_INPUT = 6,
  AR_STATUS_EMPTY_INPUT = 7,
  AR_STATUS_NUMERIC = 8,
  AR_STATUS_VALIDATION_FAILED = 9,
  AR_STATUS_BUFFER_TOO_SMALL = 10,
  AR_STATUS_PANIC = 11,
} ArStatus;

/**
 * Opaque per-type temporal profile over 144 ten-minute slots.
 */
typedef struct ArProfile ArProfile;

/**
 * Opaque nearest-station index.
 */
typedef struct ArStationIndex ArStationIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ar_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ar_version(void);

/**
 * Number of activity types; indices run from 0 to this value minus one.
 */
uintptr_t ar_activity_count(void);

/**
 * Static name of activity type `index`, or null when out of range.
 */
const char *ar_activity_name(uintptr_t index);

/**
 * Builds an index from a `station_id,lon,lat` CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
ArStatus ar_station_index_from_csv(const char *path, ArStationIndex **out);

/**
 * Builds an index from `n` parallel arrays of ids and WGS84 coordinates.
 *
 * # Safety
 * `ids`, `lons` and `lats` must each point to `n` valid elements and every
 * id must be a NUL-terminated string.
 */
ArStatus ar_station_index_new(const char *const *ids,
                              const double *lons,
                              const double *lats,
                              uintptr_t n,
                              ArStationIndex **out);

/**
 * Number of stations in the index; 0 for null.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
uintptr_t ar_station_index_len(const ArStationIndex *index);

/**
 * Nearest station to a WGS84 point. Writes the NUL-terminated id into
 * `id_buf` (capacity `id_len` bytes) and the distance in meters into
 * `distance_m` when non-null.
 *
 * # Safety
 * `index` must be a live handle and `id_buf` must hold `id_len` bytes.
 */
ArStatus ar_station_index_nearest(const ArStationIndex *index,
                                  double lon,
                                  double lat,
                                  char *id_buf,
                                  uintptr_t id_len,
                                  double *distance_m);

/**
 * # Safety
 * `index` must be null or a handle not yet freed.
 */
void ar_station_index_free(ArStationIndex *index);

/**
 * Loads a profile written by the `profiles` stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
ArStatus ar_profile_from_csv(const char *path, ArProfile **out);

/**
 * Builds a profile from `7 * 144` row-major probabilities, one row per
 * inferable type: Shopping, DailyLife, Transport, DrinkEat, LeisureSport,
 * Education, Other.
 *
 * # Safety
 * `probs` must point to `7 * 144` values and `out` must be valid.
 */
ArStatus ar_profile_new(const double *probs, ArProfile **out);

/**
 * Posterior over the 7 inferable types for a stay arriving in `slot`
 * (0..144) whose candidate POIs number `counts[i]` of inferable type `i`,
 * in the order of [`ar_profile_new`].
 * Writes 7 probabilities to `out_probs` and the argmax activity index
 * (as used by [`ar_activity_name`]) to `out_argmax` when non-null.
 *
 * # Safety
 * `profile` must be live, `counts` must hold 7 values and `out_probs`
 * must have room for 7.
 */
ArStatus ar_profile_posterior(const ArProfile *profile,
                              const uint32_t *counts,
                              uintptr_t slot,
                              double *out_probs,
                              uintptr_t *out_argmax);

/**
 * # Safety
 * `profile` must be null or a handle not yet freed.
 */
void ar_profile_free(ArProfile *profile);

/**
 * Runs a pipeline stage the way the command line does. `config_path` may
 * be null for built-in defaults; `overrides` holds `n_overrides`
 * `key=value` strings. On success `out_summary` (when non-null) receives a
 * JSON summary to release with [`ar_string_free`].
 *
 * # Safety
 * String arguments must be NUL-terminated; `overrides` must point to
 * `n_overrides` strings.
 */
ArStatus ar_pipeline_run(const char *stage,
                         const char *config_path,
                         const char *const *overrides,
                         uintptr_t n_overrides,
                         char **out_summary);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void ar_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTRECON_H */

#ifndef OTFS_ISAC_H
#define OTFS_ISAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OtfsStatus {
  OTFS_STATUS_OK = 0,
  OTFS_STATUS_NULL_POINTER = 1,
  OTFS_STATUS_INVALID_ARGUMENT = 2,
  OTFS_STATUS_INFEASIBLE = 3,
  OTFS_STATUS_NUMERICAL = 4,
  OTFS_STATUS_IO = 5,
  OTFS_STATUS_BUFFER_TOO_SMALL = 6,
  OTFS_STATUS_PANIC = 7,
} OtfsStatus;

typedef enum OtfsPreset {
  // 4 x 64 grid of the capacity study.
  OTFS_PRESET_TABLE2 = 0,
  // 8 x 16 grid of the waveform study.
  OTFS_PRESET_TABLE3 = 1,
} OtfsPreset;

// Opaque run state: configuration, geometry and lazily built sensing data.
typedef struct OtfsSession OtfsSession;

typedef struct OtfsDesignSummary {
  double eta;
  double objective;
  double sinr;
  double isl;
  double p_d;
  double peak_fraction;
  size_t iterations;
  bool converged;
} OtfsDesignSummary;

// Capacity lower bounds in bits per transmitted sample.
typedef struct OtfsCapacity {
  double snr_db;
  double otfs_matrix;
  double otfs_scalar;
  double ofdm;
} OtfsCapacity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *otfs_version(void);

// Bytes needed for the last error message including the nul; 0 if none.
size_t otfs_last_error_length(void);

// Copies the last error message of this thread into `buf`.
//
// # Safety
// `buf` must be valid for `len` bytes of writes.
enum OtfsStatus otfs_last_error_message(char *buf, size_t len);

// Creates a session from a built-in preset, one of the [`OtfsPreset`] values.
// Taken as an integer so an out-of-range value is an error, not UB.
//
// # Safety
// `out` must be valid for one pointer write.
enum OtfsStatus otfs_session_new_preset(uint32_t preset, struct OtfsSession **out);

// Creates a session from TOML configuration text.
//
// # Safety
// `toml` must be a nul-terminated string; `out` valid for one pointer write.
enum OtfsStatus otfs_session_new_toml(const char *toml, struct OtfsSession **out);

// Releases a session; null is ignored.
//
// # Safety
// `session` must come from a constructor here and not be used afterwards.
void otfs_session_free(struct OtfsSession *session);

// Number of pilot symbols `K_p`; 0 for a null session.
//
// # Safety
// `session` must be null or a live session.
size_t otfs_session_pilot_len(const struct OtfsSession *session);

// Optimizes the design at weight `eta` (1 = communication only).
//
// When `pilot` is non-null it receives the pilot as interleaved re/im pairs
// and `pilot_len` must be at least `2 * K_p`.
//
// # Safety
// `session` live, `summary` valid for one write, `pilot` null or valid for
// `pilot_len` doubles.
enum OtfsStatus otfs_session_optimize(const struct OtfsSession *session,
                                      double eta,
                                      struct OtfsDesignSummary *summary,
                                      double *pilot,
                                      size_t pilot_len);

// Monte Carlo capacity bounds at one SNR.
//
// # Safety
// `session` live, `out` valid for one write.
enum OtfsStatus otfs_session_capacity(const struct OtfsSession *session,
                                      double snr_db,
                                      size_t trials,
                                      uint64_t seed,
                                      struct OtfsCapacity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTFS_ISAC_H */

#ifndef NEUROLOCK_H
#define NEUROLOCK_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NlFeatureKind {
  NL_FEATURE_KIND_PLV = 0,
  NL_FEATURE_KIND_PAC = 1,
  NL_FEATURE_KIND_PAC_RAW = 2,
  NL_FEATURE_KIND_SE = 3,
} NlFeatureKind;

typedef enum NlMode {
  NL_MODE_SAMPLE_PHASE = 0,
  NL_MODE_SAMPLE_ENV = 1,
  NL_MODE_WINDOW_FEATURE = 2,
  NL_MODE_COMBINED = 3,
  NL_MODE_RANDOM_PHASE = 4,
} NlMode;

typedef enum NlStatus {
  NL_STATUS_OK = 0,
  /**
   * A queue had nothing to return.
   */
  NL_STATUS_EMPTY = 1,
  NL_STATUS_NULL_POINTER = 2,
  NL_STATUS_CONFIG = 3,
  NL_STATUS_DATA = 4,
  NL_STATUS_PANIC = 5,
} NlStatus;

/**
 * Opaque LPE lookup tables.
 */
typedef struct NlLpe NlLpe;

/**
 * Opaque streaming pipeline with its output queues.
 */
typedef struct NlPipeline NlPipeline;

/**
 * Opaque charge-balanced stimulator.
 */
typedef struct NlStimulator NlStimulator;

/**
 * One phase conversion.
 */
typedef struct NlPhase {
  /**
   * Signed 10-bit code, -512..=511 covering [-π, π).
   */
  int16_t code;
  bool degenerate;
} NlPhase;

typedef struct NlTriggerEvent {
  /**
   * Decimated-rate sample index.
   */
  uint64_t t_index;
  enum NlMode mode;
  uint8_t stim_channel;
  int16_t target_code;
  int16_t effective_target_code;
  bool has_window_value;
  /**
   * UQ15, 32768 = 1.0.
   */
  uint16_t window_value;
  uint8_t source;
} NlTriggerEvent;

typedef struct NlFeature {
  uint64_t window_index;
  uint8_t source;
  enum NlFeatureKind kind;
  /**
   * UQ15, 32768 = 1.0.
   */
  uint16_t value;
} NlFeature;

/**
 * Input-rate interval the front end should blank.
 */
typedef struct NlBlanking {
  uint64_t start;
  uint32_t duration;
} NlBlanking;

/**
 * Outcome of one delivered pulse.
 */
typedef struct NlPulse {
  double residual_v;
  double i_anodic_ua;
  bool clamped;
} NlPulse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t nl_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nl_version(void);

struct NlLpe *nl_lpe_new(void);

/**
 * # Safety
 * `lpe` must come from [`nl_lpe_new`] and not be used afterwards.
 */
void nl_lpe_free(struct NlLpe *lpe);

/**
 * # Safety
 * `lpe` must be a live handle and `out` writable.
 */
enum NlStatus nl_lpe_phase(const struct NlLpe *lpe, int16_t re, int16_t im, struct NlPhase *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum NlStatus nl_cordic_phase(int16_t re, int16_t im, struct NlPhase *out);

/**
 * Build a pipeline from a JSON run configuration.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` writable.
 */
enum NlStatus nl_pipeline_new(const char *config_json, struct NlPipeline **out);

/**
 * # Safety
 * `p` must come from [`nl_pipeline_new`] and not be used afterwards.
 */
void nl_pipeline_free(struct NlPipeline *p);

/**
 * Feed one 16-channel ADC frame. `produced` is set when the frame
 * yielded a decimated sample.
 *
 * # Safety
 * `p` must be live, `codes` must point to 16 values, `produced` writable.
 */
enum NlStatus nl_pipeline_step(struct NlPipeline *p,
                               const int16_t *codes,
                               bool blanked,
                               bool *produced);

/**
 * Latest phase code of every channel.
 *
 * # Safety
 * `p` must be live and `out` must have room for 16 values.
 */
enum NlStatus nl_pipeline_phases(const struct NlPipeline *p, int16_t *out);

/**
 * # Safety
 * `p` must be live and `out` writable.
 */
enum NlStatus nl_pipeline_next_event(struct NlPipeline *p, struct NlTriggerEvent *out);

/**
 * # Safety
 * `p` must be live and `out` writable.
 */
enum NlStatus nl_pipeline_next_feature(struct NlPipeline *p, struct NlFeature *out);

/**
 * # Safety
 * `p` must be live and `out` writable.
 */
enum NlStatus nl_pipeline_next_blanking(struct NlPipeline *p, struct NlBlanking *out);

/**
 * Create a stimulator. Null JSON pointers select the defaults; otherwise
 * they hold pulse parameters and electrode state objects.
 *
 * # Safety
 * Non-null strings must be NUL terminated; `out` must be writable.
 */
enum NlStatus nl_stimulator_new(const char *pulse_json,
                                const char *electrode_json,
                                bool charge_balance,
                                struct NlStimulator **out);

/**
 * # Safety
 * `s` must come from [`nl_stimulator_new`] and not be used afterwards.
 */
void nl_stimulator_free(struct NlStimulator *s);

/**
 * Deliver one pulse starting at `t_us`.
 *
 * # Safety
 * `s` must be live and `out` writable.
 */
enum NlStatus nl_stimulator_fire(struct NlStimulator *s, double t_us, struct NlPulse *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROLOCK_H */

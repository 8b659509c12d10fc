#ifndef DAS_FFI_H
#define DAS_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of a feature vector.
 */
#define DAS_FEATURE_LEN 100

/**
 * Result code of every fallible call.
 */
typedef enum DasStatus {
  DAS_STATUS_OK = 0,
  DAS_STATUS_NULL_POINTER = 1,
  DAS_STATUS_INVALID_ARGUMENT = 2,
  DAS_STATUS_IO = 3,
  DAS_STATUS_FORMAT = 4,
  DAS_STATUS_NUMERIC = 5,
  DAS_STATUS_PANIC = 6,
} DasStatus;

/**
 * Pipeline selector; also the class of detections and events.
 */
typedef enum DasPipeline {
  DAS_PIPELINE_CLASSIC = 0,
  DAS_PIPELINE_IMAGE = 1,
} DasPipeline;

/**
 * Opaque spectral-feature classifier.
 */
typedef struct DasClassicModel DasClassicModel;

/**
 * Opaque CNN.
 */
typedef struct DasCnnModel DasCnnModel;

/**
 * Opaque list of events produced by a pipeline run.
 */
typedef struct DasEvents DasEvents;

/**
 * Opaque DAS1 trace.
 */
typedef struct DasTrace DasTrace;

/**
 * Opaque incremental tracker.
 */
typedef struct DasTracker DasTracker;

/**
 * Single-sensor detection fed to a tracker.
 */
typedef struct DasDetection {
  double time_s;
  double position_m;
  double probability;
} DasDetection;

/**
 * Confirmed event.
 */
typedef struct DasEvent {
  double t_confirmed;
  double position_m;
  double probability;
  enum DasPipeline pipeline;
  size_t track_length;
} DasEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *das_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *das_version(void);

/**
 * Synthesizes a trace from a scene description in JSON.
 *
 * # Safety
 * `scene_json` must be a NUL-terminated string; `out` must be writable.
 */
enum DasStatus das_synth_scene(const char *scene_json, struct DasTrace **out);

/**
 * Reads a DAS1 file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DasStatus das_trace_read(const char *path, struct DasTrace **out);

/**
 * Writes a DAS1 file.
 *
 * # Safety
 * `trace` must come from this library; `path` must be NUL-terminated.
 */
enum DasStatus das_trace_write(const struct DasTrace *trace, const char *path);

/**
 * Shape of a trace. Any output pointer may be null.
 *
 * # Safety
 * `trace` must come from this library; non-null outputs must be writable.
 */
enum DasStatus das_trace_info(const struct DasTrace *trace,
                              size_t *sensor_count,
                              uint32_t *sample_rate_hz,
                              size_t *sample_count);

/**
 * Time-major samples; `sample_count * sensor_count` values.
 *
 * # Safety
 * `trace` must come from this library. The pointer lives as long as the trace.
 */
const float *das_trace_samples(const struct DasTrace *trace);

/**
 * # Safety
 * `trace` must come from this library or be null.
 */
void das_trace_free(struct DasTrace *trace);

/**
 * Amplitude of a source seen at `distance_m` with attenuation `alpha` (1/m).
 */
double das_attenuate(double amplitude, double distance_m, double alpha);

/**
 * First 100 one-sided spectral magnitudes of a window. `out` receives
 * [`DAS_FEATURE_LEN`] values.
 *
 * # Safety
 * `samples` must hold `len` values and `out` room for 100.
 */
enum DasStatus das_feature_fft100(const double *samples,
                                  size_t len,
                                  uint32_t sample_rate_hz,
                                  double *out);

/**
 * Loads a classic model from its JSON document.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum DasStatus das_classic_model_from_json(const char *json, struct DasClassicModel **out);

/**
 * Loads a classic model JSON file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum DasStatus das_classic_model_read(const char *path, struct DasClassicModel **out);

/**
 * Classifies one feature vector. `is_excavator` receives 1 or 0 and
 * `probability` the excavator probability; either may be null.
 *
 * # Safety
 * `model` must come from this library and `features` hold `len` values.
 */
enum DasStatus das_classic_predict(const struct DasClassicModel *model,
                                   const double *features,
                                   size_t len,
                                   int32_t *is_excavator,
                                   double *probability);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void das_classic_model_free(struct DasClassicModel *model);

/**
 * Reads a CNN1 checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum DasStatus das_cnn_model_read(const char *path, struct DasCnnModel **out);

/**
 * Writes a CNN1 checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum DasStatus das_cnn_model_write(const struct DasCnnModel *model, const char *path);

/**
 * Classifies one `rows x cols` row-major patch.
 *
 * # Safety
 * `model` must come from this library and `pixels` hold `rows * cols` values.
 */
enum DasStatus das_cnn_predict(const struct DasCnnModel *model,
                               const double *pixels,
                               size_t rows,
                               size_t cols,
                               int32_t *is_excavator,
                               double *probability);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void das_cnn_model_free(struct DasCnnModel *model);

/**
 * Expected false confirmations of a `confirm_count`-detection rule over
 * `sensors` independent sensors and `horizon_s` seconds.
 *
 * # Safety
 * `out` must be writable.
 */
enum DasStatus das_far_estimate(double p_false,
                                size_t confirm_count,
                                size_t sensors,
                                double horizon_s,
                                double *out);

/**
 * Tracker with the default policy of `pipeline`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DasStatus das_tracker_new(enum DasPipeline pipeline, struct DasTracker **out);

/**
 * Tracker with an explicit policy.
 *
 * # Safety
 * `out` must be writable.
 */
enum DasStatus das_tracker_new_with_policy(enum DasPipeline pipeline,
                                           double radius_m,
                                           size_t confirm_count,
                                           double gap_tolerance_s,
                                           double min_probability,
                                           struct DasTracker **out);

/**
 * Feeds all detections of time step `t_s`. Every detection must carry
 * `time_s == t_s`, and steps must be strictly increasing. `new_events`
 * (nullable) receives the number of events confirmed by this step.
 *
 * # Safety
 * `tracker` must come from this library and `detections` hold `count` items.
 */
enum DasStatus das_tracker_step(struct DasTracker *tracker,
                                double t_s,
                                const struct DasDetection *detections,
                                size_t count,
                                size_t *new_events);

/**
 * Number of events confirmed so far.
 *
 * # Safety
 * `tracker` must come from this library or be null (returns 0).
 */
size_t das_tracker_event_count(const struct DasTracker *tracker);

/**
 * Event `index` in confirmation order.
 *
 * # Safety
 * `tracker` must come from this library; `out` must be writable.
 */
enum DasStatus das_tracker_event(const struct DasTracker *tracker,
                                 size_t index,
                                 struct DasEvent *out);

/**
 * # Safety
 * `tracker` must come from this library or be null.
 */
void das_tracker_free(struct DasTracker *tracker);

/**
 * Runs the spectral-feature pipeline with its default policy.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum DasStatus das_run_classic(const struct DasTrace *trace,
                               const struct DasClassicModel *model,
                               double sensor_spacing_m,
                               struct DasEvents **out);

/**
 * Runs the waterfall-image pipeline with its default policy.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum DasStatus das_run_image(const struct DasTrace *trace,
                             const struct DasCnnModel *model,
                             double sensor_spacing_m,
                             struct DasEvents **out);

/**
 * # Safety
 * `events` must come from this library or be null (returns 0).
 */
size_t das_events_count(const struct DasEvents *events);

/**
 * # Safety
 * `events` must come from this library; `out` must be writable.
 */
enum DasStatus das_events_get(const struct DasEvents *events, size_t index, struct DasEvent *out);

/**
 * # Safety
 * `events` must come from this library or be null.
 */
void das_events_free(struct DasEvents *events);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAS_FFI_H */

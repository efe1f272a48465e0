#ifndef SARDINO_H
#define SARDINO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SardinoStatus {
  SARDINO_STATUS_OK = 0,
  SARDINO_STATUS_NULL_POINTER = 1,
  SARDINO_STATUS_INVALID_ARGUMENT = 2,
  SARDINO_STATUS_IO = 3,
  SARDINO_STATUS_FORMAT = 4,
  SARDINO_STATUS_BAD_CONFIG = 5,
  SARDINO_STATUS_BAD_TELEMETRY = 6,
  SARDINO_STATUS_NO_BUDGET = 7,
  SARDINO_STATUS_SHAPE_MISMATCH = 8,
  SARDINO_STATUS_PANIC = 9,
  SARDINO_STATUS_INTERNAL = 10,
} SardinoStatus;

// A loaded HyperNet.
typedef struct SardinoModel SardinoModel;

// A loaded latency predictor (tree or linear).
typedef struct SardinoPredictor SardinoPredictor;

// Ensemble decision for one input.
typedef struct SardinoVerdict {
  // Majority label, lowest index on ties; reported for flagged inputs too.
  uint32_t label;
  // 1 when the input goes to the operator.
  uint8_t flagged;
  double consistency;
  uint16_t n;
} SardinoVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *sardino_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *sardino_last_error(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SardinoStatus sardino_model_load(const char *path, struct SardinoModel **out);

// # Safety
// `model` must come from `sardino_model_load` and not be used afterwards. NULL is a no-op.
void sardino_model_free(struct SardinoModel *model);

// Floats per input image, or 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
size_t sardino_model_input_len(const struct SardinoModel *model);

// # Safety
// `model` must be NULL or a live handle.
size_t sardino_model_classes(const struct SardinoModel *model);

// Generate frame `frame_id`'s ensemble of `n` members from `base_seed` and decide
// `count` crops (`count · input_len` floats in `images`) at threshold `t_s`.
// `out` receives `count` verdicts; `record_out`, if not NULL, the 26-byte seed
// record that replays this ensemble.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum SardinoStatus sardino_classify_frame(const struct SardinoModel *model,
                                          uint64_t frame_id,
                                          uint64_t base_seed,
                                          uint16_t n,
                                          double t_s,
                                          const float *images,
                                          size_t count,
                                          struct SardinoVerdict *out,
                                          uint8_t *record_out);

// Regenerate the ensemble described by a 26-byte seed record and decide one image.
//
// # Safety
// `record` must point to 26 bytes and `image` to `input_len` floats.
enum SardinoStatus sardino_replay_verdict(const struct SardinoModel *model,
                                          const uint8_t *record,
                                          double t_s,
                                          const float *image,
                                          struct SardinoVerdict *out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SardinoStatus sardino_predictor_load(const char *path, struct SardinoPredictor **out);

// # Safety
// `predictor` must come from `sardino_predictor_load`. NULL is a no-op.
void sardino_predictor_free(struct SardinoPredictor *predictor);

// Predicted latency (ms) of an `n`-member ensemble. Telemetry traces are `len`
// samples each (10), oldest first; `power` is read even if the model ignores it.
//
// # Safety
// `util` and `power` must hold `len` doubles each; `out` must be valid.
enum SardinoStatus sardino_predict_latency(const struct SardinoPredictor *predictor,
                                           uint32_t n,
                                           const double *util,
                                           const double *power,
                                           size_t len,
                                           double *out);

// Largest `N` in `[n_min, n_max]` predicted to meet `deadline_ms`. When none does,
// `*n_out = n_min` and `*met_out = 0`.
//
// # Safety
// As for `sardino_predict_latency`; `n_out` and `met_out` must be valid.
enum SardinoStatus sardino_plan_size(const struct SardinoPredictor *predictor,
                                     const double *util,
                                     const double *power,
                                     size_t len,
                                     double deadline_ms,
                                     uint32_t n_min,
                                     uint32_t n_max,
                                     uint32_t *n_out,
                                     uint8_t *met_out);

// Per-crop deadline `(1000/fps − t_d) / k`; `NO_BUDGET` when detection uses the period.
//
// # Safety
// `out` must be valid.
enum SardinoStatus sardino_compute_deadline(double fps, double t_d_ms, uint32_t k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SARDINO_H */

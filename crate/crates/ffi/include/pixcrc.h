#ifndef PIXCRC_H
#define PIXCRC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Order-statistic rule for `pixcrc_calibrate_fnr`.
 */
#define PIXCRC_RULE_CEIL 0

#define PIXCRC_RULE_FLOOR 1

typedef enum PixcrcStatus {
  PIXCRC_STATUS_OK = 0,
  PIXCRC_STATUS_IO = 1,
  PIXCRC_STATUS_VALIDATION = 2,
  PIXCRC_STATUS_INFEASIBLE = 3,
  PIXCRC_STATUS_NULL_POINTER = 4,
  PIXCRC_STATUS_PANIC = 5,
} PixcrcStatus;

/**
 * Opaque handle to a validated set of score maps.
 */
typedef struct PixcrcScoreSet PixcrcScoreSet;

typedef struct PixcrcCalibration {
  double lambda_hat;
  double alpha_used;
  uint64_t m_positives;
  uint64_t quantile_index;
  uint64_t n_valid;
} PixcrcCalibration;

typedef struct PixcrcZones {
  double lambda_min;
  double lambda_max;
  double lambda_hat;
  double alpha_cw;
  double alpha_safe;
  double eps_max;
  double b_pw;
  double shift_scale_s;
  double delta_lo_l1;
  double delta_hi_l1;
  double pi1;
  uint64_t n_valid;
  double c_fn;
  double c_fp;
  double rho_lo;
  double rho_hi;
} PixcrcZones;

typedef struct PixcrcZoneReport {
  uint64_t n_valid;
  double frac_safe;
  double frac_monitor;
  double frac_evacuate;
  double coverage;
  double coverage_evacuate;
  double set_size_flagged;
  double set_size_evacuate;
  double d_monitor;
  double decided_risk;
  double decided_bound;
} PixcrcZoneReport;

typedef struct PixcrcMetrics {
  double lambda;
  double coverage;
  double fnr;
  double set_size;
  double precision;
  double f1;
  double iou;
  double auroc;
  double auprc;
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_count;
  uint64_t tn;
} PixcrcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next `pixcrc_*` call on this thread.
 */
const char *pixcrc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pixcrc_version(void);

/**
 * Loads a score set from a container or (`.csv`) CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PixcrcStatus pixcrc_set_load(const char *path, struct PixcrcScoreSet **out);

/**
 * Builds a score set from `n_images` row-major `height x width` images laid
 * out back to back. Labels are -1 (no data), 0 or 1. `ids` may be null, in
 * which case images are numbered from 0.
 *
 * # Safety
 * `scores` and `labels` must point to `n_images * height * width` elements,
 * `ids` (if not null) to `n_images`, and `out` must be valid.
 */
enum PixcrcStatus pixcrc_set_from_buffers(size_t n_images,
                                          size_t height,
                                          size_t width,
                                          const float *scores,
                                          const int8_t *labels,
                                          const uint32_t *ids,
                                          struct PixcrcScoreSet **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `set` must come from a `pixcrc_set_*` constructor and not be used again.
 */
void pixcrc_set_free(struct PixcrcScoreSet *set);

/**
 * Number of images, valid pixels and positive pixels.
 *
 * # Safety
 * `set` must be a live handle; each out-pointer must be valid or null.
 */
enum PixcrcStatus pixcrc_set_counts(const struct PixcrcScoreSet *set,
                                    uint64_t *n_images,
                                    uint64_t *n_valid,
                                    uint64_t *n_positive);

/**
 * FNR-controlling threshold. `rule` is `PIXCRC_RULE_CEIL` or
 * `PIXCRC_RULE_FLOOR`.
 *
 * # Safety
 * `set` must be a live handle and `out` valid.
 */
enum PixcrcStatus pixcrc_calibrate_fnr(const struct PixcrcScoreSet *set,
                                       double alpha,
                                       uint32_t rule,
                                       struct PixcrcCalibration *out);

/**
 * Shift-aware three-way zone thresholds.
 *
 * # Safety
 * `set` must be a live handle and `out` valid.
 */
enum PixcrcStatus pixcrc_calibrate_three_way(const struct PixcrcScoreSet *set,
                                             double alpha_cw,
                                             double c_fn,
                                             double c_fp,
                                             double rho_lo,
                                             double rho_hi,
                                             struct PixcrcZones *out);

/**
 * Zone statistics of `set` under `zones`.
 *
 * # Safety
 * `set` must be a live handle, `zones` and `out` valid.
 */
enum PixcrcStatus pixcrc_zone_report(const struct PixcrcScoreSet *set,
                                     const struct PixcrcZones *zones,
                                     struct PixcrcZoneReport *out);

/**
 * Threshold and ranking metrics at `lambda`.
 *
 * # Safety
 * `set` must be a live handle and `out` valid.
 */
enum PixcrcStatus pixcrc_evaluate(const struct PixcrcScoreSet *set,
                                  double lambda,
                                  struct PixcrcMetrics *out);

/**
 * Zone code of one score: 0 SAFE, 1 MONITOR, 2 EVACUATE.
 *
 * # Safety
 * `zones` and `out` must be valid.
 */
enum PixcrcStatus pixcrc_zone_of(float score, const struct PixcrcZones *zones, int8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIXCRC_H */

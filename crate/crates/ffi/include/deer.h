#ifndef DEER_H
#define DEER_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Replay policy selector for [`deer_replay_new`].
 */
typedef enum DeerPolicy {
  DEER_POLICY_UNIFORM = 0,
  DEER_POLICY_PER = 1,
  DEER_POLICY_DEER = 2,
} DeerPolicy;

/**
 * Result code of every fallible call.
 */
typedef enum DeerStatus {
  DEER_STATUS_OK = 0,
  DEER_STATUS_NULL_POINTER = 1,
  DEER_STATUS_INVALID_ARGUMENT = 2,
  DEER_STATUS_CONFIG = 3,
  DEER_STATUS_SHAPE = 4,
  DEER_STATUS_NOT_READY = 5,
  DEER_STATUS_IO = 6,
  DEER_STATUS_PARSE = 7,
  DEER_STATUS_PANIC = 8,
} DeerStatus;

/**
 * Opaque change detector.
 */
typedef struct DeerDetector DeerDetector;

/**
 * Opaque replay buffer with its own sampling generator.
 */
typedef struct DeerReplayBuffer DeerReplayBuffer;

/**
 * Result of feeding one reward to the detector.
 */
typedef struct DeerEvaluation {
  /**
   * 1 if the detector scored the windows at this step.
   */
  uint8_t evaluated;
  /**
   * 1 if a change was detected; `detected_at` and `change_point` are then set.
   */
  uint8_t detected;
  /**
   * Clamped raw score of the latest evaluation.
   */
  double score;
  uint64_t detected_at;
  uint64_t change_point;
} DeerEvaluation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *deer_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *deer_version(void);

/**
 * Priority of a transition from before the latest change.
 */
double deer_priority_pre_change(double doe, double epsilon);

/**
 * Priority of a transition from the current regime; `score` in `[0, 1]`.
 */
double deer_priority_post_change(double td, double doe, double score, double epsilon);

/**
 * Raw detector score from classifier outputs on test and reference samples.
 *
 * # Safety
 * `f_test` and `f_reference` must be valid for `n_test` and `n_reference`
 * reads; `out` must be valid for one write.
 */
enum DeerStatus deer_js_score(const double *f_test,
                              size_t n_test,
                              const double *f_reference,
                              size_t n_reference,
                              double *out_score);

/**
 * Sampling probabilities `p^alpha / sum p^alpha` into `out` (length `n`).
 *
 * # Safety
 * `priorities` and `out` must be valid for `n` elements.
 */
enum DeerStatus deer_sampling_probabilities(const double *priorities,
                                            size_t n,
                                            double alpha,
                                            double *out_probabilities);

/**
 * Creates a replay buffer. `seed` drives minibatch sampling.
 *
 * # Safety
 * `out_buffer` must be valid for one write.
 */
enum DeerStatus deer_replay_new(size_t capacity,
                                double alpha,
                                double beta,
                                double epsilon,
                                enum DeerPolicy policy,
                                uint64_t seed,
                                struct DeerReplayBuffer **out_buffer);

/**
 * Releases a buffer. Null is ignored.
 *
 * # Safety
 * `buffer` must come from [`deer_replay_new`] and not be used afterwards.
 */
void deer_replay_free(struct DeerReplayBuffer *buffer);

/**
 * Number of stored transitions (0 for a null handle).
 *
 * # Safety
 * `buffer` must be null or a live handle.
 */
size_t deer_replay_len(const struct DeerReplayBuffer *buffer);

/**
 * Stores a transition and writes its slot index.
 *
 * # Safety
 * `buffer` must be a live handle; `state` and `next_state` valid for
 * `state_dim` reads, `action` for `action_dim` reads; `out_index` null or
 * valid for one write.
 */
enum DeerStatus deer_replay_insert(struct DeerReplayBuffer *buffer,
                                   const double *state,
                                   const double *next_state,
                                   size_t state_dim,
                                   const double *action,
                                   size_t action_dim,
                                   double reward,
                                   uint8_t done,
                                   uint64_t step,
                                   size_t *out_index);

/**
 * Draws `batch_size` slot indices and their importance weights.
 *
 * # Safety
 * `buffer` must be a live handle; both outputs valid for `batch_size` writes.
 */
enum DeerStatus deer_replay_sample(struct DeerReplayBuffer *buffer,
                                   size_t batch_size,
                                   size_t *out_indices,
                                   double *out_weights);

/**
 * Recomputes priorities of sampled slots from TD errors and discrepancies;
 * `score` is the normalized detector score.
 *
 * # Safety
 * `buffer` must be a live handle; the three arrays valid for `n` reads.
 */
enum DeerStatus deer_replay_refresh(struct DeerReplayBuffer *buffer,
                                    const size_t *indices,
                                    const double *td,
                                    const double *doe,
                                    size_t n,
                                    double score);

/**
 * Opens a new epoch after a detected change.
 *
 * # Safety
 * `buffer` must be a live handle.
 */
enum DeerStatus deer_replay_on_change(struct DeerReplayBuffer *buffer,
                                      uint64_t detected_at,
                                      uint64_t change_point);

/**
 * Raw priority of a slot.
 *
 * # Safety
 * `buffer` must be a live handle; `out_priority` valid for one write.
 */
enum DeerStatus deer_replay_priority(const struct DeerReplayBuffer *buffer,
                                     size_t index,
                                     double *out_priority);

/**
 * Creates a detector with the default classifier settings and the given
 * window geometry and threshold.
 *
 * # Safety
 * `out_detector` must be valid for one write.
 */
enum DeerStatus deer_detector_new(size_t window,
                                  size_t samples_per_window,
                                  size_t sample_len,
                                  double threshold,
                                  uint64_t seed,
                                  struct DeerDetector **out_detector);

/**
 * Releases a detector. Null is ignored.
 *
 * # Safety
 * `detector` must come from [`deer_detector_new`] and not be used afterwards.
 */
void deer_detector_free(struct DeerDetector *detector);

/**
 * Feeds the reward observed at `step` (1-based, increasing).
 *
 * # Safety
 * `detector` must be a live handle; `out_evaluation` valid for one write.
 */
enum DeerStatus deer_detector_observe(struct DeerDetector *detector,
                                      uint64_t step,
                                      double reward,
                                      struct DeerEvaluation *out_evaluation);

/**
 * Runs one seed of the experiment described by a TOML config and writes its
 * CSV run log to `out_csv`.
 *
 * # Safety
 * Both paths must be nul-terminated strings.
 */
enum DeerStatus deer_run_experiment(const char *config_path, uint64_t seed, const char *out_csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEER_H */

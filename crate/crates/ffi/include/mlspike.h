#ifndef MLSPIKE_H
#define MLSPIKE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MLSPIKE_STATUS_OK = 0,
  MLSPIKE_STATUS_NULL_POINTER = 1,
  MLSPIKE_STATUS_INVALID_ARGUMENT = 2,
  MLSPIKE_STATUS_CONFIG = 3,
  MLSPIKE_STATUS_INFEASIBLE = 4,
  MLSPIKE_STATUS_IO = 5,
  MLSPIKE_STATUS_FORMAT = 6,
  MLSPIKE_STATUS_BUFFER_TOO_SMALL = 7,
  MLSPIKE_STATUS_INTERRUPTED = 8,
  MLSPIKE_STATUS_PANIC = 9,
} MlspikeStatus;

typedef enum {
  MLSPIKE_VARIANT_FREE = 0,
  MLSPIKE_VARIANT_FIXED_HIDDEN = 1,
  MLSPIKE_VARIANT_SINGLE_LAYER = 2,
} MlspikeVariant;

typedef enum {
  MLSPIKE_RULE_BACKPROP = 0,
  MLSPIKE_RULE_BIO = 1,
} MlspikeRule;

typedef enum {
  /**
   * `n_h x n_i` input-to-hidden weights.
   */
  MLSPIKE_LAYER_HIDDEN = 0,
  /**
   * `n_o x n_h` (or `n_o x n_i` for single-layer) output weights.
   */
  MLSPIKE_LAYER_OUTPUT = 1,
} MlspikeLayer;

/**
 * Opaque network handle owning its weights, learning setup and RNG.
 */
typedef struct MlspikeNetwork MlspikeNetwork;

/**
 * Borrowed view of several spike trains. Train `k` occupies
 * `times[sum(lengths[..k]) .. sum(lengths[..=k])]`.
 */
typedef struct {
  const double *times;
  const size_t *lengths;
  size_t n_trains;
} MlspikeTrains;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mlspike_last_error_message(void);

/**
 * Creates a freshly initialized network. `n_s` (target spikes per output)
 * sets the hidden learning rate. The bio rule on a multilayer network uses
 * equal positive output weights.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
MlspikeStatus mlspike_network_new(size_t n_i,
                                  size_t n_h,
                                  size_t n_o,
                                  MlspikeVariant variant,
                                  MlspikeRule rule,
                                  size_t n_s,
                                  uint64_t seed,
                                  MlspikeNetwork **out);

/**
 * Restores a network from its JSON form with a fresh RNG.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
MlspikeStatus mlspike_network_from_json(const char *json,
                                        MlspikeRule rule,
                                        size_t n_s,
                                        uint64_t seed,
                                        MlspikeNetwork **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and must not be used afterwards.
 */
void mlspike_network_free(MlspikeNetwork *net);

/**
 * Writes the layer sizes. Any output pointer may be null.
 *
 * # Safety
 * `net` must be a live handle; non-null outputs must be writable.
 */
MlspikeStatus mlspike_network_dims(const MlspikeNetwork *net,
                                   size_t *n_i,
                                   size_t *n_h,
                                   size_t *n_o);

/**
 * Copies one weight matrix, row-major, into `buf`. `required` receives the
 * element count; with `capacity` too small nothing is copied and
 * `BufferTooSmall` is returned.
 *
 * # Safety
 * `net` must be live; `buf` must hold `capacity` doubles; `required` writable.
 */
MlspikeStatus mlspike_network_weights(const MlspikeNetwork *net,
                                      MlspikeLayer layer,
                                      double *buf,
                                      size_t capacity,
                                      size_t *required);

/**
 * Simulates one episode without learning and writes the output spike times
 * (flat, train after train) and per-output counts.
 *
 * # Safety
 * `net` and `input` must be valid; `times` must hold `capacity` doubles,
 * `lengths` must hold `n_o` entries and `required` must be writable.
 */
MlspikeStatus mlspike_network_simulate(MlspikeNetwork *net,
                                       const MlspikeTrains *input,
                                       double *times,
                                       size_t capacity,
                                       size_t *lengths,
                                       size_t *required);

/**
 * Simulates one episode, applies the configured learning rule and writes
 * the summed van Rossum distance between actual and target outputs
 * (`tau_c` = 10 ms) to `distance` when it is non-null.
 *
 * # Safety
 * `net`, `input` and `target` must be valid.
 */
MlspikeStatus mlspike_network_train_episode(MlspikeNetwork *net,
                                            const MlspikeTrains *input,
                                            const MlspikeTrains *target,
                                            double *distance);

/**
 * Serializes the network to JSON. Release the string with
 * `mlspike_string_free`.
 *
 * # Safety
 * `net` must be live; `out` must be writable.
 */
MlspikeStatus mlspike_network_to_json(const MlspikeNetwork *net, char **out);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void mlspike_string_free(char *s);

/**
 * Van Rossum distance between two spike trains.
 *
 * # Safety
 * `a` must hold `n_a` doubles and `b` must hold `n_b` (either may be null
 * when its count is zero); `out` must be writable.
 */
MlspikeStatus mlspike_vrd(const double *a,
                          size_t n_a,
                          const double *b,
                          size_t n_b,
                          double tau_c,
                          double *out);

/**
 * Runs an experiment preset (optionally merged with a TOML file) and writes
 * curves, summary and manifest under `out_dir`. `seed` < 0 and `runs` = 0
 * keep the configured values.
 *
 * # Safety
 * `experiment` and `out_dir` must be NUL-terminated strings; `config_path`
 * may be null.
 */
MlspikeStatus mlspike_run_experiment(const char *experiment,
                                     const char *config_path,
                                     const char *out_dir,
                                     int64_t seed,
                                     size_t runs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLSPIKE_H */

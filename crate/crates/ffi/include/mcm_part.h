#ifndef MCM_PART_H
#define MCM_PART_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum McmStatus {
  MCM_STATUS_OK = 0,
  MCM_STATUS_NULL_POINTER = 1,
  MCM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed or structurally invalid graph.
   */
  MCM_STATUS_GRAPH = 3,
  MCM_STATUS_IO = 4,
  /**
   * No assignment satisfies the constraints.
   */
  MCM_STATUS_INFEASIBLE = 5,
  /**
   * The solver gave up before deciding.
   */
  MCM_STATUS_STEP_BUDGET = 6,
  /**
   * Output buffer length does not match the graph.
   */
  MCM_STATUS_LENGTH_MISMATCH = 7,
  MCM_STATUS_INTERNAL = 99,
} McmStatus;

typedef enum McmEvaluatorKind {
  MCM_EVALUATOR_KIND_ANALYTICAL = 0,
  MCM_EVALUATOR_KIND_SURROGATE = 1,
} McmEvaluatorKind;

/**
 * Failure kind of an evaluation.
 */
typedef enum McmFailure {
  MCM_FAILURE_NONE = 0,
  MCM_FAILURE_STATIC = 1,
  MCM_FAILURE_MEMORY = 2,
  MCM_FAILURE_DYNAMIC = 3,
  MCM_FAILURE_DEGENERATE = 4,
} McmFailure;

/**
 * Opaque graph handle.
 */
typedef struct McmGraph McmGraph;

/**
 * Chip count plus per-chip SRAM and link bandwidth. Zero SRAM or
 * bandwidth picks the defaults.
 */
typedef struct McmTopology {
  size_t num_chips;
  uint64_t sram_bytes_per_chip;
  double link_bandwidth;
} McmTopology;

typedef struct McmEvalResult {
  bool valid;
  double throughput;
  enum McmFailure failure;
} McmEvalResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *mcm_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *mcm_last_error_message(void);

/**
 * Parses a graph from a NUL-terminated JSON string.
 *
 * # Safety
 * `json` must be NULL or a valid C string; `out` must be NULL or writable.
 */
enum McmStatus mcm_graph_from_json(const char *json, struct McmGraph **out);

/**
 * Loads a graph from a JSON file.
 *
 * # Safety
 * As for [`mcm_graph_from_json`].
 */
enum McmStatus mcm_graph_load(const char *path, struct McmGraph **out);

/**
 * Generates a synthetic graph of the named family.
 *
 * # Safety
 * `family` must be NULL or a valid C string; `out` must be NULL or writable.
 */
enum McmStatus mcm_graph_generate(const char *family,
                                  size_t num_nodes,
                                  uint64_t seed,
                                  struct McmGraph **out);

/**
 * Number of nodes, or 0 for a NULL handle.
 *
 * # Safety
 * `g` must be NULL or a live handle.
 */
size_t mcm_graph_num_nodes(const struct McmGraph *g);

/**
 * Serialises the graph to JSON. Free the result with [`mcm_string_free`].
 *
 * # Safety
 * `g` must be NULL or a live handle; `out` must be NULL or writable.
 */
enum McmStatus mcm_graph_to_json(const struct McmGraph *g, char **out);

/**
 * # Safety
 * `g` must be NULL or a handle not yet freed.
 */
void mcm_graph_free(struct McmGraph *g);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void mcm_string_free(char *s);

/**
 * Samples a valid partition from uniform per-node chip probabilities,
 * writing one chip index per node into `out`.
 *
 * # Safety
 * `g` must be NULL or live; `topo` NULL or readable; `out` NULL or valid
 * for `len` writes.
 */
enum McmStatus mcm_solve_sample(const struct McmGraph *g,
                                const struct McmTopology *topo,
                                uint64_t seed,
                                uint32_t *out,
                                size_t len);

/**
 * Repairs `candidate` into the valid partition closest to it. `out` may
 * alias `candidate`.
 *
 * # Safety
 * `candidate` and `out` must be NULL or valid for `len` elements.
 */
enum McmStatus mcm_solve_fix(const struct McmGraph *g,
                             const struct McmTopology *topo,
                             const uint32_t *candidate,
                             uint64_t seed,
                             uint32_t *out,
                             size_t len);

/**
 * Evaluates an assignment. Invalid partitions are a successful call with
 * `valid == false`; the surrogate uses its default settings with `seed`.
 *
 * # Safety
 * `assignment` must be NULL or valid for `len` reads; `out` NULL or writable.
 */
enum McmStatus mcm_evaluate(const struct McmGraph *g,
                            const struct McmTopology *topo,
                            enum McmEvaluatorKind kind,
                            uint64_t seed,
                            const uint32_t *assignment,
                            size_t len,
                            struct McmEvalResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCM_PART_H */

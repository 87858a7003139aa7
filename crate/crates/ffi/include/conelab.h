#ifndef CONELAB_H
#define CONELAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  CONELAB_STATUS_OK = 0,
  CONELAB_STATUS_NULL_POINTER = 1,
  CONELAB_STATUS_INVALID_MANIFOLD = 2,
  CONELAB_STATUS_INVALID_ARGUMENT = 3,
  CONELAB_STATUS_INDEFINITE_OPERATOR = 4,
  /**
   * Divergent integral, truncation or another numerical failure.
   */
  CONELAB_STATUS_NUMERICAL = 5,
  /**
   * Output buffer length does not match.
   */
  CONELAB_STATUS_BUFFER_SIZE = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  CONELAB_STATUS_INTERNAL = 7,
} ConelabStatus;

/**
 * Square functional selector.
 */
typedef enum {
  /**
   * Conical gradient functional.
   */
  CONELAB_FUNCTIONAL_G = 0,
  /**
   * Vertical functional.
   */
  CONELAB_FUNCTIONAL_H = 1,
  /**
   * Conical horizontal functional.
   */
  CONELAB_FUNCTIONAL_S = 2,
  /**
   * Horizontal functional with profile `sqrt(z) e^{-z}`.
   */
  CONELAB_FUNCTIONAL_S_PHI0 = 3,
  /**
   * Poisson functional, time and space parts together.
   */
  CONELAB_FUNCTIONAL_P = 4,
} ConelabFunctional;

/**
 * Time-integration engine selector.
 */
typedef enum {
  CONELAB_ENGINE_EXACT = 0,
  CONELAB_ENGINE_QUADRATURE = 1,
} ConelabEngine;

/**
 * Opaque weighted graph.
 */
typedef struct ConelabManifold ConelabManifold;

/**
 * Opaque diagonalized operator `Delta + V`.
 */
typedef struct ConelabOperator ConelabOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *conelab_last_error(void);

/**
 * `dim`-dimensional grid with `side` vertices per axis and unit weights.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
ConelabStatus conelab_manifold_grid(size_t dim, size_t side, ConelabManifold **out);

/**
 * Two grids joined by a single edge.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
ConelabStatus conelab_manifold_dumbbell(size_t dim, size_t side, ConelabManifold **out);

/**
 * Complete binary tree of the given depth.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
ConelabStatus conelab_manifold_binary_tree(size_t depth, ConelabManifold **out);

/**
 * General graph: `n` vertex masses and `m` edges given as parallel arrays.
 * `len` may be NULL for unit edge lengths.
 *
 * # Safety
 * `mu` must hold `n` values; `u`, `v`, `w` (and `len` when non-NULL) must hold `m` values.
 */
ConelabStatus conelab_manifold_from_edges(size_t n,
                                          const double *mu,
                                          size_t m,
                                          const size_t *u,
                                          const size_t *v,
                                          const double *w,
                                          const double *len,
                                          ConelabManifold **out);

/**
 * Number of vertices, or 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t conelab_manifold_vertex_count(const ConelabManifold *m);

/**
 * Number of edges, or 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live handle.
 */
size_t conelab_manifold_edge_count(const ConelabManifold *m);

/**
 * Releases a manifold. NULL is ignored.
 *
 * # Safety
 * `m` must be NULL or a handle not yet freed.
 */
void conelab_manifold_free(ConelabManifold *m);

/**
 * Diagonalizes `Delta + V+ - V-`. Either potential may be NULL for zero.
 * The operator keeps its own reference to the manifold.
 *
 * # Safety
 * `m` must be a live handle; non-NULL potentials must hold one value per vertex.
 */
ConelabStatus conelab_operator_assemble(const ConelabManifold *m,
                                        const double *vplus,
                                        const double *vminus,
                                        ConelabOperator **out);

/**
 * Copies the ascending spectrum into `out` (length = vertex count).
 *
 * # Safety
 * `op` must be a live handle; `out` must hold `len` values.
 */
ConelabStatus conelab_operator_eigenvalues(const ConelabOperator *op, double *out, size_t len);

/**
 * `out = e^{-tL} f`.
 *
 * # Safety
 * `op` must be a live handle; `f` and `out` must hold `len` values.
 */
ConelabStatus conelab_operator_heat_apply(const ConelabOperator *op,
                                          double t,
                                          const double *f,
                                          double *out,
                                          size_t len);

/**
 * Evaluates a square functional of `f` at every vertex.
 *
 * # Safety
 * `op` must be a live handle; `f` and `out` must hold `len` values.
 */
ConelabStatus conelab_functional(const ConelabOperator *op,
                                 ConelabFunctional which,
                                 ConelabEngine engine,
                                 const double *f,
                                 double *out,
                                 size_t len);

/**
 * Releases an operator. NULL is ignored.
 *
 * # Safety
 * `op` must be NULL or a handle not yet freed.
 */
void conelab_operator_free(ConelabOperator *op);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONELAB_H */

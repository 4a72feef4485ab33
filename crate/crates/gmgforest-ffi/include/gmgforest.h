/* C interface for the gmgforest adaptive multigrid library. */

#ifndef GMGFOREST_H
#define GMGFOREST_H

/* Generated with cbindgen from the gmgforest-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Smoother selection for [`gmgf_solve_poisson`].
 */
typedef enum GmgfSmoother {
  /**
   * Chebyshev-accelerated Jacobi (degree 5), the default.
   */
  GMGF_SMOOTHER_CHEBYSHEV = 0,
  /**
   * Damped point Jacobi.
   */
  GMGF_SMOOTHER_JACOBI = 1,
} GmgfSmoother;

/**
 * Status codes returned by every fallible function.
 */
typedef enum GmgfStatus {
  /**
   * Success.
   */
  GMGF_OK = 0,
  /**
   * A NULL pointer or out-of-range argument was passed.
   */
  GMGF_ERR_INVALID_ARGUMENT = 1,
  /**
   * Mesh construction failed (bad sequence name, depth, or dimension).
   */
  GMGF_ERR_MESH = 2,
  /**
   * Partitioning or balance evaluation failed.
   */
  GMGF_ERR_PARTITION = 3,
  /**
   * Solver setup failed (assembly, hierarchy construction).
   */
  GMGF_ERR_SETUP = 4,
  /**
   * The CG iteration did not reach the requested tolerance.
   */
  GMGF_ERR_NO_CONVERGENCE = 5,
} GmgfStatus;

/**
 * Opaque mesh handle.
 */
typedef struct GmgfMesh GmgfMesh;

/**
 * Balance-model and communication metrics for one `(mesh, ranks)` pair.
 */
typedef struct GmgfBalanceReport {
  /**
   * Optimal per-rank workload `W_opt` (rational, rounded to double).
   */
  double w_opt;
  /**
   * Level-synchronous lower bound `W_sync`.
   */
  double w_sync;
  /**
   * Modeled workload `W` of the partition.
   */
  double w;
  /**
   * Partitioning efficiency `eta = W_opt / W` as a double.
   */
  double eta;
  /**
   * Exact numerator of `eta`.
   */
  uint64_t eta_num;
  /**
   * Exact denominator of `eta`.
   */
  uint64_t eta_den;
  /**
   * Ghost children transferred in level transfers.
   */
  uint64_t ghost_children;
  /**
   * Total children considered in level transfers.
   */
  uint64_t total_children;
} GmgfBalanceReport;

/**
 * Solver outcome summary.
 */
typedef struct GmgfSolveStats {
  /**
   * Number of multigrid levels in the hierarchy.
   */
  uint64_t levels;
  /**
   * Unconstrained degrees of freedom of the leaf system.
   */
  uint64_t dofs;
  /**
   * CG iterations performed.
   */
  uint64_t iterations;
  /**
   * Final relative residual reduction.
   */
  double reduction;
} GmgfSolveStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf`
 * (NUL-terminated, truncated to `len` bytes). Returns the full message
 * length in bytes, excluding the terminator. `buf` may be NULL to query
 * the length.
 */
uintptr_t gmgf_last_error(char *buf, uintptr_t len);

/**
 * Builds one of the named refinement sequences
 * (`uniform | circle | quadrant | annulus | fig2`) to the given finest
 * level in `dim` dimensions and returns a mesh handle through `out`.
 */
enum GmgfStatus gmgf_mesh_create(const char *kind,
                                 uintptr_t level,
                                 uintptr_t dim,
                                 struct GmgfMesh **out);

/**
 * Releases a mesh handle. NULL is ignored.
 */
void gmgf_mesh_free(struct GmgfMesh *mesh);

/**
 * Number of leaf cells.
 */
enum GmgfStatus gmgf_mesh_num_leaves(const struct GmgfMesh *mesh, uint64_t *out);

/**
 * Total number of cells (leaves plus ancestors).
 */
enum GmgfStatus gmgf_mesh_num_cells(const struct GmgfMesh *mesh, uint64_t *out);

/**
 * Finest refinement level present in the mesh.
 */
enum GmgfStatus gmgf_mesh_max_level(const struct GmgfMesh *mesh, uint64_t *out);

/**
 * Spatial dimension (2 or 3).
 */
enum GmgfStatus gmgf_mesh_dim(const struct GmgfMesh *mesh, uint64_t *out);

/**
 * Partitions the mesh hierarchy over `n_ranks` simulated ranks and
 * evaluates the workload-balance and communication models. Pass a
 * negative `w0_override` to model coarse-level work as ordinary
 * smoothing work; a non-negative value replaces the `W_0` term.
 */
enum GmgfStatus gmgf_balance(const struct GmgfMesh *mesh,
                             uintptr_t n_ranks,
                             int64_t w0_override,
                             struct GmgfBalanceReport *out);

/**
 * Number of degrees of freedom of the leaf-level finite element space
 * (including constrained and boundary vertices). This is the length of
 * the solution buffer expected by [`gmgf_solve_poisson`].
 */
enum GmgfStatus gmgf_num_dofs(const struct GmgfMesh *mesh, uint64_t *out);

/**
 * Solves the Poisson model problem `-Δu = 2π² sin(πx) sin(πy)` with
 * homogeneous Dirichlet boundary, using the multigrid-preconditioned CG
 * solver. `stats` receives the iteration summary. If `u` is non-NULL it
 * must point to `u_len >= gmgf_num_dofs(mesh)` doubles and receives the
 * coefficient vector of the solution.
 */
enum GmgfStatus gmgf_solve_poisson(const struct GmgfMesh *mesh,
                                   enum GmgfSmoother smoother,
                                   uintptr_t steps,
                                   double rtol,
                                   struct GmgfSolveStats *stats,
                                   double *u,
                                   uintptr_t u_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GMGFOREST_H */

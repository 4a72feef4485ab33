//! C ABI for the gmgforest library.
//!
//! The interface uses opaque handles, integer status codes, and
//! caller-provided output buffers; no Rust types cross the boundary. The
//! committed header `include/gmgforest.h` is generated from this file with
//! cbindgen.
//!
//! Conventions:
//! * Every fallible function returns a `GmgfStatus`; outputs are written
//!   through pointers only on `GMGF_OK`.
//! * A textual message for the most recent error on the current thread is
//!   available via [`gmgf_last_error`].
//! * Handles must be released with the matching `*_free` function exactly
//!   once; `free` on NULL is a no-op.

use gmgforest::balance::{compute_balance, ratio_f64, total_ghost_children};
use gmgforest::fem2d::{assemble_leaf, leaf_space};
use gmgforest::forest::ForestMesh;
use gmgforest::gmg::{pcg_solve, MultigridHierarchy, SmootherConfig};
use gmgforest::partition::partition_hierarchy;
use gmgforest::sequences::{build_sequence, SequenceKind};
use gmgforest::Error;
use std::cell::RefCell;
use std::f64::consts::PI;
use std::ffi::{c_char, CStr, CString};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[allow(non_camel_case_types)]
pub enum GmgfStatus {
    /// Success.
    GMGF_OK = 0,
    /// A NULL pointer or out-of-range argument was passed.
    GMGF_ERR_INVALID_ARGUMENT = 1,
    /// Mesh construction failed (bad sequence name, depth, or dimension).
    GMGF_ERR_MESH = 2,
    /// Partitioning or balance evaluation failed.
    GMGF_ERR_PARTITION = 3,
    /// Solver setup failed (assembly, hierarchy construction).
    GMGF_ERR_SETUP = 4,
    /// The CG iteration did not reach the requested tolerance.
    GMGF_ERR_NO_CONVERGENCE = 5,
}

use GmgfStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: GmgfStatus, msg: impl std::fmt::Display) -> GmgfStatus {
    set_error(msg.to_string());
    status
}

fn status_of(err: &Error) -> GmgfStatus {
    match err {
        Error::InvalidDepth { .. } | Error::UnsupportedDim(_) => GMGF_ERR_MESH,
        Error::InvalidRankCount => GMGF_ERR_PARTITION,
        Error::NoConvergence { .. } => GMGF_ERR_NO_CONVERGENCE,
        _ => GMGF_ERR_SETUP,
    }
}

/// Opaque mesh handle.
pub struct GmgfMesh {
    mesh: ForestMesh,
}

/// Balance-model and communication metrics for one `(mesh, ranks)` pair.
#[repr(C)]
pub struct GmgfBalanceReport {
    /// Optimal per-rank workload `W_opt` (rational, rounded to double).
    pub w_opt: f64,
    /// Level-synchronous lower bound `W_sync`.
    pub w_sync: f64,
    /// Modeled workload `W` of the partition.
    pub w: f64,
    /// Partitioning efficiency `eta = W_opt / W` as a double.
    pub eta: f64,
    /// Exact numerator of `eta`.
    pub eta_num: u64,
    /// Exact denominator of `eta`.
    pub eta_den: u64,
    /// Ghost children transferred in level transfers.
    pub ghost_children: u64,
    /// Total children considered in level transfers.
    pub total_children: u64,
}

/// Solver outcome summary.
#[repr(C)]
pub struct GmgfSolveStats {
    /// Number of multigrid levels in the hierarchy.
    pub levels: u64,
    /// Unconstrained degrees of freedom of the leaf system.
    pub dofs: u64,
    /// CG iterations performed.
    pub iterations: u64,
    /// Final relative residual reduction.
    pub reduction: f64,
}

/// Smoother selection for [`gmgf_solve_poisson`].
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum GmgfSmoother {
    /// Chebyshev-accelerated Jacobi (degree 5), the default.
    GMGF_SMOOTHER_CHEBYSHEV = 0,
    /// Damped point Jacobi.
    GMGF_SMOOTHER_JACOBI = 1,
}

/// Copies the most recent error message on this thread into `buf`
/// (NUL-terminated, truncated to `len` bytes). Returns the full message
/// length in bytes, excluding the terminator. `buf` may be NULL to query
/// the length.
#[no_mangle]
pub unsafe extern "C" fn gmgf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds one of the named refinement sequences
/// (`uniform | circle | quadrant | annulus | fig2`) to the given finest
/// level in `dim` dimensions and returns a mesh handle through `out`.
#[no_mangle]
pub unsafe extern "C" fn gmgf_mesh_create(
    kind: *const c_char,
    level: usize,
    dim: usize,
    out: *mut *mut GmgfMesh,
) -> GmgfStatus {
    if kind.is_null() || out.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "kind and out must be non-NULL");
    }
    let kind = match CStr::from_ptr(kind).to_str() {
        Ok(s) => s,
        Err(_) => return fail(GMGF_ERR_INVALID_ARGUMENT, "kind is not valid UTF-8"),
    };
    let kind: SequenceKind = match kind.parse() {
        Ok(k) => k,
        Err(e) => return fail(GMGF_ERR_MESH, e),
    };
    match build_sequence(kind, level, dim) {
        Ok(mesh) => {
            *out = Box::into_raw(Box::new(GmgfMesh { mesh }));
            GMGF_OK
        }
        Err(e) => fail(status_of(&e), e),
    }
}

/// Releases a mesh handle. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn gmgf_mesh_free(mesh: *mut GmgfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Number of leaf cells.
#[no_mangle]
pub unsafe extern "C" fn gmgf_mesh_num_leaves(mesh: *const GmgfMesh, out: *mut u64) -> GmgfStatus {
    if mesh.is_null() || out.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "mesh and out must be non-NULL");
    }
    *out = (*mesh).mesh.num_leaves() as u64;
    GMGF_OK
}

/// Total number of cells (leaves plus ancestors).
#[no_mangle]
pub unsafe extern "C" fn gmgf_mesh_num_cells(mesh: *const GmgfMesh, out: *mut u64) -> GmgfStatus {
    if mesh.is_null() || out.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "mesh and out must be non-NULL");
    }
    *out = (*mesh).mesh.num_cells() as u64;
    GMGF_OK
}

/// Finest refinement level present in the mesh.
#[no_mangle]
pub unsafe extern "C" fn gmgf_mesh_max_level(mesh: *const GmgfMesh, out: *mut u64) -> GmgfStatus {
    if mesh.is_null() || out.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "mesh and out must be non-NULL");
    }
    *out = (*mesh).mesh.max_level() as u64;
    GMGF_OK
}

/// Spatial dimension (2 or 3).
#[no_mangle]
pub unsafe extern "C" fn gmgf_mesh_dim(mesh: *const GmgfMesh, out: *mut u64) -> GmgfStatus {
    if mesh.is_null() || out.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "mesh and out must be non-NULL");
    }
    *out = (*mesh).mesh.dim() as u64;
    GMGF_OK
}

/// Partitions the mesh hierarchy over `n_ranks` simulated ranks and
/// evaluates the workload-balance and communication models. Pass a
/// negative `w0_override` to model coarse-level work as ordinary
/// smoothing work; a non-negative value replaces the `W_0` term.
#[no_mangle]
pub unsafe extern "C" fn gmgf_balance(
    mesh: *const GmgfMesh,
    n_ranks: usize,
    w0_override: i64,
    out: *mut GmgfBalanceReport,
) -> GmgfStatus {
    if mesh.is_null() || out.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "mesh and out must be non-NULL");
    }
    let mesh = &(*mesh).mesh;
    let part = match partition_hierarchy(mesh, n_ranks) {
        Ok(p) => p,
        Err(e) => return fail(GMGF_ERR_PARTITION, e),
    };
    let w0 = if w0_override < 0 {
        None
    } else {
        Some(w0_override as u64)
    };
    let report = compute_balance(&part, w0);
    let (ghost, children) = match total_ghost_children(mesh, &part) {
        Ok(v) => v,
        Err(e) => return fail(GMGF_ERR_PARTITION, e),
    };
    *out = GmgfBalanceReport {
        w_opt: ratio_f64(report.w_opt),
        w_sync: report.w_sync as f64,
        w: report.w as f64,
        eta: ratio_f64(report.eta),
        eta_num: *report.eta.numer(),
        eta_den: *report.eta.denom(),
        ghost_children: ghost,
        total_children: children,
    };
    GMGF_OK
}

/// Number of degrees of freedom of the leaf-level finite element space
/// (including constrained and boundary vertices). This is the length of
/// the solution buffer expected by [`gmgf_solve_poisson`].
#[no_mangle]
pub unsafe extern "C" fn gmgf_num_dofs(mesh: *const GmgfMesh, out: *mut u64) -> GmgfStatus {
    if mesh.is_null() || out.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "mesh and out must be non-NULL");
    }
    match leaf_space(&(*mesh).mesh) {
        Ok(space) => {
            *out = space.num_dofs() as u64;
            GMGF_OK
        }
        Err(e) => fail(status_of(&e), e),
    }
}

/// Solves the Poisson model problem `-Δu = 2π² sin(πx) sin(πy)` with
/// homogeneous Dirichlet boundary, using the multigrid-preconditioned CG
/// solver. `stats` receives the iteration summary. If `u` is non-NULL it
/// must point to `u_len >= gmgf_num_dofs(mesh)` doubles and receives the
/// coefficient vector of the solution.
#[no_mangle]
pub unsafe extern "C" fn gmgf_solve_poisson(
    mesh: *const GmgfMesh,
    smoother: GmgfSmoother,
    steps: usize,
    rtol: f64,
    stats: *mut GmgfSolveStats,
    u: *mut f64,
    u_len: usize,
) -> GmgfStatus {
    if mesh.is_null() || stats.is_null() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "mesh and stats must be non-NULL");
    }
    if !(rtol > 0.0 && rtol < 1.0) {
        return fail(GMGF_ERR_INVALID_ARGUMENT, "rtol must be in (0, 1)");
    }
    let mesh = &(*mesh).mesh;
    let mut config = match smoother {
        GmgfSmoother::GMGF_SMOOTHER_CHEBYSHEV => SmootherConfig::default(),
        GmgfSmoother::GMGF_SMOOTHER_JACOBI => SmootherConfig::jacobi(),
    };
    if steps > 0 {
        config.steps = steps;
    }
    if let Err(e) = config.validate() {
        return fail(GMGF_ERR_INVALID_ARGUMENT, e);
    }
    let space = match leaf_space(mesh) {
        Ok(s) => s,
        Err(e) => return fail(status_of(&e), e),
    };
    if !u.is_null() && u_len < space.num_dofs() {
        return fail(
            GMGF_ERR_INVALID_ARGUMENT,
            format!(
                "u_len {} is smaller than the dof count {}",
                u_len,
                space.num_dofs()
            ),
        );
    }
    let (a, b) = match assemble_leaf(mesh, &space, |x, y| {
        2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
    }) {
        Ok(v) => v,
        Err(e) => return fail(status_of(&e), e),
    };
    let hierarchy = match MultigridHierarchy::build(mesh, config) {
        Ok(h) => h,
        Err(e) => return fail(status_of(&e), e),
    };
    match pcg_solve(&a, &b, |r| hierarchy.apply_preconditioner(r), rtol, 200) {
        Ok((sol, s)) => {
            *stats = GmgfSolveStats {
                levels: hierarchy.num_levels() as u64,
                dofs: space.num_free() as u64,
                iterations: s.iterations as u64,
                reduction: s.reduction,
            };
            if !u.is_null() {
                std::ptr::copy_nonoverlapping(sol.as_ptr(), u, sol.len());
            }
            GMGF_OK
        }
        Err(e) => fail(status_of(&e), e),
    }
}

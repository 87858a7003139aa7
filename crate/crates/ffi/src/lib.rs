//! C ABI for `conelab`.
//!
//! Objects are exposed as opaque handles created by the `conelab_manifold_*`
//! and `conelab_operator_assemble` constructors and released with the matching
//! `*_free`. Every fallible call returns a [`ConelabStatus`]; on failure a
//! message for the current thread is available from [`conelab_last_error`].
//! Output arrays are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use conelab::cones::{Engine, SpectralFn, SquareFunctions};
use conelab::manifold::{self, DiscreteManifold, Edge};
use conelab::spectral::{self, PotentialSplit, SpectralOperator};
use conelab::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConelabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidManifold = 2,
    InvalidArgument = 3,
    IndefiniteOperator = 4,
    /// Divergent integral, truncation or another numerical failure.
    Numerical = 5,
    /// Output buffer length does not match.
    BufferSize = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Square functional selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConelabFunctional {
    /// Conical gradient functional.
    G = 0,
    /// Vertical functional.
    H = 1,
    /// Conical horizontal functional.
    S = 2,
    /// Horizontal functional with profile `sqrt(z) e^{-z}`.
    SPhi0 = 3,
    /// Poisson functional, time and space parts together.
    P = 4,
}

/// Time-integration engine selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConelabEngine {
    Exact = 0,
    Quadrature = 1,
}

/// Opaque weighted graph.
pub struct ConelabManifold(Arc<DiscreteManifold>);

/// Opaque diagonalized operator `Delta + V`.
pub struct ConelabOperator(SpectralOperator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ConelabStatus {
    match e {
        Error::InvalidManifold(_) => ConelabStatus::InvalidManifold,
        Error::InvalidArgument(_) | Error::Config(_) | Error::UnknownScenario(_) => ConelabStatus::InvalidArgument,
        Error::IndefiniteOperator { .. } => ConelabStatus::IndefiniteOperator,
        _ => ConelabStatus::Numerical,
    }
}

struct Fail(ConelabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> ConelabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ConelabStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside conelab".into());
            ConelabStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ConelabStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, expected: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len != expected {
        return Err(Fail(ConelabStatus::BufferSize, format!("{what}: length {len}, expected {expected}")));
    }
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn conelab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// `dim`-dimensional grid with `side` vertices per axis and unit weights.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn conelab_manifold_grid(
    dim: usize,
    side: usize,
    out: *mut *mut ConelabManifold,
) -> ConelabStatus {
    guard(|| emit(out, ConelabManifold(Arc::new(manifold::grid(dim, side)?))))
}

/// Two grids joined by a single edge.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn conelab_manifold_dumbbell(
    dim: usize,
    side: usize,
    out: *mut *mut ConelabManifold,
) -> ConelabStatus {
    guard(|| emit(out, ConelabManifold(Arc::new(manifold::dumbbell(dim, side)?))))
}

/// Complete binary tree of the given depth.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn conelab_manifold_binary_tree(depth: usize, out: *mut *mut ConelabManifold) -> ConelabStatus {
    guard(|| emit(out, ConelabManifold(Arc::new(manifold::binary_tree(depth)?))))
}

/// General graph: `n` vertex masses and `m` edges given as parallel arrays.
/// `len` may be NULL for unit edge lengths.
///
/// # Safety
/// `mu` must hold `n` values; `u`, `v`, `w` (and `len` when non-NULL) must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn conelab_manifold_from_edges(
    n: usize,
    mu: *const f64,
    m: usize,
    u: *const usize,
    v: *const usize,
    w: *const f64,
    len: *const f64,
    out: *mut *mut ConelabManifold,
) -> ConelabStatus {
    guard(|| {
        let mu = input(mu, n, "mu")?.to_vec();
        let w = input(w, m, "w")?;
        let (us, vs) = if m == 0 {
            (&[][..], &[][..])
        } else if u.is_null() || v.is_null() {
            return Err(null("edge endpoints"));
        } else {
            (slice::from_raw_parts(u, m), slice::from_raw_parts(v, m))
        };
        let lens = if len.is_null() { None } else { Some(input(len, m, "len")?) };
        let edges = (0..m).map(|k| Edge { u: us[k], v: vs[k], w: w[k], len: lens.map_or(1.0, |l| l[k]) }).collect();
        emit(out, ConelabManifold(Arc::new(DiscreteManifold::new(mu, edges)?)))
    })
}

/// Number of vertices, or 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn conelab_manifold_vertex_count(m: *const ConelabManifold) -> usize {
    m.as_ref().map_or(0, |m| m.0.n())
}

/// Number of edges, or 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn conelab_manifold_edge_count(m: *const ConelabManifold) -> usize {
    m.as_ref().map_or(0, |m| m.0.num_edges())
}

/// Releases a manifold. NULL is ignored.
///
/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn conelab_manifold_free(m: *mut ConelabManifold) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Diagonalizes `Delta + V+ - V-`. Either potential may be NULL for zero.
/// The operator keeps its own reference to the manifold.
///
/// # Safety
/// `m` must be a live handle; non-NULL potentials must hold one value per vertex.
#[no_mangle]
pub unsafe extern "C" fn conelab_operator_assemble(
    m: *const ConelabManifold,
    vplus: *const f64,
    vminus: *const f64,
    out: *mut *mut ConelabOperator,
) -> ConelabStatus {
    guard(|| {
        let m = handle(m, "manifold")?;
        let n = m.0.n();
        let read = |p: *const f64, what| -> Result<Vec<f64>, Fail> {
            if p.is_null() {
                Ok(vec![0.0; n])
            } else {
                Ok(input(p, n, what)?.to_vec())
            }
        };
        let v = PotentialSplit::new(read(vplus, "vplus")?, read(vminus, "vminus")?, n)?;
        emit(out, ConelabOperator(spectral::assemble(&m.0, &v)?))
    })
}

/// Copies the ascending spectrum into `out` (length = vertex count).
///
/// # Safety
/// `op` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn conelab_operator_eigenvalues(
    op: *const ConelabOperator,
    out: *mut f64,
    len: usize,
) -> ConelabStatus {
    guard(|| {
        let op = handle(op, "operator")?;
        let l = op.0.lambdas();
        output(out, len, l.len(), "out")?.copy_from_slice(l);
        Ok(())
    })
}

/// `out = e^{-tL} f`.
///
/// # Safety
/// `op` must be a live handle; `f` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn conelab_operator_heat_apply(
    op: *const ConelabOperator,
    t: f64,
    f: *const f64,
    out: *mut f64,
    len: usize,
) -> ConelabStatus {
    guard(|| {
        let op = handle(op, "operator")?;
        let n = op.0.manifold().n();
        let f = input(f, len, "f")?;
        if len != n {
            return Err(Fail(ConelabStatus::BufferSize, format!("f: length {len}, expected {n}")));
        }
        let r = op.0.heat_apply(t, f)?;
        output(out, len, n, "out")?.copy_from_slice(&r);
        Ok(())
    })
}

/// Evaluates a square functional of `f` at every vertex.
///
/// # Safety
/// `op` must be a live handle; `f` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn conelab_functional(
    op: *const ConelabOperator,
    which: ConelabFunctional,
    engine: ConelabEngine,
    f: *const f64,
    out: *mut f64,
    len: usize,
) -> ConelabStatus {
    guard(|| {
        let op = handle(op, "operator")?;
        let n = op.0.manifold().n();
        let f = input(f, len, "f")?;
        if len != n {
            return Err(Fail(ConelabStatus::BufferSize, format!("f: length {len}, expected {n}")));
        }
        let engine = match engine {
            ConelabEngine::Exact => Engine::Exact,
            ConelabEngine::Quadrature => Engine::Quadrature,
        };
        let sf = SquareFunctions::new(&op.0).with_engine(engine);
        let r = match which {
            ConelabFunctional::G => sf.conical_g(f)?,
            ConelabFunctional::H => sf.vertical_h(f)?,
            ConelabFunctional::S => sf.horizontal_s(f)?,
            ConelabFunctional::SPhi0 => sf.s_phi(&SpectralFn::phi0(), f)?,
            ConelabFunctional::P => sf.poisson_parts(f)?.full,
        };
        output(out, len, n, "out")?.copy_from_slice(&r.values);
        Ok(())
    })
}

/// Releases an operator. NULL is ignored.
///
/// # Safety
/// `op` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn conelab_operator_free(op: *mut ConelabOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

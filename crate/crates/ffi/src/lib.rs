//! C ABI for the transport engine.
//!
//! Every fallible function returns an [`OtStatus`] and writes its result
//! through an out pointer. Handles are opaque, allocated here, and released
//! with the matching `*_free` (which accepts NULL). On a non-OK status the
//! calling thread's error message is updated and stays readable through
//! [`ot_last_error_message`] until the next failing call on that thread.
//! Scalar accessors return 0 (or NaN) on a NULL handle instead of failing.
//!
//! All panics are caught at the boundary and reported as
//! `OT_STATUS_PANIC`; nothing unwinds into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use ndarray::Array2;
use otpath::{
    optimize_path, path_energy, path_energy_gradient, ssim, w2_estimate, BoundaryCondition,
    DensityGrid, DensityPath, EnergyMode, EnergyReport, Error, GeodesicResult, ObstacleMask,
    SolverConfig, SsimParams,
};

/// Status code of an API call. Non-OK codes mirror the engine's error
/// kinds; the human-readable detail is in [`ot_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtStatus {
    Ok = 0,
    ShapeMismatch = 1,
    IncompatibleSize = 2,
    ZeroMass = 3,
    NonPositiveDensity = 4,
    MassMismatch = 5,
    SolverDivergence = 6,
    DisconnectedDomain = 7,
    UnsupportedFormat = 8,
    NonSquare = 9,
    CorruptHeader = 10,
    Io = 11,
    Config = 12,
    /// A required pointer argument was NULL.
    NullArgument = 13,
    /// An internal panic was caught at the boundary.
    Panic = 14,
}

/// Boundary condition for the face-gradient stencils.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtBoundaryCondition {
    Dirichlet = 0,
    Neumann = 1,
    Periodic = 2,
}

/// Geodesic solver options; fill with [`ot_solver_options_default`] and
/// override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OtSolverOptions {
    /// Time steps T; 0 picks T from the centroid displacement.
    pub steps: usize,
    /// Density floor ε.
    pub eps: f64,
    pub bc: OtBoundaryCondition,
    /// Unbalanced transport; `tau` is read only when set.
    pub unbalanced: bool,
    /// Source penalty τ > 0.
    pub tau: f64,
    /// Mass-loss weight β ≥ 0.
    pub beta: f64,
    pub max_iters: usize,
    /// Initial line-search step.
    pub step0: f64,
    /// Stop when the relative objective decrease falls below this.
    pub tol_rel: f64,
    pub seed: u64,
}

/// One n×n density slice.
pub struct OtDensity(DensityGrid);
/// Obstacle mask; nonzero cells are blocked.
pub struct OtMask(ObstacleMask);
/// Ordered path of T+1 density slices.
pub struct OtPath(DensityPath);
/// Energy report: total J, per-slice energies.
pub struct OtReport(EnergyReport);
/// Result of a geodesic optimization.
pub struct OtGeodesic(GeodesicResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: OtStatus, msg: impl Into<Vec<u8>>) -> OtStatus {
    let text = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
    status
}

fn fail_error(e: &Error) -> OtStatus {
    let status = match e {
        Error::ShapeMismatch(_) => OtStatus::ShapeMismatch,
        Error::IncompatibleSize { .. } => OtStatus::IncompatibleSize,
        Error::ZeroMass => OtStatus::ZeroMass,
        Error::NonPositiveDensity { .. } => OtStatus::NonPositiveDensity,
        Error::MassMismatch { .. } => OtStatus::MassMismatch,
        Error::SolverDivergence { .. } => OtStatus::SolverDivergence,
        Error::DisconnectedDomain { .. } => OtStatus::DisconnectedDomain,
        Error::UnsupportedFormat(_) => OtStatus::UnsupportedFormat,
        Error::NonSquare { .. } => OtStatus::NonSquare,
        Error::CorruptHeader(_) => OtStatus::CorruptHeader,
        Error::Io(_) => OtStatus::Io,
        Error::Config(_) => OtStatus::Config,
    };
    fail(status, e.to_string())
}

/// Run a body with panics converted to `OT_STATUS_PANIC`.
fn guarded(f: impl FnOnce() -> OtStatus) -> OtStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(OtStatus::Panic, "internal panic"))
}

macro_rules! nonnull {
    ($ptr:expr) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => {
                return fail(
                    OtStatus::NullArgument,
                    concat!(stringify!($ptr), " is null"),
                )
            }
        }
    };
}

fn bc_of(bc: OtBoundaryCondition) -> BoundaryCondition {
    match bc {
        OtBoundaryCondition::Dirichlet => BoundaryCondition::Dirichlet,
        OtBoundaryCondition::Neumann => BoundaryCondition::Neumann,
        OtBoundaryCondition::Periodic => BoundaryCondition::Periodic,
    }
}

fn mode_of(unbalanced: bool, tau: f64, obstacle: Option<&OtMask>) -> Result<EnergyMode, Error> {
    let mut mode = if unbalanced {
        EnergyMode::unbalanced(tau)?
    } else {
        EnergyMode::balanced()
    };
    if let Some(m) = obstacle {
        mode = mode.with_obstacle(m.0.clone());
    }
    Ok(mode)
}

/// Copy an n×n array into a caller buffer of length `len` (must be n²).
fn copy_out(values: &Array2<f64>, out: *mut f64, len: usize) -> OtStatus {
    let cells = values.len();
    if out.is_null() {
        return fail(OtStatus::NullArgument, "out is null");
    }
    if len != cells {
        return fail(
            OtStatus::Config,
            format!("buffer holds {len} values, expected {cells}"),
        );
    }
    let dst = unsafe { slice::from_raw_parts_mut(out, len) };
    for (d, v) in dst.iter_mut().zip(values.iter()) {
        *d = *v;
    }
    OtStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the calling thread's most recent failure. Never NULL;
/// empty before the first failure. The pointer is invalidated by the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build an n×n density from `values` (n² doubles, row-major).
///
/// # Safety
/// `values` must point to n² readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_density_create(
    n: usize,
    values: *const f64,
    out: *mut *mut OtDensity,
) -> OtStatus {
    guarded(|| {
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        if values.is_null() {
            return fail(OtStatus::NullArgument, "values is null");
        }
        if n == 0 {
            return fail(OtStatus::Config, "n must be positive");
        }
        let Some(cells) = n.checked_mul(n) else {
            return fail(OtStatus::Config, "n overflows");
        };
        let data = unsafe { slice::from_raw_parts(values, cells) }.to_vec();
        let arr = Array2::from_shape_vec((n, n), data).expect("len checked");
        match DensityGrid::new(arr) {
            Ok(d) => {
                unsafe { *out = Box::into_raw(Box::new(OtDensity(d))) };
                OtStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// New density with every value clamped up to at least `eps`.
///
/// # Safety
/// `d` must be a live density handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_density_threshold(
    d: *const OtDensity,
    eps: f64,
    out: *mut *mut OtDensity,
) -> OtStatus {
    guarded(|| {
        let d = nonnull!(d);
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        unsafe { *out = Box::into_raw(Box::new(OtDensity(d.0.threshold(eps)))) };
        OtStatus::Ok
    })
}

/// Side length, or 0 for a NULL handle.
///
/// # Safety
/// `d` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_density_n(d: *const OtDensity) -> usize {
    unsafe { d.as_ref() }.map_or(0, |d| d.0.n())
}

/// Total mass Σ|v|, or NaN for a NULL handle.
///
/// # Safety
/// `d` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_density_mass(d: *const OtDensity) -> f64 {
    unsafe { d.as_ref() }.map_or(f64::NAN, |d| d.0.mass())
}

/// Copy the values out, row-major; `len` must equal n².
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ot_density_values(
    d: *const OtDensity,
    out: *mut f64,
    len: usize,
) -> OtStatus {
    guarded(|| {
        let d = nonnull!(d);
        copy_out(d.0.values(), out, len)
    })
}

/// Release a density handle (NULL is a no-op).
///
/// # Safety
/// `d` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ot_density_free(d: *mut OtDensity) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}

/// Build an n×n obstacle mask from n² bytes (row-major, nonzero = blocked).
///
/// # Safety
/// `cells` must point to n² readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_mask_create(
    n: usize,
    cells: *const u8,
    out: *mut *mut OtMask,
) -> OtStatus {
    guarded(|| {
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        if cells.is_null() {
            return fail(OtStatus::NullArgument, "cells is null");
        }
        if n == 0 {
            return fail(OtStatus::Config, "n must be positive");
        }
        let Some(count) = n.checked_mul(n) else {
            return fail(OtStatus::Config, "n overflows");
        };
        let bytes = unsafe { slice::from_raw_parts(cells, count) };
        let arr = Array2::from_shape_vec((n, n), bytes.iter().map(|&b| b != 0).collect())
            .expect("len checked");
        match ObstacleMask::new(arr) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(OtMask(m))) };
                OtStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Release a mask handle (NULL is a no-op).
///
/// # Safety
/// `m` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ot_mask_free(m: *mut OtMask) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Build a path from `count` density handles (slices are copied).
///
/// # Safety
/// `slices` must point to `count` live density handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ot_path_create(
    slices: *const *const OtDensity,
    count: usize,
    out: *mut *mut OtPath,
) -> OtStatus {
    guarded(|| {
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        if slices.is_null() {
            return fail(OtStatus::NullArgument, "slices is null");
        }
        let handles = unsafe { slice::from_raw_parts(slices, count) };
        let mut grids = Vec::with_capacity(count);
        for (t, &h) in handles.iter().enumerate() {
            match unsafe { h.as_ref() } {
                Some(d) => grids.push(d.0.clone()),
                None => return fail(OtStatus::NullArgument, format!("slices[{t}] is null")),
            }
        }
        match DensityPath::new(grids) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(OtPath(p))) };
                OtStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Number of time steps T (slices minus one), or 0 for a NULL handle.
///
/// # Safety
/// `p` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_path_steps(p: *const OtPath) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| p.0.steps())
}

/// Side length of the slices, or 0 for a NULL handle.
///
/// # Safety
/// `p` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_path_n(p: *const OtPath) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| p.0.n())
}

/// Copy slice `t` (0 ≤ t ≤ T) into `out`; `len` must equal n².
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ot_path_slice_values(
    p: *const OtPath,
    t: usize,
    out: *mut f64,
    len: usize,
) -> OtStatus {
    guarded(|| {
        let p = nonnull!(p);
        let Some(slice) = p.0.slices().get(t) else {
            return fail(
                OtStatus::Config,
                format!("slice {t} out of range, path has {}", p.0.slices().len()),
            );
        };
        copy_out(slice.values(), out, len)
    })
}

/// Release a path handle (NULL is a no-op).
///
/// # Safety
/// `p` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ot_path_free(p: *mut OtPath) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Path energy J of a density path. `obstacle` may be NULL; `tau` is
/// read only when `unbalanced` is set.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_path_energy(
    p: *const OtPath,
    bc: OtBoundaryCondition,
    unbalanced: bool,
    tau: f64,
    obstacle: *const OtMask,
    out: *mut *mut OtReport,
) -> OtStatus {
    guarded(|| {
        let p = nonnull!(p);
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        let mode = match mode_of(unbalanced, tau, unsafe { obstacle.as_ref() }) {
            Ok(m) => m,
            Err(e) => return fail_error(&e),
        };
        match path_energy(&p.0, bc_of(bc), &mode) {
            Ok(r) => {
                unsafe { *out = Box::into_raw(Box::new(OtReport(r))) };
                OtStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Gradient of J with respect to the interior slices, written as T−1
/// consecutive n² blocks (row-major); `len` must equal (T−1)·n².
///
/// # Safety
/// Handles must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ot_path_energy_gradient(
    p: *const OtPath,
    bc: OtBoundaryCondition,
    unbalanced: bool,
    tau: f64,
    obstacle: *const OtMask,
    out: *mut f64,
    len: usize,
) -> OtStatus {
    guarded(|| {
        let p = nonnull!(p);
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        let mode = match mode_of(unbalanced, tau, unsafe { obstacle.as_ref() }) {
            Ok(m) => m,
            Err(e) => return fail_error(&e),
        };
        let grad = match path_energy_gradient(&p.0, bc_of(bc), &mode) {
            Ok(g) => g,
            Err(e) => return fail_error(&e),
        };
        let cells = p.0.n() * p.0.n();
        let needed = grad.slices.len() * cells;
        if len != needed {
            return fail(
                OtStatus::Config,
                format!("buffer holds {len} values, expected {needed}"),
            );
        }
        let dst = unsafe { slice::from_raw_parts_mut(out, len) };
        for (block, g) in dst.chunks_exact_mut(cells).zip(&grad.slices) {
            for (d, v) in block.iter_mut().zip(g.iter()) {
                *d = *v;
            }
        }
        OtStatus::Ok
    })
}

/// Total energy J, or NaN for a NULL handle.
///
/// # Safety
/// `r` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_report_total(r: *const OtReport) -> f64 {
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| r.0.j)
}

/// Number of time steps T covered by the report, or 0 for NULL.
///
/// # Safety
/// `r` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_report_steps(r: *const OtReport) -> usize {
    unsafe { r.as_ref() }.map_or(0, |r| r.0.per_slice_energy.len())
}

/// Energy of step `t` (0 ≤ t < T).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_report_slice_energy(
    r: *const OtReport,
    t: usize,
    out: *mut f64,
) -> OtStatus {
    guarded(|| {
        let r = nonnull!(r);
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        let Some(&e) = r.0.per_slice_energy.get(t) else {
            return fail(
                OtStatus::Config,
                format!("step {t} out of range, report has {}", r.0.per_slice_energy.len()),
            );
        };
        unsafe { *out = e };
        OtStatus::Ok
    })
}

/// Squared-Wasserstein estimate T·J, or NaN for a NULL handle.
///
/// # Safety
/// `r` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_report_w2(r: *const OtReport) -> f64 {
    unsafe { r.as_ref() }.map_or(f64::NAN, |r| w2_estimate(&r.0, r.0.per_slice_energy.len()))
}

/// Release a report handle (NULL is a no-op).
///
/// # Safety
/// `r` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ot_report_free(r: *mut OtReport) {
    if !r.is_null() {
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Fill `out` with the default solver options.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_solver_options_default(out: *mut OtSolverOptions) -> OtStatus {
    guarded(|| {
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        let d = SolverConfig::default();
        unsafe {
            *out = OtSolverOptions {
                steps: d.steps.unwrap_or(0),
                eps: d.eps,
                bc: OtBoundaryCondition::Dirichlet,
                unbalanced: false,
                tau: 1.0,
                beta: d.beta,
                max_iters: d.max_iters,
                step0: d.step0,
                tol_rel: d.tol_rel,
                seed: d.seed,
            };
        }
        OtStatus::Ok
    })
}

/// Optimize a geodesic path between two densities. `obstacle` may be
/// NULL. A run that merely exhausts `max_iters` still succeeds; check
/// [`ot_geodesic_converged`].
///
/// # Safety
/// Handles and `opts` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_solve(
    source: *const OtDensity,
    target: *const OtDensity,
    obstacle: *const OtMask,
    opts: *const OtSolverOptions,
    out: *mut *mut OtGeodesic,
) -> OtStatus {
    guarded(|| {
        let source = nonnull!(source);
        let target = nonnull!(target);
        let opts = nonnull!(opts);
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        let mode = match mode_of(opts.unbalanced, opts.tau, unsafe { obstacle.as_ref() }) {
            Ok(m) => m,
            Err(e) => return fail_error(&e),
        };
        let cfg = SolverConfig {
            steps: (opts.steps > 0).then_some(opts.steps),
            eps: opts.eps,
            bc: bc_of(opts.bc),
            mode,
            beta: opts.beta,
            max_iters: opts.max_iters,
            step0: opts.step0,
            tol_rel: opts.tol_rel,
            seed: opts.seed,
        };
        match optimize_path(&source.0, &target.0, &cfg) {
            Ok(g) => {
                unsafe { *out = Box::into_raw(Box::new(OtGeodesic(g))) };
                OtStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Final path energy J, or NaN for a NULL handle.
///
/// # Safety
/// `g` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_energy(g: *const OtGeodesic) -> f64 {
    unsafe { g.as_ref() }.map_or(f64::NAN, |g| g.0.j_final)
}

/// Accepted optimizer iterations, or 0 for a NULL handle.
///
/// # Safety
/// `g` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_iterations(g: *const OtGeodesic) -> usize {
    unsafe { g.as_ref() }.map_or(0, |g| g.0.iterations)
}

/// Whether the run converged before exhausting its iteration budget.
///
/// # Safety
/// `g` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_converged(g: *const OtGeodesic) -> bool {
    unsafe { g.as_ref() }.is_some_and(|g| g.0.converged)
}

/// Number of time steps T of the optimized path, or 0 for NULL.
///
/// # Safety
/// `g` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_steps(g: *const OtGeodesic) -> usize {
    unsafe { g.as_ref() }.map_or(0, |g| g.0.path.steps())
}

/// Side length of the optimized path's slices, or 0 for NULL.
///
/// # Safety
/// `g` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_n(g: *const OtGeodesic) -> usize {
    unsafe { g.as_ref() }.map_or(0, |g| g.0.path.n())
}

/// Copy frame `t` (0 ≤ t ≤ T) of the optimized path; `len` must be n².
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_frame(
    g: *const OtGeodesic,
    t: usize,
    out: *mut f64,
    len: usize,
) -> OtStatus {
    guarded(|| {
        let g = nonnull!(g);
        let Some(slice) = g.0.path.slices().get(t) else {
            return fail(
                OtStatus::Config,
                format!("frame {t} out of range, path has {}", g.0.path.slices().len()),
            );
        };
        copy_out(slice.values(), out, len)
    })
}

/// Release a geodesic handle (NULL is a no-op).
///
/// # Safety
/// `g` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ot_geodesic_free(g: *mut OtGeodesic) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

/// Structural-similarity index of two densities (default parameters).
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ot_ssim(
    a: *const OtDensity,
    b: *const OtDensity,
    out: *mut f64,
) -> OtStatus {
    guarded(|| {
        let a = nonnull!(a);
        let b = nonnull!(b);
        if out.is_null() {
            return fail(OtStatus::NullArgument, "out is null");
        }
        match ssim(&a.0, &b.0, &SsimParams::default()) {
            Ok(v) => {
                unsafe { *out = v };
                OtStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

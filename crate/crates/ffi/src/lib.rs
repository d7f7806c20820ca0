//! C ABI for the conditional-state solver.
//!
//! Objects cross the boundary as opaque handles created by `om_*_new` and released by the
//! matching `om_*_free`. Every fallible call returns an [`OmStatus`]; on failure the
//! message is kept per thread and read back with [`om_last_error`].
//!
//! Handles are not synchronized. A handle may move between threads but must not be used
//! from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use optomech::metrics::MetricsReport;
use optomech::optical_source::ResourceParams;
use optomech::phase_space::{GridPolicy, Quadrature, WignerField, WignerGrid};
use optomech::protocol::{derive_device, DeviceParams};
use optomech::qnd_core::{ClosedFormVariant, ConditionalState, MechanicalInput, QndCoupling};
use optomech::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Parameter outside its domain, or an impossible heralding event.
    InvalidArgument = 2,
    /// Numerical failure: truncation, resolution, convergence.
    Numeric = 3,
    /// Caller buffer too small; query the shape first.
    BufferTooSmall = 4,
    /// A Rust panic was caught at the boundary. A bug.
    Internal = 5,
}

/// Optical resource. `squeeze_x` selects amplitude squeezing; 0 means phase squeezing.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OmResource {
    pub r: f64,
    pub t: f64,
    pub eta: f64,
    pub m: u32,
    pub n_p: f64,
    pub sigma_n: f64,
    pub squeeze_x: u8,
}

/// QND pulse coupling and the homodyne outcome.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OmCoupling {
    pub chi: f64,
    pub omega: f64,
    pub p_tilde: f64,
}

/// Device inputs in SI units (angular frequencies in rad/s).
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OmDevice {
    pub lambda_l: f64,
    pub length: f64,
    pub omega_m: f64,
    pub mass: f64,
    pub q_m: f64,
    pub kappa: f64,
    pub t_bath: f64,
}

/// Quantities derived from a device at a given pulse photon number.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OmDerived {
    pub x_zpf: f64,
    pub g0: f64,
    pub g0_over_kappa: f64,
    pub chi: f64,
    pub omega: f64,
    pub finesse: f64,
    pub n_bar_th: f64,
    pub gamma_m: f64,
}

/// Scores of a sampled grid. `fringe_d` is NaN for single-lobed states.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OmMetrics {
    pub negativity: f64,
    pub macroscopicity: f64,
    pub v_x: f64,
    pub v_p: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub purity: f64,
    pub fringe_d: f64,
}

/// Opaque conditional mechanical state.
pub struct OmState {
    inner: ConditionalState,
}

/// Opaque sampled Wigner grid.
pub struct OmGrid {
    inner: WignerGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> OmStatus {
    match e {
        Error::InvalidState(_)
        | Error::InvalidParameter(_)
        | Error::ImpossibleHeralding(_)
        | Error::ImpossibleOutcome(_)
        | Error::DivergentParameter(_)
        | Error::TailMass { .. }
        | Error::Config(_) => OmStatus::InvalidArgument,
        _ => OmStatus::Numeric,
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), (OmStatus, String)>) -> OmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            OmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            OmStatus::Internal
        }
    }
}

fn lift<T>(r: optomech::Result<T>) -> Result<T, (OmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (OmStatus, String)> {
    // SAFETY: caller guarantees `p` is null or valid for reads for the call's duration.
    unsafe { p.as_ref() }.ok_or_else(|| (OmStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (OmStatus, String)> {
    // SAFETY: caller guarantees `p` is null or valid for writes for the call's duration.
    unsafe { p.as_mut() }.ok_or_else(|| (OmStatus::NullPointer, format!("{name} is null")))
}

impl From<&OmResource> for ResourceParams {
    fn from(r: &OmResource) -> Self {
        ResourceParams {
            r: r.r,
            t: r.t,
            eta: r.eta,
            m: r.m,
            n_p: r.n_p,
            sigma_n: r.sigma_n,
            squeezed_quadrature: if r.squeeze_x != 0 { Quadrature::X } else { Quadrature::P },
        }
    }
}

impl From<DeviceParams> for OmDevice {
    fn from(d: DeviceParams) -> Self {
        OmDevice {
            lambda_l: d.lambda_l,
            length: d.length,
            omega_m: d.omega_m,
            mass: d.mass,
            q_m: d.q_m,
            kappa: d.kappa,
            t_bath: d.t_bath,
        }
    }
}

impl From<&OmDevice> for DeviceParams {
    fn from(d: &OmDevice) -> Self {
        DeviceParams {
            lambda_l: d.lambda_l,
            length: d.length,
            omega_m: d.omega_m,
            mass: d.mass,
            q_m: d.q_m,
            kappa: d.kappa,
            t_bath: d.t_bath,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn om_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated, truncated
/// to `len`). Returns the full message length excluding the terminator; 0 after a
/// successful call.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn om_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` holds at least `len > n` bytes.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Human-readable name of a status code, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn om_status_name(status: OmStatus) -> *const c_char {
    let s: &'static CStr = match status {
        OmStatus::Ok => c"ok",
        OmStatus::NullPointer => c"null pointer",
        OmStatus::InvalidArgument => c"invalid argument",
        OmStatus::Numeric => c"numeric failure",
        OmStatus::BufferTooSmall => c"buffer too small",
        OmStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

/// Reference device parameters.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn om_device_reference(out: *mut OmDevice) -> OmStatus {
    guard(|| {
        *unsafe { out_ref(out, "out") }? = DeviceParams::reference().into();
        Ok(())
    })
}

/// Derived couplings, finesse and bath occupation for `device` driven with `n_p` photons.
///
/// # Safety
/// `device` must be null or valid for reads, `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn om_device_derive(device: *const OmDevice, n_p: f64, out: *mut OmDerived) -> OmStatus {
    guard(|| {
        let dev = DeviceParams::from(unsafe { deref(device, "device") }?);
        let out = unsafe { out_ref(out, "out") }?;
        let d = lift(derive_device(&dev, n_p))?;
        *out = OmDerived {
            x_zpf: d.x_zpf,
            g0: d.g0,
            g0_over_kappa: d.g0_over_kappa,
            chi: d.chi,
            omega: d.omega,
            finesse: d.finesse,
            n_bar_th: d.n_bar_th,
            gamma_m: d.gamma_m,
        };
        Ok(())
    })
}

/// Conditional state for a Gaussian mechanical input with variances `v_x`, `v_p`.
/// On success `*out` owns a new handle; release it with [`om_state_free`].
///
/// # Safety
/// `resource` and `coupling` must be null or valid for reads, `out` null or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn om_state_new(
    resource: *const OmResource,
    v_x: f64,
    v_p: f64,
    coupling: *const OmCoupling,
    out: *mut *mut OmState,
) -> OmStatus {
    guard(|| {
        let res = ResourceParams::from(unsafe { deref(resource, "resource") }?);
        let c = unsafe { deref(coupling, "coupling") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let mech = lift(MechanicalInput::new(v_x, v_p))?;
        let coupling = lift(QndCoupling::new(c.chi, c.omega, c.p_tilde))?;
        let inner = lift(ConditionalState::new(&res, &mech, &coupling, ClosedFormVariant::Corrected))?;
        *out = Box::into_raw(Box::new(OmState { inner }));
        Ok(())
    })
}

/// Releases a state. Null is ignored.
///
/// # Safety
/// `state` must be null or a handle from [`om_state_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn om_state_free(state: *mut OmState) {
    if !state.is_null() {
        // SAFETY: handle came from Box::into_raw and is released once.
        drop(unsafe { Box::from_raw(state) });
    }
}

/// Normalized Wigner function at the lab-frame point `(x, p)`.
///
/// # Safety
/// `state` must be null or a live handle, `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn om_state_wigner(state: *const OmState, x: f64, p: f64, out: *mut f64) -> OmStatus {
    guard(|| {
        let s = unsafe { deref(state, "state") }?;
        *unsafe { out_ref(out, "out") }? = s.inner.value(x, p);
        Ok(())
    })
}

/// Density of the quadrature `x cos θ + p sin θ` at `s`, blurred by a Gaussian of
/// variance `noise_var` (0 for none).
///
/// # Safety
/// `state` must be null or a live handle, `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn om_state_quadrature_density(
    state: *const OmState,
    theta: f64,
    s: f64,
    noise_var: f64,
    out: *mut f64,
) -> OmStatus {
    guard(|| {
        let st = unsafe { deref(state, "state") }?;
        let out = unsafe { out_ref(out, "out") }?;
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err((OmStatus::InvalidArgument, format!("noise_var = {noise_var} must be finite and >= 0")));
        }
        *out = st.inner.quadrature_density(theta, s, noise_var);
        Ok(())
    })
}

/// Samples the state on an automatically sized grid with at least `min_count` points per
/// axis (0 selects the default).
///
/// # Safety
/// `state` must be null or a live handle, `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn om_state_sample(state: *const OmState, min_count: usize, out: *mut *mut OmGrid) -> OmStatus {
    guard(|| {
        let st = unsafe { deref(state, "state") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let mut policy = GridPolicy::default();
        if min_count > 0 {
            if min_count < 3 {
                return Err((OmStatus::InvalidArgument, format!("min_count = {min_count} must be >= 3")));
            }
            policy.min_count = min_count;
        }
        let grid = lift(st.inner.sample(&st.inner.grid_spec(&policy)))?;
        *out = Box::into_raw(Box::new(OmGrid { inner: grid }));
        Ok(())
    })
}

/// Releases a grid. Null is ignored.
///
/// # Safety
/// `grid` must be null or a handle from [`om_state_sample`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn om_grid_free(grid: *mut OmGrid) {
    if !grid.is_null() {
        // SAFETY: handle came from Box::into_raw and is released once.
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Axis point counts.
///
/// # Safety
/// `grid` must be null or a live handle, `nx` and `np` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn om_grid_shape(grid: *const OmGrid, nx: *mut usize, np: *mut usize) -> OmStatus {
    guard(|| {
        let g = unsafe { deref(grid, "grid") }?;
        *unsafe { out_ref(nx, "nx") }? = g.inner.x_axis().count;
        *unsafe { out_ref(np, "np") }? = g.inner.p_axis().count;
        Ok(())
    })
}

unsafe fn fill(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (OmStatus, String)> {
    if buf.is_null() {
        return Err((OmStatus::NullPointer, "buf is null".into()));
    }
    if len < src.len() {
        return Err((OmStatus::BufferTooSmall, format!("need {} values, got {len}", src.len())));
    }
    // SAFETY: `buf` is valid for `len >= src.len()` writes per the caller contract.
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Copies the values, row-major over p then x (`nx * np` doubles).
///
/// # Safety
/// `grid` must be null or a live handle, `buf` null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn om_grid_values(grid: *const OmGrid, buf: *mut f64, len: usize) -> OmStatus {
    guard(|| {
        let g = unsafe { deref(grid, "grid") }?;
        unsafe { fill(g.inner.values(), buf, len) }
    })
}

/// Copies the lab-frame axis coordinates into `xs` (`nx` doubles) and `ps` (`np`).
///
/// # Safety
/// `grid` must be null or a live handle; `xs`, `ps` null or valid for `nx_len`, `np_len`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn om_grid_axes(
    grid: *const OmGrid,
    xs: *mut f64,
    nx_len: usize,
    ps: *mut f64,
    np_len: usize,
) -> OmStatus {
    guard(|| {
        let g = &unsafe { deref(grid, "grid") }?.inner;
        let off = g.frame_offset();
        let x: Vec<f64> = g.x_axis().coords().iter().map(|v| v + off.x).collect();
        let p: Vec<f64> = g.p_axis().coords().iter().map(|v| v + off.p).collect();
        unsafe { fill(&x, xs, nx_len) }?;
        unsafe { fill(&p, ps, np_len) }
    })
}

/// Total negativity, macroscopicity, moments and fringe spacing of a grid.
///
/// # Safety
/// `grid` must be null or a live handle, `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn om_grid_metrics(grid: *const OmGrid, out: *mut OmMetrics) -> OmStatus {
    guard(|| {
        let g = unsafe { deref(grid, "grid") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let m = lift(MetricsReport::evaluate(&g.inner))?;
        *out = OmMetrics {
            negativity: m.negativity,
            macroscopicity: m.macroscopicity,
            v_x: m.v_x,
            v_p: m.v_p,
            mean_x: m.mean_x,
            mean_p: m.mean_p,
            purity: m.purity,
            fringe_d: m.fringe_d.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

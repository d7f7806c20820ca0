use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use optomech_ffi::*;

fn resource(m: u32) -> OmResource {
    OmResource { r: 1.5, t: 0.98, eta: 0.95, m, n_p: 3.2e5, sigma_n: 0.0, squeeze_x: 0 }
}

const COUPLING: OmCoupling = OmCoupling { chi: 1.0, omega: 400.0, p_tilde: 0.0 };

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe { om_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn new_state(m: u32) -> *mut OmState {
    let mut s = ptr::null_mut();
    let st = unsafe { om_state_new(&resource(m), 1.5, 1.5, &COUPLING, &mut s) };
    assert_eq!(st, OmStatus::Ok, "{}", last_error());
    s
}

#[test]
fn state_grid_and_metrics_round_trip() {
    let s = new_state(3);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { om_state_sample(s, 0, &mut g) }, OmStatus::Ok);
    let (mut nx, mut np) = (0usize, 0usize);
    assert_eq!(unsafe { om_grid_shape(g, &mut nx, &mut np) }, OmStatus::Ok);
    let mut vals = vec![0.0; nx * np];
    assert_eq!(unsafe { om_grid_values(g, vals.as_mut_ptr(), vals.len()) }, OmStatus::Ok);
    let (mut xs, mut ps) = (vec![0.0; nx], vec![0.0; np]);
    assert_eq!(unsafe { om_grid_axes(g, xs.as_mut_ptr(), nx, ps.as_mut_ptr(), np) }, OmStatus::Ok);
    // grid values agree with point evaluation at the lab coordinates
    for (ix, ip) in [(nx / 2, np / 2), (nx / 3, np / 2 + 7)] {
        let mut w = 0.0;
        assert_eq!(unsafe { om_state_wigner(s, xs[ix], ps[ip], &mut w) }, OmStatus::Ok);
        assert!((w - vals[ip * nx + ix]).abs() < 1e-12);
    }
    let mut m = OmMetrics::default();
    assert_eq!(unsafe { om_grid_metrics(g, &mut m) }, OmStatus::Ok);
    assert!((m.negativity - 0.47683).abs() < 1e-3, "{m:?}");
    assert!(m.fringe_d.is_finite());
    unsafe {
        om_grid_free(g);
        om_state_free(s);
    }
}

#[test]
fn single_lobed_state_reports_nan_fringe() {
    let s = new_state(0);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { om_state_sample(s, 0, &mut g) }, OmStatus::Ok);
    let mut m = OmMetrics::default();
    assert_eq!(unsafe { om_grid_metrics(g, &mut m) }, OmStatus::Ok);
    assert!(m.fringe_d.is_nan());
    assert!(m.negativity.abs() < 1e-9);
    unsafe {
        om_grid_free(g);
        om_state_free(s);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut s = ptr::null_mut();
    let mut bad = resource(2);
    bad.eta = 0.0;
    assert_eq!(unsafe { om_state_new(&bad, 1.5, 1.5, &COUPLING, &mut s) }, OmStatus::InvalidArgument);
    assert!(s.is_null());
    assert!(last_error().contains("heralding"), "{}", last_error());

    assert_eq!(unsafe { om_state_new(&resource(1), 0.1, 0.1, &COUPLING, &mut s) }, OmStatus::InvalidArgument);
    assert_eq!(unsafe { om_state_new(ptr::null(), 1.5, 1.5, &COUPLING, &mut s) }, OmStatus::NullPointer);
    assert_eq!(unsafe { om_state_new(&resource(1), 1.5, 1.5, &COUPLING, ptr::null_mut()) }, OmStatus::NullPointer);

    let s = new_state(1);
    assert!(last_error().is_empty());
    let mut out = 0.0;
    assert_eq!(unsafe { om_state_quadrature_density(s, 0.0, 0.0, -1.0, &mut out) }, OmStatus::InvalidArgument);
    assert_eq!(unsafe { om_state_sample(s, 2, &mut ptr::null_mut()) }, OmStatus::InvalidArgument);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { om_state_sample(s, 0, &mut g) }, OmStatus::Ok);
    let mut one = 0.0;
    assert_eq!(unsafe { om_grid_values(g, &mut one, 1) }, OmStatus::BufferTooSmall);
    unsafe {
        om_grid_free(g);
        om_state_free(s);
        om_state_free(ptr::null_mut());
        om_grid_free(ptr::null_mut());
    }
    let name = unsafe { CStr::from_ptr(om_status_name(OmStatus::Numeric)) };
    assert_eq!(name.to_str().unwrap(), "numeric failure");
}

#[test]
fn quadrature_density_is_normalized() {
    let s = new_state(2);
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { om_state_sample(s, 0, &mut w) }, OmStatus::Ok);
    let (mut nx, mut np) = (0, 0);
    unsafe { om_grid_shape(w, &mut nx, &mut np) };
    let mut xs = vec![0.0; nx];
    let mut ps = vec![0.0; np];
    unsafe { om_grid_axes(w, xs.as_mut_ptr(), nx, ps.as_mut_ptr(), np) };
    // integrate the p-marginal (θ = π/2) over the grid's p axis, trapezoid
    let dp = ps[1] - ps[0];
    let total: f64 = ps
        .iter()
        .map(|&p| {
            let mut d = 0.0;
            unsafe { om_state_quadrature_density(s, std::f64::consts::FRAC_PI_2, p, 0.25, &mut d) };
            d * dp
        })
        .sum();
    assert!((total - 1.0).abs() < 1e-6, "{total}");
    unsafe {
        om_grid_free(w);
        om_state_free(s);
    }
}

#[test]
fn device_derivation() {
    let mut dev = OmDevice { lambda_l: 0.0, length: 0.0, omega_m: 0.0, mass: 0.0, q_m: 0.0, kappa: 0.0, t_bath: 0.0 };
    assert_eq!(unsafe { om_device_reference(&mut dev) }, OmStatus::Ok);
    let mut d = OmDerived::default();
    assert_eq!(unsafe { om_device_derive(&dev, 3.2e5, &mut d) }, OmStatus::Ok);
    assert!((d.g0_over_kappa - 4.4296e-4).abs() < 1e-7);
    assert!((d.chi - 1.002).abs() < 1e-3);
    dev.mass = -1.0;
    assert_eq!(unsafe { om_device_derive(&dev, 3.2e5, &mut d) }, OmStatus::InvalidArgument);
}

/// Compiles `tests/c/smoke.c` against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("liboptomech_ffi.a");
    if !lib.exists() {
        panic!("static library not found at {}", lib.display());
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("optomech_smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}

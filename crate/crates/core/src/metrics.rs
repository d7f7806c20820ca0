//! Scores for sampled Wigner functions: total negativity, macroscopicity, moments and
//! the separation of the two dominant lobes.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{Axis, GaussianState, Quadrature, WignerGrid};

/// Quadrature noise below this magnitude is reported as zero negativity.
pub const NEGATIVITY_CLAMP: f64 = 1e-9;

/// Relative change of the macroscopicity allowed between a grid and its coarsened copy.
pub const MACRO_CONVERGENCE_TOL: f64 = 1e-4;

/// Boundary-to-peak ratio above which metrics log a truncation warning.
pub const TRUNCATION_WARN_RATIO: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub v_x: f64,
    pub v_p: f64,
    pub purity: f64,
}

/// Full set of scores; serialized with fixed key names.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub negativity: f64,
    pub macroscopicity: f64,
    pub v_x: f64,
    pub v_p: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub purity: f64,
    /// `None` for single-lobed states.
    pub fringe_d: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate(grid: &WignerGrid) -> Result<Self> {
        let m = moments(grid);
        let fringe_d = match fringe_separation(grid) {
            Ok(d) => Some(d),
            Err(Error::Unimodal(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            negativity: total_negativity(grid),
            macroscopicity: macroscopicity(grid)?,
            v_x: m.v_x,
            v_p: m.v_p,
            mean_x: m.mean_x,
            mean_p: m.mean_p,
            purity: m.purity,
            fringe_d,
        })
    }
}

fn warn_truncation(grid: &WignerGrid) {
    // check_truncation logs the warning itself; metrics still return a value.
    let _ = grid.check_truncation(TRUNCATION_WARN_RATIO);
}

/// `∫∫|W| - 1`, taken relative to the grid's own integral so residual normalization
/// error does not masquerade as negativity.
pub fn total_negativity(grid: &WignerGrid) -> f64 {
    warn_truncation(grid);
    let norm = grid.integrate(|w| w);
    let abs = grid.integrate(f64::abs);
    let n = abs / norm - 1.0;
    if n < 0.0 {
        if n < -NEGATIVITY_CLAMP {
            log::warn!("negativity {n:.3e} below clamp tolerance; grid may not be normalized");
        }
        return 0.0;
    }
    n
}

/// First and second central moments in the lab frame and the purity `2π ∫∫W²`.
pub fn moments(grid: &WignerGrid) -> Moments {
    warn_truncation(grid);
    let norm = grid.integrate(|w| w);
    let off = grid.frame_offset();
    // Local coordinates keep the variance free of cancellation at large offsets.
    let mx = grid.integrate_with(|x, _, w| (x - off.x) * w) / norm;
    let mp = grid.integrate_with(|_, p, w| (p - off.p) * w) / norm;
    let vx = grid.integrate_with(|x, _, w| (x - off.x - mx).powi(2) * w) / norm;
    let vp = grid.integrate_with(|_, p, w| (p - off.p - mp).powi(2) * w) / norm;
    let purity = 2.0 * PI * grid.integrate(|w| w * w) / (norm * norm);
    Moments { mean_x: off.x + mx, mean_p: off.p + mp, v_x: vx, v_p: vp, purity }
}

/// Second derivative along one axis of a row-major grid: five-point fourth-order stencil
/// in the interior, second-order closures at the two outer points on each side.
fn second_derivative_fd(values: &[f64], n: usize, stride: usize, h: f64, out: &mut [f64]) {
    let f = |i: usize| values[i * stride];
    let inv = 1.0 / (h * h);
    for i in 0..n {
        let d = if i >= 2 && i + 2 < n {
            (-f(i + 2) + 16.0 * f(i + 1) - 30.0 * f(i) + 16.0 * f(i - 1) - f(i - 2)) / 12.0
        } else if i >= 1 && i + 1 < n {
            f(i + 1) - 2.0 * f(i) + f(i - 1)
        } else if i == 0 {
            2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)
        } else {
            2.0 * f(i) - 5.0 * f(i - 1) + 4.0 * f(i - 2) - f(i - 3)
        };
        out[i * stride] += d * inv;
    }
}

fn laplacian_fd(grid: &WignerGrid) -> Vec<f64> {
    let nx = grid.x_axis().count;
    let np = grid.p_axis().count;
    let v = grid.values();
    let mut lap = vec![0.0; v.len()];
    for ip in 0..np {
        second_derivative_fd(&v[ip * nx..], nx, 1, grid.x_axis().step, &mut lap[ip * nx..]);
    }
    for ix in 0..nx {
        second_derivative_fd(&v[ix..], np, nx, grid.p_axis().step, &mut lap[ix..]);
    }
    lap
}

fn wavenumbers(axis: &Axis) -> Vec<f64> {
    let n = axis.count;
    let scale = 2.0 * PI / (n as f64 * axis.step);
    (0..n).map(|j| if j <= n / 2 { j as f64 } else { j as f64 - n as f64 } * scale).collect()
}

/// Spectral Laplacian, treating the grid as one period of a periodic function. Valid
/// when W has decayed to zero at the boundary.
fn laplacian_spectral(grid: &WignerGrid) -> Vec<f64> {
    let nx = grid.x_axis().count;
    let np = grid.p_axis().count;
    let kx = wavenumbers(grid.x_axis());
    let kp = wavenumbers(grid.p_axis());
    let mut planner = FftPlanner::<f64>::new();
    let (fx, ix) = (planner.plan_fft_forward(nx), planner.plan_fft_inverse(nx));
    let (fp, ipl) = (planner.plan_fft_forward(np), planner.plan_fft_inverse(np));
    let mut data: Vec<Complex<f64>> = grid.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in data.chunks_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); np];
    for c in 0..nx {
        for r in 0..np {
            col[r] = data[r * nx + c];
        }
        fp.process(&mut col);
        for r in 0..np {
            data[r * nx + c] = col[r] * -(kx[c] * kx[c] + kp[r] * kp[r]);
        }
    }
    for c in 0..nx {
        for r in 0..np {
            col[r] = data[r * nx + c];
        }
        ipl.process(&mut col);
        for r in 0..np {
            data[r * nx + c] = col[r];
        }
    }
    for row in data.chunks_mut(nx) {
        ix.process(row);
    }
    let scale = 1.0 / (nx * np) as f64;
    data.iter().map(|c| c.re * scale).collect()
}

fn macro_from_laplacian(grid: &WignerGrid, lap: &[f64]) -> (f64, f64) {
    let wx = grid.x_axis().simpson_weights();
    let wp = grid.p_axis().simpson_weights();
    let nx = wx.len();
    let norm = grid.integrate(|w| w);
    let mut kinetic = 0.0;
    let mut square = 0.0;
    for (ip, wpi) in wp.iter().enumerate() {
        for (ix, wxi) in wx.iter().enumerate() {
            let k = ip * nx + ix;
            let w = grid.values()[k] / norm;
            kinetic += wpi * wxi * w * lap[k] / norm;
            square += wpi * wxi * w * w;
        }
    }
    // ℐ = -(π/2)(∫W∇²W + 2∫W²); the second return value sets the scale for relative checks.
    (-(PI / 2.0) * (kinetic + 2.0 * square), PI * square)
}

/// Macroscopicity by the fourth-order finite-difference Laplacian, without the
/// convergence probe.
pub fn macroscopicity_unchecked(grid: &WignerGrid) -> f64 {
    macro_from_laplacian(grid, &laplacian_fd(grid)).0
}

/// Macroscopicity `ℐ = -(π/2) ∫∫ W (∂²_x + ∂²_p + 2) W` with a spectral Laplacian.
pub fn macroscopicity_spectral(grid: &WignerGrid) -> f64 {
    macro_from_laplacian(grid, &laplacian_spectral(grid)).0
}

/// Macroscopicity by finite differences, checked against the same evaluation at twice
/// the step. Changes are measured relative to `max(|ℐ|, π∫W²)` so states with ℐ ≈ 0
/// are still probed on the scale of the terms that cancel.
pub fn macroscopicity(grid: &WignerGrid) -> Result<f64> {
    warn_truncation(grid);
    let (fine, scale) = macro_from_laplacian(grid, &laplacian_fd(grid));
    let coarse_grid = grid.coarsened();
    if coarse_grid.x_axis().count < 5 || coarse_grid.p_axis().count < 5 {
        return Err(Error::Resolution("grid too small for the convergence probe".into()));
    }
    let coarse = macroscopicity_unchecked(&coarse_grid);
    let rel = (fine - coarse).abs() / fine.abs().max(scale);
    if rel > MACRO_CONVERGENCE_TOL {
        return Err(Error::Resolution(format!(
            "macroscopicity changes by {rel:.3e} (relative) when the step doubles; refine the grid"
        )));
    }
    Ok(fine)
}

/// Exact macroscopicity of a Gaussian state: `(tr(Σ⁻¹)/2 - 2) / (8 sqrt(det Σ))`.
pub fn gaussian_macroscopicity(state: &GaussianState) -> f64 {
    let det = state.determinant();
    let tr_inv = (state.v_x + state.v_p) / det;
    (tr_inv / 2.0 - 2.0) / (8.0 * det.sqrt())
}

/// Distance between the two largest local maxima of the marginal along the
/// higher-variance quadrature, in quadrature units.
pub fn fringe_separation(grid: &WignerGrid) -> Result<f64> {
    let m = moments(grid);
    let axis = if m.v_x >= m.v_p { Quadrature::X } else { Quadrature::P };
    let marginal = grid.marginal(axis);
    let mut peaks = marginal.local_maxima();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    if peaks.len() < 2 {
        return Err(Error::Unimodal(format!("marginal along {axis:?} has {} local maximum", peaks.len())));
    }
    Ok((peaks[0].0 - peaks[1].0).abs())
}

/// Lobe separation expressed as a coherent-amplitude distance `|α₁ - α₂|`, using
/// `x = sqrt(2) Re α`.
pub fn amplitude_separation(quadrature_distance: f64) -> f64 {
    quadrature_distance / 2f64.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{gaussian_wigner, GridSpec, PhasePoint};

    fn fock1() -> WignerGrid {
        WignerGrid::from_fn(&GridSpec::square(9.0, 601), |x, p| {
            let r2 = x * x + p * p;
            (2.0 * r2 - 1.0) * (-r2).exp() / PI
        })
    }

    #[test]
    fn single_photon_negativity() {
        // Radial form: ∫|W| = ∫_0^∞ |2u - 1| e^{-u} du = 4 e^{-1/2} - 1 + 1.
        let midpoint = |a: f64, b: f64, n: usize| -> f64 {
            let h = (b - a) / n as f64;
            (0..n)
                .map(|i| {
                    let u = a + (i as f64 + 0.5) * h;
                    (2.0 * u - 1.0).abs() * (-u).exp() * h
                })
                .sum()
        };
        let radial = midpoint(0.0, 0.5, 20_000) + midpoint(0.5, 50.0, 400_000);
        let abs_integral = 4.0 * (-0.5f64).exp() - 1.0;
        assert!((radial - abs_integral).abs() < 1e-8, "{radial}");
        let n = total_negativity(&fock1());
        assert!((n - (abs_integral - 1.0)).abs() < 1e-4, "{n}");
        assert!((n - 0.42612).abs() < 1e-4);
    }

    #[test]
    fn gaussian_scores() {
        let spec = GridSpec::square(10.0, 801);
        let vac = WignerGrid::sample(&gaussian_wigner(GaussianState::vacuum()).unwrap(), &spec);
        assert!(total_negativity(&vac) < 1e-6);
        assert!(macroscopicity(&vac).unwrap().abs() < 1e-6);
        let m = moments(&vac);
        assert!(m.mean_x.abs() < 1e-12 && m.mean_p.abs() < 1e-12);
        assert!((m.v_x - 0.5).abs() < 1e-9 && (m.v_p - 0.5).abs() < 1e-9);
        assert!((m.purity - 1.0).abs() < 1e-9);

        let th = WignerGrid::sample(&gaussian_wigner(GaussianState::thermal(1.0)).unwrap(), &spec);
        let m = moments(&th);
        assert!((m.v_x - 1.5).abs() < 1e-9 && (m.purity - 1.0 / 3.0).abs() < 1e-9);
        let v: f64 = 1.5;
        let expect = 1.0 / (8.0 * v * v) - 1.0 / (4.0 * v);
        assert!((macroscopicity(&th).unwrap() - expect).abs() < 1e-6);
        assert!((gaussian_macroscopicity(&GaussianState::thermal(1.0)) - expect).abs() < 1e-15);

        for r in [0.5, 1.0] {
            let s = GaussianState::squeezed_vacuum(r);
            let g = WignerGrid::sample(&gaussian_wigner(s).unwrap(), &GridSpec::square(12.0, 1201));
            let i = macroscopicity(&g).unwrap();
            assert!((i - r.sinh().powi(2)).abs() < 1e-4, "r={r}: {i}");
            assert!((gaussian_macroscopicity(&s) - r.sinh().powi(2)).abs() < 1e-12);
            let sp = macroscopicity_spectral(&g);
            assert!((sp - i).abs() < 1e-5 * i, "{sp} vs {i}");
        }
    }

    #[test]
    fn macroscopicity_is_frame_independent() {
        let s = GaussianState::thermal(0.5);
        let w = gaussian_wigner(GaussianState { mean: PhasePoint::new(0.0, 400.0), ..s }).unwrap();
        let mut spec = GridSpec::square(9.0, 501);
        spec.frame_offset = PhasePoint::new(0.0, 400.0);
        let g = WignerGrid::sample(&w, &spec);
        assert!((macroscopicity(&g).unwrap() - gaussian_macroscopicity(&s)).abs() < 1e-6);
        assert!((moments(&g).mean_p - 400.0).abs() < 1e-9);
    }

    #[test]
    fn coarse_grid_fails_the_probe() {
        let s = GaussianState::squeezed_vacuum(1.5);
        let g = WignerGrid::sample(&gaussian_wigner(s).unwrap(), &GridSpec::square(14.0, 61));
        assert!(matches!(macroscopicity(&g), Err(Error::Resolution(_))));
    }

    fn even_cat(alpha: f64) -> impl Fn(f64, f64) -> f64 {
        let s = 2f64.sqrt() * alpha;
        let n = 1.0 / (2.0 * (1.0 + (-2.0 * alpha * alpha).exp()));
        move |x, p| {
            let g = |x: f64| (-x * x - p * p).exp() / PI;
            n * (g(x - s) + g(x + s) + 2.0 * (-x * x - p * p).exp() / PI * (2.0 * s * p).cos())
        }
    }

    #[test]
    fn cat_fringe_separation() {
        let alpha = 3.0;
        let spec = GridSpec::square(9.0, 1201);
        let g = WignerGrid::from_fn(&spec, even_cat(alpha));
        let d = fringe_separation(&g).unwrap();
        assert!((d - 2.0 * 2f64.sqrt() * alpha).abs() < spec.x.step, "{d}");
        assert!((amplitude_separation(d) - 2.0 * alpha).abs() < spec.x.step);
        let r = MetricsReport::evaluate(&g).unwrap();
        assert!(r.negativity > 0.1);
        let vac = WignerGrid::sample(&gaussian_wigner(GaussianState::vacuum()).unwrap(), &spec);
        assert!(matches!(fringe_separation(&vac), Err(Error::Unimodal(_))));
        let json = serde_json::to_value(MetricsReport::evaluate(&vac).unwrap()).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["fringe_d", "macroscopicity", "mean_p", "mean_x", "negativity", "purity", "v_p", "v_x"]);
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{optical_lumps, MechanicalInput, QndCoupling};
use crate::error::{Error, Result};
use crate::optical_source::ResourceParams;
use crate::phase_space::special::{binomial, laguerre_assoc_all, ln_laguerre_assoc_neg, GaussHermite};
use crate::phase_space::{GaussianState, GridPolicy, GridSpec, PhasePoint, WignerField, WignerGrid};

/// Which form of the ratio factor `ρ = (2V''_p + 1)/(2V'_p + 1)` enters the double sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedFormVariant {
    /// `ρ^l` on the term carrying `L_l` of the momentum argument. Agrees with direct
    /// numerical conditioning.
    #[default]
    Corrected,
    /// A single factor `ρ` on every term, without the exponent. Kept for comparison.
    AsPrinted,
    /// Sign of the detector prefactor flipped. A deliberately broken build used to check
    /// that validation localizes faults.
    SignFlipped,
}

/// Laguerre arguments beyond this are combined with their envelope in log space.
const LOG_SPACE_ARG: f64 = 500.0;

/// Conditional mechanical state after the QND pulse and a homodyne outcome, in closed form.
///
/// The state is separable into `(m + 1)(m + 2)/2` products of one-dimensional
/// Gaussian-times-Laguerre factors:
/// `W ∝ Σ C[j1][j2] F_{j1}(x) G_{j2}(p)` with `j1 + j2 <= m`.
#[derive(Clone, Debug)]
pub struct ConditionalState {
    m: usize,
    variant: ClosedFormVariant,
    coeffs: Vec<f64>,
    /// `F_j(u) = exp(-ax (u - x_center)²) L_j(-c_x (χ u - p̃)²)` with `u = x - μ_x`.
    ax: f64,
    x_center: f64,
    c_x: f64,
    /// `G_j(v) = exp(-ap v²) L_j(-a_lag_p v²)` with `v = p - Ω - μ_p`.
    ap: f64,
    a_lag_p: f64,
    chi: f64,
    p_tilde_eff: f64,
    omega: f64,
    mech_mean: PhasePoint,
    norm: f64,
    envelope: GaussianState,
}

impl ConditionalState {
    pub fn new(
        resource: &ResourceParams,
        mech: &MechanicalInput,
        coupling: &QndCoupling,
        variant: ClosedFormVariant,
    ) -> Result<Self> {
        resource.validate()?;
        mech.validate()?;
        coupling.validate()?;
        if resource.eta == 0.0 && resource.m > 0 {
            return Err(Error::ImpossibleHeralding("zero-efficiency detector never clicks".into()));
        }
        if resource.t == 1.0 && resource.m > 0 {
            return Err(Error::ImpossibleHeralding("no light reaches the detector at T = 1".into()));
        }
        let chi = coupling.chi;
        if chi == 0.0 {
            log::warn!("chi = 0: the homodyne outcome carries no mechanical information; returning the kicked input");
        }
        let o = optical_lumps(resource);
        let m = resource.m as usize;
        let chi2 = chi * chi;
        let (vxm, vpm) = (mech.v_x, mech.v_p);

        // Written without dividing by χ so that χ → 0 is regular.
        let ax = 1.0 / (2.0 * vxm) + chi2 * o.g[0];
        let p_tilde_eff = coupling.p_tilde - chi * mech.mean.x;
        let x_center = 2.0 * chi * vxm * o.g[0] * p_tilde_eff / (1.0 + 2.0 * chi2 * vxm * o.g[0]);
        let dh = 2.0 * vpm * o.h[1] + chi2;
        let dg = 2.0 * vpm * o.g[1] + chi2;
        let ap = o.g[1] / dg;
        let a_lag_p = o.c[1] * chi2 / (dh * dg);
        let rho = dh / dg;

        let k_sign = match variant {
            ClosedFormVariant::SignFlipped => 2.0,
            _ => -2.0,
        } / (2.0 - resource.eta);
        let mut coeffs = vec![0.0; (m + 1) * (m + 1)];
        for j1 in 0..=m {
            for j2 in 0..=(m - j1) {
                let k = j1 + j2;
                let ratio = match variant {
                    ClosedFormVariant::AsPrinted => rho,
                    _ => rho.powi(j2 as i32),
                };
                coeffs[j1 * (m + 1) + j2] =
                    k_sign.powi(k as i32) * binomial(m, k) / (o.s[0].powi(j1 as i32) * o.s[1].powi(j2 as i32)) * ratio;
            }
        }

        let mut state = Self {
            m,
            variant,
            coeffs,
            ax,
            x_center,
            c_x: o.c[0],
            ap,
            a_lag_p,
            chi,
            p_tilde_eff,
            omega: coupling.omega,
            mech_mean: mech.mean,
            norm: 1.0,
            envelope: GaussianState::vacuum(),
        };
        state.finish_moments()?;
        Ok(state)
    }

    pub fn variant(&self) -> ClosedFormVariant {
        self.variant
    }

    pub fn photons(&self) -> usize {
        self.m
    }

    fn coeff(&self, j1: usize, j2: usize) -> f64 {
        self.coeffs[j1 * (self.m + 1) + j2]
    }

    /// `F_j(u)` for all `j` into `out`.
    fn x_factors(&self, u: f64, out: &mut [f64]) {
        let s = self.chi * u - self.p_tilde_eff;
        let y = self.c_x * s * s;
        let d = u - self.x_center;
        factors(-self.ax * d * d, y, out);
    }

    /// `G_j(v)` for all `j` into `out`.
    fn p_factors(&self, v: f64, out: &mut [f64]) {
        factors(-self.ap * v * v, self.a_lag_p * v * v, out);
    }

    /// Unnormalized value at local coordinates `u = x - μ_x`, `v = p - Ω - μ_p`.
    fn raw_local(&self, u: f64, v: f64, fx: &mut [f64], gp: &mut [f64]) -> f64 {
        self.x_factors(u, fx);
        self.p_factors(v, gp);
        let mut acc = 0.0;
        for (j1, f) in fx.iter().enumerate().take(self.m + 1) {
            let mut inner = 0.0;
            for (j2, g) in gp.iter().enumerate().take(self.m - j1 + 1) {
                inner += self.coeff(j1, j2) * g;
            }
            acc += f * inner;
        }
        acc
    }

    /// Unnormalized value at a lab-frame point.
    pub fn raw_value(&self, x: f64, p: f64) -> f64 {
        let mut fx = vec![0.0; self.m + 1];
        let mut gp = vec![0.0; self.m + 1];
        self.raw_local(x - self.mech_mean.x, (p - self.omega) - self.mech_mean.p, &mut fx, &mut gp)
    }

    /// Normalization and exact moments from one-dimensional Gauss–Hermite integrals.
    fn finish_moments(&mut self) -> Result<()> {
        let m = self.m;
        let rule = GaussHermite::new(m + 8);
        let mut buf = vec![0.0; m + 1];
        let mut x0 = vec![0.0; m + 1];
        let mut x1 = vec![0.0; m + 1];
        let mut x2 = vec![0.0; m + 1];
        let var_x = 0.5 / self.ax;
        let sx = (2.0 * var_x).sqrt();
        for (t, w) in rule.nodes.iter().zip(&rule.scaled_weights) {
            let u = self.x_center + sx * t;
            self.x_factors(u, &mut buf);
            for j in 0..=m {
                let f = w * sx * buf[j];
                x0[j] += f;
                x1[j] += f * u;
                x2[j] += f * u * u;
            }
        }
        let mut p0 = vec![0.0; m + 1];
        let mut p2 = vec![0.0; m + 1];
        let sp = (1.0 / self.ap).sqrt();
        for (t, w) in rule.nodes.iter().zip(&rule.scaled_weights) {
            let v = sp * t;
            self.p_factors(v, &mut buf);
            for j in 0..=m {
                let f = w * sp * buf[j];
                p0[j] += f;
                p2[j] += f * v * v;
            }
        }
        let (mut n, mut mx, mut mxx, mut mpp) = (0.0, 0.0, 0.0, 0.0);
        for j1 in 0..=m {
            for j2 in 0..=(m - j1) {
                let c = self.coeff(j1, j2);
                n += c * x0[j1] * p0[j2];
                mx += c * x1[j1] * p0[j2];
                mxx += c * x2[j1] * p0[j2];
                mpp += c * x0[j1] * p2[j2];
            }
        }
        // The unnormalized form carries an overall sign (-1)^m-like factor; only a zero norm is fatal.
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidState(format!("conditional state has degenerate norm {n:.3e}")));
        }
        let mean_u = mx / n;
        let v_x = mxx / n - mean_u * mean_u;
        let v_p = mpp / n;
        if !(v_x > 0.0 && v_p > 0.0) {
            return Err(Error::InvalidState(format!(
                "conditional state moments are not positive (v_x = {v_x:.3e}, v_p = {v_p:.3e})"
            )));
        }
        self.norm = n;
        self.envelope = GaussianState {
            mean: PhasePoint::new(self.mech_mean.x + mean_u, self.omega + self.mech_mean.p),
            v_x,
            v_p,
            cov_xp: 0.0,
        };
        Ok(())
    }

    /// Sample on `spec` and normalize by the grid integral.
    ///
    /// The frame offset is subtracted before local coordinates are added, so grids whose
    /// frame tracks `Ω` are bitwise independent of `Ω`.
    pub fn sample(&self, spec: &GridSpec) -> Result<WignerGrid> {
        let m = self.m;
        let u0 = spec.frame_offset.x - self.mech_mean.x;
        let v0 = (spec.frame_offset.p - self.omega) - self.mech_mean.p;
        let nx = spec.x.count;
        let mut fx = vec![0.0; nx * (m + 1)];
        for ix in 0..nx {
            self.x_factors(u0 + spec.x.coord(ix), &mut fx[ix * (m + 1)..(ix + 1) * (m + 1)]);
        }
        let values: Vec<f64> = (0..spec.p.count)
            .into_par_iter()
            .flat_map_iter(|ip| {
                let mut gp = vec![0.0; m + 1];
                self.p_factors(v0 + spec.p.coord(ip), &mut gp);
                let h: Vec<f64> =
                    (0..=m).map(|j1| (0..=(m - j1)).map(|j2| self.coeff(j1, j2) * gp[j2]).sum()).collect();
                let fx = &fx;
                (0..nx).map(move |ix| {
                    let f = &fx[ix * (m + 1)..(ix + 1) * (m + 1)];
                    f.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() / self.norm
                })
            })
            .collect();
        let grid = WignerGrid::from_values(spec, values)?;
        grid.normalized()
    }

    /// Gaussian envelope used to size grids: the exact first and second moments.
    pub fn moments(&self) -> GaussianState {
        self.envelope
    }

    /// Grid from `policy` around the exact moments. Lobes separated along one axis put
    /// fringes on the other; the separation is bounded by twice the standard deviation
    /// along the lobe axis, which sets the fringe step cap.
    pub fn grid_spec(&self, policy: &GridPolicy) -> GridSpec {
        let env = &self.envelope;
        let fringe = (self.m > 0).then(|| PhasePoint::new(2.0 * env.v_p.sqrt(), 2.0 * env.v_x.sqrt()));
        policy.spec_for(env, self.m as u32, fringe)
    }

    /// Analytic normalization constant of [`raw_value`](Self::raw_value).
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Density of the rotated quadrature `s = x cos θ + p sin θ`, convolved with a
    /// centred Gaussian of variance `noise_var` (pass 0 for the bare marginal).
    ///
    /// Along any line, and again across `s`, the integrand is a Gaussian times a
    /// polynomial of degree `2m`, so the nested Gauss–Hermite sums are exact.
    pub fn quadrature_density(&self, theta: f64, s: f64, noise_var: f64) -> f64 {
        let (sn, c) = theta.sin_cos();
        let shift = self.mech_mean.x * c + (self.omega + self.mech_mean.p) * sn;
        let rule = GaussHermite::new(2 * self.m + 4);
        let mut fx = vec![0.0; self.m + 1];
        let mut gp = vec![0.0; self.m + 1];
        let a = self.ax * sn * sn + self.ap * c * c;
        let mut line = |s_loc: f64| {
            let t0 = (self.ax * sn * (s_loc * c - self.x_center) - self.ap * c * sn * s_loc) / a;
            rule.integrate_real_line(t0, 0.5 / a, |t| {
                self.raw_local(s_loc * c - t * sn, s_loc * sn + t * c, &mut fx, &mut gp)
            })
        };
        let s_loc = s - shift;
        let raw = if noise_var > 0.0 {
            let mean = self.x_center * c;
            let var = 0.5 * c * c / self.ax + 0.5 * sn * sn / self.ap;
            let prec = 1.0 / var + 1.0 / noise_var;
            let center = (mean / var + s_loc / noise_var) / prec;
            let g = 1.0 / (2.0 * std::f64::consts::PI * noise_var).sqrt();
            rule.integrate_real_line(center, 1.0 / prec, |u| {
                line(u) * g * (-(s_loc - u).powi(2) / (2.0 * noise_var)).exp()
            })
        } else {
            line(s_loc)
        };
        raw / self.norm
    }
}

/// `out[j] = exp(ln_env) · L_j^{-1/2}(-y)`; log-space combination for large `y`.
fn factors(ln_env: f64, y: f64, out: &mut [f64]) {
    if y <= LOG_SPACE_ARG {
        laguerre_assoc_all(-0.5, -y, out);
        let e = ln_env.exp();
        out.iter_mut().for_each(|v| *v *= e);
    } else {
        for (j, v) in out.iter_mut().enumerate() {
            *v = (ln_env + ln_laguerre_assoc_neg(j, -0.5, y)).exp();
        }
    }
}

impl WignerField for ConditionalState {
    fn value(&self, x: f64, p: f64) -> f64 {
        self.raw_value(x, p) / self.norm
    }

    fn envelope(&self) -> GaussianState {
        self.envelope
    }
}

/// Unnormalized closed-form value at one lab-frame point.
pub fn condition_closed_form(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    coupling: &QndCoupling,
    point: PhasePoint,
) -> Result<f64> {
    Ok(ConditionalState::new(resource, mech, coupling, ClosedFormVariant::Corrected)?.raw_value(point.x, point.p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_cat(m: u32) -> (ResourceParams, MechanicalInput, QndCoupling) {
        (
            ResourceParams::new(1.5, 0.98, 0.95, m),
            MechanicalInput::thermal(1.0).unwrap(),
            QndCoupling::new(1.0, 400.0, 0.0).unwrap(),
        )
    }

    #[test]
    fn m0_is_gaussian_with_conditioned_variance() {
        let (r, mech, c) = reference_cat(0);
        let s = ConditionalState::new(&r, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        let env = s.moments();
        let (_, vp_l) = r.input_variances();
        // m = 0 at T < 1 still sees the vacuum-projected tap; compare against the
        // heralded optical variance, not the bare squeezed one.
        assert!(env.v_x < mech.v_x);
        assert!(env.v_p > mech.v_p);
        assert!(vp_l < 0.03);
        assert_eq!(env.mean.p, 400.0);
    }

    #[test]
    fn omega_is_a_pure_translation() {
        let (r, mech, c) = reference_cat(3);
        let s400 = ConditionalState::new(&r, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        let s0 =
            ConditionalState::new(&r, &mech, &QndCoupling::new(1.0, 0.0, 0.0).unwrap(), ClosedFormVariant::Corrected)
                .unwrap();
        for (x, p) in [(0.1, 400.3), (-1.7, 402.2), (0.0, 395.9)] {
            assert_eq!(s400.raw_value(x, p), s0.raw_value(x, p - 400.0));
        }
        let env0 = s0.moments();
        let spec0 = GridSpec::around(&env0, 8.0, 101);
        let mut spec400 = spec0;
        spec400.frame_offset.p += 400.0;
        let g0 = s0.sample(&spec0).unwrap();
        let g400 = s400.sample(&spec400).unwrap();
        assert_eq!(g0.values(), g400.values());
    }

    #[test]
    fn grid_sample_matches_pointwise_and_is_normalized() {
        let (r, mech, c) = reference_cat(2);
        let s = ConditionalState::new(&r, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        let spec = GridSpec::around(&s.moments(), 12.0, 201);
        let g = s.sample(&spec).unwrap();
        assert!((g.integrate(|v| v) - 1.0).abs() < 1e-12);
        let lab = spec.lab(57, 140);
        let direct = s.value(lab.x, lab.p);
        assert!((g.at(57, 140) - direct).abs() < 1e-9 * g.peak_abs());
    }

    #[test]
    fn variants_differ_only_when_ratio_matters() {
        let (r, mech, c) = reference_cat(3);
        let a = ConditionalState::new(&r, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        let b = ConditionalState::new(&r, &mech, &c, ClosedFormVariant::AsPrinted).unwrap();
        let d = (a.value(0.0, 401.0) - b.value(0.0, 401.0)).abs();
        assert!(d > 1e-6);
        let (r0, ..) = reference_cat(0);
        let a0 = ConditionalState::new(&r0, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        let b0 = ConditionalState::new(&r0, &mech, &c, ClosedFormVariant::AsPrinted).unwrap();
        assert!((a0.value(0.2, 399.0) - b0.value(0.2, 399.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_chi_returns_kicked_input() {
        let (r, mech, _) = reference_cat(2);
        let c = QndCoupling::new(0.0, 5.0, 0.0).unwrap();
        let s = ConditionalState::new(&r, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        let env = s.moments();
        assert!((env.v_x - 1.5).abs() < 1e-12 && (env.v_p - 1.5).abs() < 1e-12);
        let g = crate::phase_space::gaussian_wigner(GaussianState::new(PhasePoint::new(0.0, 5.0), 1.5, 1.5).unwrap())
            .unwrap();
        assert!((s.value(0.4, 4.0) - g.value(0.4, 4.0)).abs() < 1e-14);
    }

    #[test]
    fn huge_arguments_stay_finite() {
        let (r, mech, c) = reference_cat(6);
        let s = ConditionalState::new(&r, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        for x in [30.0, 300.0, 3e4] {
            let v = s.raw_value(x, 400.0 + x);
            assert!(v.is_finite() && v >= 0.0 || v.abs() < 1e-300);
        }
    }

    #[test]
    fn quadrature_density_matches_grid_marginals() {
        let (res, mech, cpl) = reference_cat(2);
        let st = ConditionalState::new(&res, &mech, &cpl, ClosedFormVariant::Corrected).unwrap();
        let grid = st.sample(&st.grid_spec(&GridPolicy::default())).unwrap();
        for (theta, axis) in
            [(0.0, crate::phase_space::Quadrature::X), (std::f64::consts::FRAC_PI_2, crate::phase_space::Quadrature::P)]
        {
            let marg = grid.marginal(axis);
            let peak = marg.density.iter().cloned().fold(0.0, f64::max);
            for i in (0..marg.density.len()).step_by(37) {
                let d = st.quadrature_density(theta, marg.lab_coord(i), 0.0);
                assert!((d - marg.density[i]).abs() < 1e-7 * peak, "theta {theta} i {i}: {d} vs {}", marg.density[i]);
            }
        }
        // Normalized at an oblique angle, with and without readout noise.
        let rule = GaussHermite::new(80);
        for noise in [0.0, 0.3] {
            let env = st.moments();
            let th = 0.7f64;
            let mean = env.mean.x * th.cos() + env.mean.p * th.sin();
            let var = env.v_x * th.cos().powi(2) + env.v_p * th.sin().powi(2) + noise;
            let total = rule.integrate_real_line(mean, var, |s| st.quadrature_density(th, s, noise));
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }
}

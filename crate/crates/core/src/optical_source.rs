//! Heralded photon-subtracted squeezed vacuum (PSSV): squeezed light, a tap beam
//! splitter and a photon-number-resolving detector with efficiency `eta`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::special::{laguerre_assoc, laguerre_assoc_all, GaussHermite};
use crate::phase_space::{GaussianState, PhasePoint, Quadrature, WignerField};

/// Optical resource and drive parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceParams {
    /// Squeezing parameter.
    pub r: f64,
    /// Tap beam-splitter transmittivity (intensity); amplitude transmission is `sqrt(t)`.
    pub t: f64,
    /// Detector efficiency.
    pub eta: f64,
    /// Heralded photon count.
    pub m: u32,
    /// Mean drive photon number.
    #[serde(default)]
    pub n_p: f64,
    /// Standard deviation of the drive photon number.
    #[serde(default)]
    pub sigma_n: f64,
    /// Quadrature carrying the reduced variance. `p` is phase squeezing.
    #[serde(default = "default_squeezed")]
    pub squeezed_quadrature: Quadrature,
}

fn default_squeezed() -> Quadrature {
    Quadrature::P
}

impl ResourceParams {
    pub fn new(r: f64, t: f64, eta: f64, m: u32) -> Self {
        Self { r, t, eta, m, n_p: 0.0, sigma_n: 0.0, squeezed_quadrature: Quadrature::P }
    }

    pub fn with_drive(mut self, n_p: f64, sigma_n: f64) -> Self {
        self.n_p = n_p;
        self.sigma_n = sigma_n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !self.r.is_finite() || self.r < 0.0 {
            return bad("squeezing r must be finite and >= 0");
        }
        if !(self.t > 0.0 && self.t <= 1.0) {
            return bad("tap transmittivity must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("detector efficiency must lie in [0, 1]");
        }
        if self.m > 64 {
            return bad("photon count m must be <= 64");
        }
        if !(self.n_p >= 0.0 && self.n_p.is_finite()) || !(self.sigma_n >= 0.0 && self.sigma_n.is_finite()) {
            return bad("N_p and sigma_N must be finite and >= 0");
        }
        Ok(())
    }

    /// Quadrature variances `(V_x, V_p)` of the squeezed input.
    pub fn input_variances(&self) -> (f64, f64) {
        let (big, small) = ((2.0 * self.r).exp() / 2.0, (-2.0 * self.r).exp() / 2.0);
        match self.squeezed_quadrature {
            Quadrature::P => (big, small),
            Quadrature::X => (small, big),
        }
    }

    pub fn squeezed_input(&self) -> GaussianState {
        let (v_x, v_p) = self.input_variances();
        GaussianState { mean: PhasePoint::ORIGIN, v_x, v_p, cov_xp: 0.0 }
    }
}

/// Wigner kernel of the `m`-click POVM element of a detector with efficiency `eta`.
///
/// Not a normalized Wigner function: `2π ∫ W_ρ W_D` is the click probability.
pub fn detector_wigner(m: u32, eta: f64, point: PhasePoint) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("detector efficiency {eta} outside [0, 1]")));
    }
    if eta == 0.0 && m > 0 {
        return Err(Error::ImpossibleHeralding("zero-efficiency detector never clicks".into()));
    }
    let rho2 = point.x * point.x + point.p * point.p;
    let lag = laguerre_assoc(m as usize, 0.0, 2.0 * rho2 / (2.0 - eta));
    let gauss = eta * rho2 / (2.0 - eta);
    let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
    if lag == 0.0 {
        return Ok(0.0);
    }
    // Log-space combination keeps large-radius values finite.
    let ln_pref = if m == 0 { 0.0 } else { m as f64 * eta.ln() } - (1.0 + m as f64) * (2.0 - eta).ln() - PI.ln();
    let ln_mag = ln_pref + lag.abs().ln() - gauss;
    Ok(sign * lag.signum() * ln_mag.exp())
}

/// Per-quadrature Gaussian kernel of the tap integral: after beam splitting and the
/// detector's Gaussian factor, the integrand in `(q, q')` is `exp(-(α q² + β q'² + γ q q'))`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct TapKernel {
    alpha: f64,
    beta: f64,
    gamma: f64,
    /// `α - γ²/(4β)`: envelope of the output quadrature.
    out_decay: f64,
    /// `β - γ²/(4α)`: decay in `q'` once `q` is integrated out.
    marg_decay: f64,
}

impl TapKernel {
    fn new(v: f64, a: f64, b: f64, eps: f64) -> Self {
        let alpha = a * a / (2.0 * v) + b * b;
        let beta = b * b / (2.0 * v) + a * a + eps;
        let gamma = 2.0 * a * b - a * b / v;
        Self {
            alpha,
            beta,
            gamma,
            out_decay: alpha - gamma * gamma / (4.0 * beta),
            marg_decay: beta - gamma * gamma / (4.0 * alpha),
        }
    }
}

/// The conditional PSSV Wigner function, normalized.
///
/// The detector Laguerre polynomial is split over the two quadratures with the addition
/// theorem `L_m(u + v) = Σ_k L_k^{-1/2}(u) L_{m-k}^{-1/2}(v)`, so each point costs two
/// short 1D Gauss–Hermite sums that are exact for the polynomial degrees involved.
#[derive(Clone, Debug)]
pub struct PssvField {
    params: ResourceParams,
    kx: TapKernel,
    kp: TapKernel,
    lag_scale: f64,
    rule: GaussHermite,
    /// Prefactor of the raw integral (Gaussian normalizations, detector prefactor).
    raw_pref: f64,
    /// Value of the raw integral over all (x, p).
    raw_total: f64,
    /// `∫ dx I_k(x)` per Laguerre order, for the p-marginal.
    x_integrals: Vec<f64>,
    envelope: GaussianState,
}

impl PssvField {
    fn new(params: ResourceParams) -> Result<Self> {
        params.validate()?;
        let m = params.m;
        if params.eta == 0.0 && m > 0 {
            return Err(Error::ImpossibleHeralding("zero-efficiency detector never clicks".into()));
        }
        if params.t == 1.0 && m > 0 {
            return Err(Error::ImpossibleHeralding("no light reaches the detector at T = 1".into()));
        }
        let (vx, vp) = params.input_variances();
        let a = params.t.sqrt();
        let b = (1.0 - params.t).sqrt();
        let eta = params.eta;
        let eps = eta / (2.0 - eta);
        let kx = TapKernel::new(vx, a, b, eps);
        let kp = TapKernel::new(vp, a, b, eps);
        let sign = if m % 2 == 1 { -1.0 } else { 1.0 };
        let det = if m == 0 { 1.0 } else { eta.powi(m as i32) } / (2.0 - eta).powi(m as i32 + 1);
        let raw_pref = sign * det / (2.0 * PI * (vx * vp).sqrt()) / (PI * PI);
        let mut field = Self {
            params,
            kx,
            kp,
            lag_scale: 2.0 / (2.0 - eta),
            rule: GaussHermite::new(m as usize + 4),
            raw_pref,
            raw_total: 0.0,
            x_integrals: Vec::new(),
            envelope: GaussianState::vacuum(),
        };
        let (j0x, j2x) = field.integrated_moments(&kx);
        let (j0p, j2p) = field.integrated_moments(&kp);
        let mu = m as usize;
        let mut total = 0.0;
        let mut sx = 0.0;
        let mut sp = 0.0;
        for k in 0..=mu {
            total += j0x[k] * j0p[mu - k];
            sx += j2x[k] * j0p[mu - k];
            sp += j0x[k] * j2p[mu - k];
        }
        field.raw_total = raw_pref * total;
        field.x_integrals = j0x;
        if !(field.raw_total > 0.0) || !field.raw_total.is_finite() {
            return Err(Error::ImpossibleHeralding(format!(
                "herald probability {:.3e} is not positive",
                2.0 * PI * field.raw_total
            )));
        }
        field.envelope = GaussianState { mean: PhasePoint::ORIGIN, v_x: sx / total, v_p: sp / total, cov_xp: 0.0 };
        Ok(field)
    }

    pub fn params(&self) -> &ResourceParams {
        &self.params
    }

    /// `(∫ dq dq' ..., ∫ dq dq' q² ...)` of the per-quadrature integrand for every Laguerre order.
    fn integrated_moments(&self, k: &TapKernel) -> (Vec<f64>, Vec<f64>) {
        let m = self.params.m as usize;
        let mut j0 = vec![0.0; m + 1];
        let mut j2 = vec![0.0; m + 1];
        let mut lag = vec![0.0; m + 1];
        let root = (PI / k.alpha).sqrt();
        let var = 1.0 / (2.0 * k.marg_decay);
        let scale = (2.0 * var).sqrt();
        for (t, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let qp = scale * t;
            laguerre_assoc_all(-0.5, self.lag_scale * qp * qp, &mut lag);
            let second = 1.0 / (2.0 * k.alpha) + (k.gamma * qp / (2.0 * k.alpha)).powi(2);
            for j in 0..=m {
                j0[j] += w * scale * root * lag[j];
                j2[j] += w * scale * root * lag[j] * second;
            }
        }
        (j0, j2)
    }

    /// `I_j(q) = e^{-α q²} ∫ dq' e^{-β q'² - γ q q'} L_j^{-1/2}(κ q'²)` for j = 0..=m.
    ///
    /// Mirror nodes are summed in pairs, so `I_j(-q) = I_j(q)` bit for bit.
    fn quadrature_factors(&self, k: &TapKernel, q: f64, out: &mut [f64], lag: &mut [f64], lag2: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let c = -k.gamma * q / (2.0 * k.beta);
        let s = 1.0 / k.beta.sqrt();
        let n = self.rule.len();
        for i in 0..n / 2 {
            let t = self.rule.nodes[n - 1 - i];
            let a = c + s * t;
            let b = c - s * t;
            laguerre_assoc_all(-0.5, self.lag_scale * a * a, lag);
            laguerre_assoc_all(-0.5, self.lag_scale * b * b, lag2);
            let w = self.rule.weights[i];
            for j in 0..out.len() {
                out[j] += w * (lag[j] + lag2[j]);
            }
        }
        if n % 2 == 1 {
            laguerre_assoc_all(-0.5, self.lag_scale * c * c, lag);
            let w = self.rule.weights[n / 2];
            for j in 0..out.len() {
                out[j] += w * lag[j];
            }
        }
        let env = (-k.out_decay * q * q).exp() * s;
        out.iter_mut().for_each(|v| *v *= env);
    }

    /// Raw tap integral at one point (before normalization).
    fn raw_value(&self, x: f64, p: f64) -> f64 {
        let m = self.params.m as usize;
        let mut ix = vec![0.0; m + 1];
        let mut ip = vec![0.0; m + 1];
        let mut lag = vec![0.0; m + 1];
        let mut lag2 = vec![0.0; m + 1];
        self.quadrature_factors(&self.kx, x, &mut ix, &mut lag, &mut lag2);
        self.quadrature_factors(&self.kp, p, &mut ip, &mut lag, &mut lag2);
        let mut acc = 0.0;
        for k in 0..=m {
            acc += ix[k] * ip[m - k];
        }
        self.raw_pref * acc
    }

    /// Normalized p-marginal `∫ dx W(x, p)`.
    pub fn marginal_p(&self, p: f64) -> f64 {
        let m = self.params.m as usize;
        let j0x = &self.x_integrals;
        let mut ip = vec![0.0; m + 1];
        let mut lag = vec![0.0; m + 1];
        let mut lag2 = vec![0.0; m + 1];
        self.quadrature_factors(&self.kp, p, &mut ip, &mut lag, &mut lag2);
        let acc: f64 = (0..=m).map(|k| j0x[k] * ip[m - k]).sum();
        self.raw_pref * acc / self.raw_total
    }

    /// Direct evaluation of the tap double integral with the full detector kernel
    /// (no addition theorem), on a tensor Gauss–Hermite rule. Used as a cross-check.
    pub fn value_direct(&self, x: f64, p: f64) -> f64 {
        let (vx, vp) = self.params.input_variances();
        let a = self.params.t.sqrt();
        let b = (1.0 - self.params.t).sqrt();
        let ws = |u: f64, v: f64| (-u * u / (2.0 * vx) - v * v / (2.0 * vp)).exp() / (2.0 * PI * (vx * vp).sqrt());
        let wv = |u: f64, v: f64| (-u * u - v * v).exp() / PI;
        let rule = GaussHermite::new(self.params.m as usize + 16);
        let cx = -self.kx.gamma * x / (2.0 * self.kx.beta);
        let cp = -self.kp.gamma * p / (2.0 * self.kp.beta);
        let raw = rule.integrate_real_line(cx, 0.5 / self.kx.beta, |xp| {
            rule.integrate_real_line(cp, 0.5 / self.kp.beta, |pp| {
                let d = detector_wigner(self.params.m, self.params.eta, PhasePoint::new(xp, pp)).unwrap_or(0.0);
                ws(a * x - b * xp, a * p - b * pp) * wv(b * x + a * xp, b * p + a * pp) * d
            })
        });
        raw / self.raw_total
    }
}

impl WignerField for PssvField {
    fn value(&self, x: f64, p: f64) -> f64 {
        self.raw_value(x, p) / self.raw_total
    }

    /// Exact second moments of the heralded state (mean is the origin).
    fn envelope(&self) -> GaussianState {
        self.envelope
    }
}

/// Heralded optical resource: the conditional Wigner function and its herald probability.
#[derive(Clone, Debug)]
pub struct HeraldedState {
    pub field: PssvField,
    pub herald_probability: f64,
}

pub fn pssv_state(params: ResourceParams) -> Result<HeraldedState> {
    let field = PssvField::new(params)?;
    let herald_probability = 2.0 * PI * field.raw_total;
    if herald_probability > 1.0 + 1e-9 {
        return Err(Error::InvalidState(format!("herald probability {herald_probability} exceeds 1")));
    }
    Ok(HeraldedState { field, herald_probability })
}

/// Classical drive on top of which the quantum fluctuations ride.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveDescription {
    pub n_p: f64,
    pub sigma_n: f64,
    /// Real amplitude `sqrt(N_p)` of the pulse envelope peak.
    pub amplitude: f64,
}

pub fn displaced_drive(params: &ResourceParams) -> DriveDescription {
    DriveDescription { n_p: params.n_p, sigma_n: params.sigma_n, amplitude: params.n_p.max(0.0).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{GridSpec, WignerGrid};

    #[test]
    fn detector_kernel_limits() {
        let v = detector_wigner(0, 1.0, PhasePoint::new(0.3, -0.4)).unwrap();
        assert!((v - (-(0.25f64)).exp() / PI).abs() < 1e-15);
        assert!((detector_wigner(1, 1.0, PhasePoint::ORIGIN).unwrap() + 1.0 / PI).abs() < 1e-15);
        assert!(matches!(detector_wigner(2, 0.0, PhasePoint::ORIGIN), Err(Error::ImpossibleHeralding(_))));
        assert!(detector_wigner(40, 0.9, PhasePoint::new(30.0, 0.0)).unwrap().is_finite());
    }

    #[test]
    fn identity_and_vacuum_cases() {
        let s = pssv_state(ResourceParams::new(1.5, 1.0, 0.7, 0)).unwrap();
        assert!((s.herald_probability - 1.0).abs() < 1e-12);
        let sq = crate::phase_space::gaussian_wigner(GaussianState::squeezed_vacuum(1.5)).unwrap();
        for (x, p) in [(0.0, 0.0), (2.0, 0.1), (-4.0, -0.05)] {
            assert!((s.field.value(x, p) - sq.value(x, p)).abs() < 1e-12);
        }
        let v = pssv_state(ResourceParams::new(0.0, 0.9, 0.95, 0)).unwrap();
        assert!((v.field.value(0.0, 0.0) - 1.0 / PI).abs() < 1e-13);
        assert!((v.field.envelope().v_x - 0.5).abs() < 1e-13);
    }

    #[test]
    fn rejects_dark_tap() {
        assert!(matches!(pssv_state(ResourceParams::new(1.0, 1.0, 0.9, 1)), Err(Error::ImpossibleHeralding(_))));
        assert!(matches!(pssv_state(ResourceParams::new(1.0, 0.9, 0.0, 2)), Err(Error::ImpossibleHeralding(_))));
    }

    #[test]
    fn separable_matches_direct_integral() {
        let s = pssv_state(ResourceParams::new(1.2, 0.95, 0.9, 3)).unwrap();
        for (x, p) in [(0.0, 0.0), (1.3, 0.2), (-2.5, -0.4), (4.0, 0.05)] {
            let a = s.field.value(x, p);
            let b = s.field.value_direct(x, p);
            assert!((a - b).abs() < 1e-12, "({x},{p}): {a} vs {b}");
        }
    }

    #[test]
    fn normalized_with_exact_moments_and_parity() {
        let s = pssv_state(ResourceParams::new(1.5, 0.98, 0.95, 2)).unwrap();
        let env = s.field.envelope();
        let spec = GridSpec::around(&env, 12.0, 401);
        let g = WignerGrid::sample(&s.field, &spec);
        assert!((g.integrate(|v| v) - 1.0).abs() < 1e-9);
        let vx = g.integrate_with(|x, _, w| x * x * w);
        assert!((vx - env.v_x).abs() < 1e-8 * env.v_x);
        assert!(s.field.value(0.0, 0.0) > 0.0);
        for (x, p) in [(0.7, 0.11), (3.0, -0.2)] {
            assert_eq!(s.field.value(x, p), s.field.value(-x, -p));
        }
        assert!(g.peak_abs() <= 1.0 / PI + 1e-9);
    }

    #[test]
    fn marginal_matches_grid() {
        let s = pssv_state(ResourceParams::new(1.0, 0.9, 0.95, 1)).unwrap();
        let spec = GridSpec::around(&s.field.envelope(), 14.0, 601);
        let g = WignerGrid::sample(&s.field, &spec);
        let m = g.marginal(Quadrature::P);
        for i in [200, 300, 350] {
            assert!((m.density[i] - s.field.marginal_p(m.lab_coord(i))).abs() < 1e-9);
        }
    }
}

//! Pulsed QND interaction between the optical pulse and the mechanical mode, and
//! the state conditioned on a homodyne outcome of the optical phase quadrature.
//!
//! Mode ordering in four-dimensional objects is `(x_L, p_L, x_M, p_M)`.

mod closed_form;
mod numeric;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optical_source::ResourceParams;
use crate::phase_space::{GaussianState, PhasePoint};

pub use closed_form::{condition_closed_form, ClosedFormVariant, ConditionalState};
pub use numeric::{condition_numeric, gaussian_condition, outcome_density, NumericConditioning};

/// QND strength, back-action kick and the conditioning outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QndCoupling {
    pub chi: f64,
    pub omega: f64,
    #[serde(default)]
    pub p_tilde: f64,
}

impl QndCoupling {
    pub fn new(chi: f64, omega: f64, p_tilde: f64) -> Result<Self> {
        let c = Self { chi, omega, p_tilde };
        c.validate()?;
        Ok(c)
    }

    /// `Ω = χ sqrt(N_p / 2)` for a pulse of `n_p` photons.
    pub fn from_chi_and_photons(chi: f64, n_p: f64) -> Result<Self> {
        if !(n_p >= 0.0) {
            return Err(Error::InvalidParameter(format!("photon number {n_p} must be >= 0")));
        }
        Self::new(chi, chi * (n_p / 2.0).sqrt(), 0.0)
    }

    pub fn with_outcome(mut self, p_tilde: f64) -> Self {
        self.p_tilde = p_tilde;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return Err(Error::InvalidParameter(format!("chi = {} must be finite and >= 0", self.chi)));
        }
        if !self.omega.is_finite() || !self.p_tilde.is_finite() {
            return Err(Error::InvalidParameter("omega and p_tilde must be finite".into()));
        }
        Ok(())
    }

    /// Whether `omega` agrees with `chi sqrt(N_p/2)` to relative `tol`.
    pub fn consistent_with_photons(&self, n_p: f64, tol: f64) -> bool {
        let expect = self.chi * (n_p / 2.0).sqrt();
        (self.omega - expect).abs() <= tol * expect.abs().max(1e-300)
    }
}

/// `χ = 4 (g0/κ) sqrt(N_p)` and `Ω = χ sqrt(N_p/2)`.
pub fn coupling_from_drive(g0_over_kappa: f64, n_p: f64) -> Result<QndCoupling> {
    if !(g0_over_kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("g0/kappa = {g0_over_kappa} must be > 0")));
    }
    if !(n_p >= 0.0) {
        return Err(Error::InvalidParameter(format!("photon number {n_p} must be >= 0")));
    }
    let chi = 4.0 * g0_over_kappa * n_p.sqrt();
    QndCoupling::from_chi_and_photons(chi, n_p)
}

/// Linear input-output map `r_out = M r_in + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QndMap {
    pub matrix: Matrix4<f64>,
    pub offset: Vector4<f64>,
}

/// Symplectic form for `(x_L, p_L, x_M, p_M)`.
pub fn symplectic_form() -> Matrix4<f64> {
    let mut j = Matrix4::zeros();
    j[(0, 1)] = 1.0;
    j[(1, 0)] = -1.0;
    j[(2, 3)] = 1.0;
    j[(3, 2)] = -1.0;
    j
}

pub fn qnd_map(chi: f64, omega: f64) -> Result<QndMap> {
    if !(chi >= 0.0) || !chi.is_finite() {
        return Err(Error::InvalidParameter(format!("chi = {chi} must be finite and >= 0")));
    }
    let mut matrix = Matrix4::identity();
    matrix[(1, 2)] = chi;
    matrix[(3, 0)] = chi;
    Ok(QndMap { matrix, offset: Vector4::new(0.0, 0.0, 0.0, omega) })
}

impl QndMap {
    /// Largest entry of `MᵀJM - J`.
    pub fn symplectic_defect(&self) -> f64 {
        let j = symplectic_form();
        (self.matrix.transpose() * j * self.matrix - j).amax()
    }

    pub fn apply(&self, v: Vector4<f64>) -> Vector4<f64> {
        self.matrix * v + self.offset
    }
}

/// Pre-cooled mechanical input: a displaced Gaussian with independent quadrature variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanicalInput {
    pub v_x: f64,
    pub v_p: f64,
    #[serde(default)]
    pub mean: PhasePoint,
}

impl MechanicalInput {
    pub fn new(v_x: f64, v_p: f64) -> Result<Self> {
        let s = Self { v_x, v_p, mean: PhasePoint::ORIGIN };
        s.validate()?;
        Ok(s)
    }

    pub fn thermal(n_bar: f64) -> Result<Self> {
        if !(n_bar >= 0.0) {
            return Err(Error::InvalidState(format!("occupation {n_bar} must be >= 0")));
        }
        Self::new(n_bar + 0.5, n_bar + 0.5)
    }

    pub fn with_mean(mut self, mean: PhasePoint) -> Self {
        self.mean = mean;
        self
    }

    /// Positive variances obeying `V_x V_p >= 1/4`. A per-quadrature `>= 1/2` bound would
    /// reject the squeezed states that pre-cooling produces.
    pub fn validate(&self) -> Result<()> {
        if !(self.v_x > 0.0 && self.v_p > 0.0) || !self.v_x.is_finite() || !self.v_p.is_finite() {
            return Err(Error::InvalidState(format!(
                "mechanical variances must be positive and finite (v_x = {}, v_p = {})",
                self.v_x, self.v_p
            )));
        }
        if self.v_x * self.v_p < 0.25 * (1.0 - 1e-9) {
            return Err(Error::InvalidState(format!(
                "mechanical input violates the uncertainty bound: v_x v_p = {:.6e} < 1/4",
                self.v_x * self.v_p
            )));
        }
        Ok(())
    }

    pub fn as_gaussian(&self) -> GaussianState {
        GaussianState { mean: self.mean, v_x: self.v_x, v_p: self.v_p, cov_xp: 0.0 }
    }
}

/// Lumped parameters of the closed-form conditional state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LumpedParams {
    pub s_x: f64,
    pub s_p: f64,
    pub c_x: f64,
    pub c_p: f64,
    pub v_xm_chi: f64,
    pub v_pm_chi: f64,
    pub v_xm_prime: f64,
    pub v_pm_prime: f64,
    pub v_xm_dblprime: f64,
    pub v_pm_dblprime: f64,
}

/// Optical-only pieces shared by the lumped parameters and the closed form.
#[derive(Clone, Copy, Debug)]
pub(crate) struct OpticalLumps {
    pub s: [f64; 2],
    pub c: [f64; 2],
    /// `V'/V^χ = (2 V_L + ε(1 - T + 2 T V_L)) / s`.
    pub g: [f64; 2],
    /// `V''/V^χ = 1 - T + 2 T V_L`.
    pub h: [f64; 2],
}

pub(crate) fn optical_lumps(resource: &ResourceParams) -> OpticalLumps {
    let (vx, vp) = resource.input_variances();
    let t = resource.t;
    let eps = resource.eta / (2.0 - resource.eta);
    let mut out = OpticalLumps { s: [0.0; 2], c: [0.0; 2], g: [0.0; 2], h: [0.0; 2] };
    for (i, v) in [vx, vp].into_iter().enumerate() {
        let s = t + 2.0 * (1.0 - t) * v + eps;
        let h = 1.0 - t + 2.0 * t * v;
        out.s[i] = s;
        out.c[i] = t * (1.0 - t) * (1.0 - 2.0 * v).powi(2) / s;
        out.g[i] = (2.0 * v + eps * h) / s;
        out.h[i] = h;
    }
    out
}

pub fn lumped_params(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    coupling: &QndCoupling,
) -> Result<LumpedParams> {
    resource.validate()?;
    mech.validate()?;
    coupling.validate()?;
    if coupling.chi == 0.0 {
        return Err(Error::DivergentParameter("V_pM/chi^2 diverges at chi = 0".into()));
    }
    let o = optical_lumps(resource);
    let chi2 = coupling.chi * coupling.chi;
    let v_xm_chi = chi2 * mech.v_x;
    let v_pm_chi = mech.v_p / chi2;
    Ok(LumpedParams {
        s_x: o.s[0],
        s_p: o.s[1],
        c_x: o.c[0],
        c_p: o.c[1],
        v_xm_chi,
        v_pm_chi,
        v_xm_prime: v_xm_chi * o.g[0],
        v_pm_prime: v_pm_chi * o.g[1],
        v_xm_dblprime: v_xm_chi * o.h[0],
        v_pm_dblprime: v_pm_chi * o.h[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_structure_and_symplecticity() {
        let id = qnd_map(0.0, 3.0).unwrap();
        assert_eq!(id.matrix, Matrix4::identity());
        assert_eq!(id.offset, Vector4::new(0.0, 0.0, 0.0, 3.0));
        let m = qnd_map(1.0, 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j || (i, j) == (1, 2) || (i, j) == (3, 0) { 1.0 } else { 0.0 };
                assert_eq!(m.matrix[(i, j)], expect);
            }
        }
        assert_eq!(m.symplectic_defect(), 0.0);
        assert!(qnd_map(-1.0, 0.0).is_err());
    }

    #[test]
    fn drive_coupling() {
        let c = coupling_from_drive(442e3 / 1e9, 3.2e5).unwrap();
        assert!((c.chi - 1.0).abs() < 5e-3);
        let c = QndCoupling::from_chi_and_photons(1.0, 3.2e5).unwrap();
        assert!((c.omega - 400.0).abs() < 1e-12);
        let z = coupling_from_drive(1e-4, 0.0).unwrap();
        assert_eq!((z.chi, z.omega), (0.0, 0.0));
        assert!(c.consistent_with_photons(3.2e5, 1e-12));
    }

    #[test]
    fn lumped_reference_values() {
        let res = ResourceParams::new(1.5, 0.98, 0.95, 3);
        let mech = MechanicalInput::thermal(1.0).unwrap();
        let c = QndCoupling::new(1.0, 400.0, 0.0).unwrap();
        let l = lumped_params(&res, &mech, &c).unwrap();
        let vp = (-3.0f64).exp() / 2.0;
        let s_p = 0.98 + 2.0 * 0.02 * vp + 0.95 / 1.05;
        assert!((l.s_p - s_p).abs() < 1e-15);
        assert!((l.s_p - 1.885758).abs() < 1e-6);
        assert!(matches!(
            lumped_params(&res, &mech, &QndCoupling::new(0.0, 0.0, 0.0).unwrap()),
            Err(Error::DivergentParameter(_))
        ));
        let id = lumped_params(&ResourceParams::new(1.5, 1.0, 0.95, 0), &mech, &c).unwrap();
        assert_eq!((id.c_x, id.c_p), (0.0, 0.0));
        let vac = lumped_params(&ResourceParams::new(0.0, 0.9, 0.95, 1), &mech, &c).unwrap();
        assert_eq!((vac.c_x, vac.c_p), (0.0, 0.0));
    }

    #[test]
    fn mechanical_input_physicality() {
        assert!(MechanicalInput::new(0.3, 0.9).is_ok());
        assert!(MechanicalInput::new(0.3, 0.5).is_err());
        assert!(MechanicalInput::thermal(-1.0).is_err());
    }
}

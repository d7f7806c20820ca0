use nalgebra::{Matrix4, Vector4};

use super::{qnd_map, MechanicalInput, QndCoupling};
use crate::error::{Error, Result};
use crate::optical_source::PssvField;
use crate::phase_space::special::GaussHermite;
use crate::phase_space::{GaussianState, GridSpec, PhasePoint, WignerField, WignerGrid};

/// Output of direct numerical conditioning.
#[derive(Clone, Debug)]
pub struct NumericConditioning {
    /// Normalized conditional mechanical Wigner function.
    pub grid: WignerGrid,
    /// Probability density of the homodyne outcome `p̃`.
    pub outcome_density: f64,
}

/// Conditional mechanical state by direct quadrature of the conditioning integral
///
/// `W_out(x, p) ∝ ∫ dx_L W_L(x_L, p̃ - χ x) W_M(x, p - χ x_L - Ω)`.
///
/// The `x_L` integral uses Gauss–Hermite nodes placed on the product of the Gaussian
/// envelopes of both factors. Both inputs must be normalized.
pub fn condition_numeric(
    w_l: &dyn WignerField,
    w_m: &dyn WignerField,
    coupling: &QndCoupling,
    spec: &GridSpec,
    nodes: usize,
) -> Result<NumericConditioning> {
    coupling.validate()?;
    let chi = coupling.chi;
    let omega = coupling.omega;
    let p_tilde = coupling.p_tilde;
    if chi == 0.0 {
        log::warn!("chi = 0: the homodyne outcome carries no mechanical information; returning the kicked input");
        let grid = WignerGrid::from_fn(spec, |x, p| w_m.value(x, p - omega));
        let outcome_density = marginal_p_numeric(w_l, p_tilde, nodes);
        return Ok(NumericConditioning { grid: grid.normalized()?, outcome_density });
    }
    let env_l = w_l.envelope();
    let env_m = w_m.envelope();
    let rule = GaussHermite::new(nodes);
    // As a function of x_L, W_M(x, p - χ x_L - Ω) has mean (p - Ω - μ_p)/χ and variance V_p/χ².
    let prec = 1.0 / env_l.v_x + chi * chi / env_m.v_p;
    let var = 1.0 / prec;
    let raw = WignerGrid::from_fn(spec, |x, p| {
        let center = (env_l.mean.x / env_l.v_x + chi * (p - omega - env_m.mean.p) / env_m.v_p) * var;
        let p_l = p_tilde - chi * x;
        rule.integrate_real_line(center, var, |x_l| w_l.value(x_l, p_l) * w_m.value(x, p - chi * x_l - omega))
    });
    let mut grid = raw;
    let outcome_density = grid.normalize()?;
    if !(outcome_density > 0.0) {
        return Err(Error::ImpossibleOutcome(format!("outcome p = {p_tilde} has zero probability density")));
    }
    Ok(NumericConditioning { grid, outcome_density })
}

fn marginal_p_numeric(w: &dyn WignerField, p: f64, nodes: usize) -> f64 {
    let env = w.envelope();
    GaussHermite::new(nodes).integrate_real_line(env.mean.x, env.v_x, |x| w.value(x, p))
}

/// Probability density of the homodyne outcome: the optical phase-quadrature marginal
/// convolved with the mechanical position distribution scaled by `χ`.
pub fn outcome_density(optical: &PssvField, mech: &MechanicalInput, coupling: &QndCoupling) -> f64 {
    let chi = coupling.chi;
    if chi == 0.0 {
        return optical.marginal_p(coupling.p_tilde);
    }
    // p̃ = p_L + χ x_M: integrate over p_L with nodes on the product of both envelopes.
    let v_l = optical.envelope().v_p;
    let v_m = chi * chi * mech.v_x;
    let mu_m = coupling.p_tilde - chi * mech.mean.x;
    let var = 1.0 / (1.0 / v_l + 1.0 / v_m);
    let center = mu_m / v_m * var;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * v_m).sqrt();
    GaussHermite::new(129)
        .integrate_real_line(center, var, |p| optical.marginal_p(p) * norm * (-(p - mu_m).powi(2) / (2.0 * v_m)).exp())
}

/// Gaussian reference: conditional mechanical moments for Gaussian inputs, from the
/// Schur complement of the output covariance on the measured `p_L`.
pub fn gaussian_condition(
    optical: &GaussianState,
    mech: &GaussianState,
    coupling: &QndCoupling,
) -> Result<GaussianState> {
    let map = qnd_map(coupling.chi, coupling.omega)?;
    let mut cov = Matrix4::zeros();
    cov[(0, 0)] = optical.v_x;
    cov[(1, 1)] = optical.v_p;
    cov[(0, 1)] = optical.cov_xp;
    cov[(1, 0)] = optical.cov_xp;
    cov[(2, 2)] = mech.v_x;
    cov[(3, 3)] = mech.v_p;
    cov[(2, 3)] = mech.cov_xp;
    cov[(3, 2)] = mech.cov_xp;
    let mean_in = Vector4::new(optical.mean.x, optical.mean.p, mech.mean.x, mech.mean.p);
    let c = map.matrix * cov * map.matrix.transpose();
    let mu = map.apply(mean_in);
    let spp = c[(1, 1)];
    if !(spp > 0.0) {
        return Err(Error::InvalidState("measured quadrature has zero variance".into()));
    }
    let k = [c[(2, 1)] / spp, c[(3, 1)] / spp];
    let innovation = coupling.p_tilde - mu[1];
    GaussianState::with_covariance(
        PhasePoint::new(mu[2] + k[0] * innovation, mu[3] + k[1] * innovation),
        c[(2, 2)] - c[(2, 1)] * c[(1, 2)] / spp,
        c[(3, 3)] - c[(3, 1)] * c[(1, 3)] / spp,
        c[(2, 3)] - c[(2, 1)] * c[(1, 3)] / spp,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optical_source::{pssv_state, ResourceParams};
    use crate::phase_space::gaussian_wigner;
    use crate::qnd_core::{ClosedFormVariant, ConditionalState};

    #[test]
    fn vacuum_conditioning_oracle() {
        let vac = GaussianState::vacuum();
        let c = QndCoupling::new(1.0, 0.0, 0.0).unwrap();
        let g = gaussian_condition(&vac, &vac, &c).unwrap();
        assert!((g.v_x - 0.25).abs() < 1e-15);
        assert!((g.v_p - 1.0).abs() < 1e-15);
        let wl = gaussian_wigner(vac).unwrap();
        let spec = GridSpec::around(&g, 10.0, 161);
        let n = condition_numeric(&wl, &wl, &c, &spec, 129).unwrap();
        let exact = WignerGrid::sample(&gaussian_wigner(g).unwrap(), &spec);
        assert!(n.grid.max_abs_diff(&exact) < 1e-12);
        // p_L,out = p_L + χ x_M has variance 1.
        let expect = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((n.outcome_density - expect).abs() < 1e-10);
    }

    #[test]
    fn closed_form_matches_numeric_for_reference_cat() {
        let res = ResourceParams::new(1.5, 0.98, 0.95, 3);
        let mech = MechanicalInput::thermal(1.0).unwrap();
        let c = QndCoupling::new(1.0, 400.0, 0.0).unwrap();
        let cf = ConditionalState::new(&res, &mech, &c, ClosedFormVariant::Corrected).unwrap();
        let spec = GridSpec::around(&cf.moments(), 11.0, 201);
        let a = cf.sample(&spec).unwrap();
        let opt = pssv_state(res).unwrap();
        let wm = gaussian_wigner(mech.as_gaussian()).unwrap();
        let n = condition_numeric(&opt.field, &wm, &c, &spec, 129).unwrap();
        let peak = a.peak_abs();
        assert!(a.max_abs_diff(&n.grid) < 1e-6 * peak, "{}", a.max_abs_diff(&n.grid) / peak);
        let od = outcome_density(&opt.field, &mech, &c);
        assert!((od - n.outcome_density).abs() < 1e-6 * od, "{od} {}", n.outcome_density);
        let printed = ConditionalState::new(&res, &mech, &c, ClosedFormVariant::AsPrinted).unwrap();
        let b = printed.sample(&spec).unwrap();
        assert!(b.max_abs_diff(&n.grid) > 1e-3 * peak);
    }
}

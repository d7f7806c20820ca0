//! Named oracle-equivalence and invariant checks behind the `validate` command.
//!
//! Every check reports a measured deviation against a fixed tolerance. A broken closed
//! form can be injected through [`ClosedFormVariant`] to confirm that failures are
//! attributed to the right check.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fock_oracle::{
    beamsplit_fock, heisenberg_residuals, oracle_pipeline, pnr_condition_fock, squeezed_vacuum_fock, wigner_from_dm,
    OracleSettings, QndUnitary,
};
use crate::metrics::{gaussian_macroscopicity, macroscopicity, total_negativity};
use crate::noise::{amplitude_averaged_state, averaging_grid, NoiseSpec};
use crate::optical_source::{pssv_state, ResourceParams};
use crate::phase_space::{gaussian_wigner, GaussianState, GridPolicy, GridSpec, PhasePoint, WignerField, WignerGrid};
use crate::protocol::{precool, PulseSpec};
use crate::qnd_core::{
    condition_numeric, gaussian_condition, qnd_map, ClosedFormVariant, ConditionalState, MechanicalInput, QndCoupling,
};

/// Seed of the random closed-form suite.
pub const SUITE_SEED: u64 = 20_240_611;

/// Points per axis of the closed-form comparison grids (odd for Simpson weights).
pub const SUITE_GRID: usize = 129;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub level: Level,
    pub variant: ClosedFormVariant,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Fixed-width table, one line per check.
    pub fn table(&self) -> String {
        let mut s = format!("{:<34} {:>6} {:>12} {:>10} {:>8}\n", "check", "status", "measured", "tolerance", "secs");
        for c in &self.checks {
            s += &format!(
                "{:<34} {:>6} {:>12.3e} {:>10.1e} {:>8.2}  {}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.measured,
                c.tolerance,
                c.seconds,
                c.detail
            );
        }
        s
    }
}

/// Runs `f` and compares its `(measured, detail)` against `tolerance`. Errors fail the check.
pub fn check(name: &str, tolerance: f64, f: impl FnOnce() -> Result<(f64, String)>) -> CheckResult {
    let start = Instant::now();
    let (measured, detail) = match f() {
        Ok(v) => v,
        Err(e) => (f64::INFINITY, format!("error: {e}")),
    };
    CheckResult {
        name: name.to_string(),
        measured,
        tolerance,
        passed: measured.is_finite() && measured <= tolerance,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// One parameter set of the closed-form comparison suite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteInstance {
    pub resource: ResourceParams,
    pub mech: MechanicalInput,
    pub coupling: QndCoupling,
}

/// `count` instances with m ≤ 3, r ≤ 1.5, η ∈ [0.8, 1], T ∈ [0.95, 1), χ ∈ [0.5, 2],
/// n̄ ≤ 5, plus a kick and an outcome so that frame handling is exercised too.
pub fn random_suite(seed: u64, count: usize) -> Vec<SuiteInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            // Cover every photon number before sampling it.
            let m = if i < 4 { i as u32 } else { rng.random_range(0..=3) };
            let r = rng.random_range(0.2..=1.5);
            let eta = rng.random_range(0.8..=1.0);
            let t = rng.random_range(0.95..1.0);
            let chi = rng.random_range(0.5..=2.0);
            let n_bar = rng.random_range(0.0..=5.0);
            let omega = rng.random_range(0.0..50.0);
            let p_tilde = rng.random_range(-1.0..1.0);
            SuiteInstance {
                resource: ResourceParams::new(r, t, eta, m),
                mech: MechanicalInput::thermal(n_bar).expect("n_bar >= 0"),
                coupling: QndCoupling::new(chi, omega, p_tilde).expect("finite coupling"),
            }
        })
        .collect()
}

fn reference_cat(m: u32) -> SuiteInstance {
    SuiteInstance {
        resource: ResourceParams::new(1.5, 0.98, 0.95, m),
        mech: MechanicalInput::thermal(1.0).expect("thermal"),
        coupling: QndCoupling::new(1.0, 400.0, 0.0).expect("finite coupling"),
    }
}

/// Peak-normalized max deviation between the closed form and direct conditioning.
pub fn closed_form_deviation(inst: &SuiteInstance, variant: ClosedFormVariant, count: usize) -> Result<f64> {
    let cf = ConditionalState::new(&inst.resource, &inst.mech, &inst.coupling, variant)?;
    let exact = ConditionalState::new(&inst.resource, &inst.mech, &inst.coupling, ClosedFormVariant::Corrected)?;
    let spec = GridSpec::around(&exact.moments(), 8.0 + inst.resource.m as f64, count);
    let a = cf.sample(&spec)?;
    let optical = pssv_state(inst.resource)?;
    let wm = gaussian_wigner(inst.mech.as_gaussian())?;
    let n = condition_numeric(&optical.field, &wm, &inst.coupling, &spec, 129)?;
    Ok(a.max_abs_diff(&n.grid) / n.grid.peak_abs())
}

pub fn check_closed_form_suite(variant: ClosedFormVariant) -> CheckResult {
    check("closed_form_vs_numeric_suite", 1e-5, || {
        let mut worst: f64 = 0.0;
        let mut parts = Vec::new();
        for inst in random_suite(SUITE_SEED, 5) {
            let d = closed_form_deviation(&inst, variant, SUITE_GRID)?;
            parts.push(format!("m={}:{d:.1e}", inst.resource.m));
            worst = worst.max(d);
        }
        Ok((worst, parts.join(" ")))
    })
}

pub fn check_closed_form_reference(variant: ClosedFormVariant) -> CheckResult {
    check("closed_form_vs_numeric_reference", 1e-5, || {
        let d = closed_form_deviation(&reference_cat(3), variant, SUITE_GRID)?;
        Ok((d, "r=1.5 m=3 chi=1 Omega=400".into()))
    })
}

/// Analytic normalization agrees with the grid integral and `|W| <= 1/π`.
pub fn check_normalization(variant: ClosedFormVariant) -> CheckResult {
    check("normalization", 1e-6, || {
        let mut worst: f64 = 0.0;
        for m in 0..=3 {
            let inst = reference_cat(m);
            let st = ConditionalState::new(&inst.resource, &inst.mech, &inst.coupling, variant)?;
            let g = WignerGrid::sample(&st, &st.grid_spec(&GridPolicy::default()));
            worst = worst.max((g.integrate(|w| w) - 1.0).abs());
        }
        Ok((worst, "reference cat states, m = 0..3".into()))
    })
}

pub fn check_wigner_bound(variant: ClosedFormVariant) -> CheckResult {
    check("wigner_bound", 0.0, || {
        let mut excess: f64 = 0.0;
        let mut states = random_suite(SUITE_SEED, 5);
        states.extend((0..=3).map(reference_cat));
        for inst in states {
            let st = ConditionalState::new(&inst.resource, &inst.mech, &inst.coupling, variant)?;
            let g = st.sample(&st.grid_spec(&GridPolicy::default()))?;
            excess = excess.max(g.peak_abs() * PI - (1.0 + 1e-9));
        }
        Ok((excess.max(0.0), "max(|W| pi - 1), 1e-9 slack".into()))
    })
}

pub fn check_symplecticity() -> CheckResult {
    check("symplecticity", 1e-12, || {
        let mut worst: f64 = 0.0;
        for chi in [0.0, 0.3, 1.0, 2.5, 5.0] {
            for omega in [0.0, 400.0] {
                let map = qnd_map(chi, omega)?;
                worst = worst.max(map.symplectic_defect()).max((map.matrix.determinant() - 1.0).abs());
            }
        }
        Ok((worst, "M^T J M - J and det M".into()))
    })
}

/// `W(x, p; Ω) = W(x, p - Ω; 0)` pointwise.
pub fn check_omega_translation(variant: ClosedFormVariant) -> CheckResult {
    check("omega_translation", 1e-12, || {
        let base = reference_cat(3);
        let moved = SuiteInstance { coupling: QndCoupling::new(1.0, 0.0, 0.0)?, ..base };
        let a = ConditionalState::new(&base.resource, &base.mech, &base.coupling, variant)?;
        let b = ConditionalState::new(&moved.resource, &moved.mech, &moved.coupling, variant)?;
        let spec = GridSpec::around(&a.moments(), 6.0, 61);
        let mut worst: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for ip in 0..spec.p.count {
            for ix in 0..spec.x.count {
                let pt = spec.lab(ix, ip);
                let wa = a.value(pt.x, pt.p);
                worst = worst.max((wa - b.value(pt.x, pt.p - 400.0)).abs());
                peak = peak.max(wa.abs());
            }
        }
        Ok((worst / peak, "Omega = 400 vs shifted Omega = 0".into()))
    })
}

/// Pre-cooling formulas against both Gaussian conditioning oracles.
pub fn check_precool_consistency() -> CheckResult {
    check("precool_gaussian_consistency", 1e-6, || {
        let mut worst: f64 = 0.0;
        for (v_x, v_p, chi, r) in [(40.0, 25.0, 0.7, 1.2), (3.0, 3.0, 0.2, 1.5), (12.0, 0.5, 1.5, 0.0)] {
            let (vxl, vpl) = PulseSpec { r, chi }.variances();
            let (vxc, vpc) = precool(v_x, v_p, chi, vxl, vpl);
            let optical = GaussianState::new(PhasePoint::ORIGIN, vxl, vpl)?;
            let mech = GaussianState::new(PhasePoint::ORIGIN, v_x, v_p)?;
            let cpl = QndCoupling::new(chi, 0.0, 0.3)?;
            let g = gaussian_condition(&optical, &mech, &cpl)?;
            worst = worst.max((g.v_x - vxc).abs() / vxc).max((g.v_p - vpc).abs() / vpc);
            let spec = GridSpec::around(&g, 9.0, 601);
            let num = condition_numeric(&gaussian_wigner(optical)?, &gaussian_wigner(mech)?, &cpl, &spec, 64)?;
            let m = crate::metrics::moments(&num.grid);
            worst = worst.max((m.v_x - vxc).abs() / vxc.max(1.0)).max((m.v_p - vpc).abs() / vpc.max(1.0));
        }
        Ok((worst, "formula vs Schur complement vs integral".into()))
    })
}

/// Reflection symmetry of the `p̃ = 0` state about its centre and the optical parity sign.
pub fn check_parity(variant: ClosedFormVariant) -> CheckResult {
    check("parity_symmetry", 1e-12, || {
        let mut worst: f64 = 0.0;
        let mut detail = String::new();
        for m in 0..=3 {
            let inst = reference_cat(m);
            let st = ConditionalState::new(&inst.resource, &inst.mech, &inst.coupling, variant)?;
            let c = st.moments().mean;
            let peak = st.value(c.x, c.p).abs().max(1e-300);
            for (u, v) in [(0.3, 1.7), (0.05, 4.0), (0.6, 0.2)] {
                let w = st.value(c.x + u, c.p + v);
                worst = worst.max((w - st.value(c.x - u, c.p + v)).abs() / peak);
                worst = worst.max((w - st.value(c.x + u, c.p - v)).abs() / peak);
            }
        }
        for m in 0..=4u32 {
            let h = pssv_state(ResourceParams::new(1.5, 0.98, 0.95, m))?;
            let origin = h.field.value(0.0, 0.0);
            if (origin < 0.0) != (m % 2 == 1) {
                worst = f64::INFINITY;
                detail = format!("PSSV m={m} has W(0) = {origin:.3e}");
            }
        }
        if detail.is_empty() {
            detail = "x and p reflections; PSSV sign (-1)^m at origin".into();
        }
        Ok((worst, detail))
    })
}

pub fn check_herald_probabilities() -> CheckResult {
    check("herald_probability_vs_fock", 1e-5, || {
        let mut worst: f64 = 0.0;
        let sq = squeezed_vacuum_fock(-1.5, 200)?;
        let split = beamsplit_fock(&sq, 0.98)?;
        for m in 0..=3usize {
            let (_, p) = pnr_condition_fock(&split, m, 0.95)?;
            let h = pssv_state(ResourceParams::new(1.5, 0.98, 0.95, m as u32))?;
            worst = worst.max((p - h.herald_probability).abs());
        }
        Ok((worst, "r=1.5, m=0..3, dim 200".into()))
    })
}

fn single_photon_grid() -> WignerGrid {
    WignerGrid::from_fn(&GridSpec::square(9.0, 601), |x, p| {
        let r2 = x * x + p * p;
        (2.0 * r2 - 1.0) * (-r2).exp() / PI
    })
}

pub fn check_single_photon_negativity() -> CheckResult {
    check("negativity_single_photon", 1e-4, || {
        let n = total_negativity(&single_photon_grid());
        let expect = 4.0 * (-0.5f64).exp() - 2.0;
        Ok(((n - expect).abs(), format!("{n:.6} vs {expect:.6}")))
    })
}

pub fn check_vacuum_macroscopicity() -> CheckResult {
    check("macroscopicity_vacuum", 1e-6, || {
        let g = WignerGrid::sample(&gaussian_wigner(GaussianState::vacuum())?, &GridSpec::square(10.0, 801));
        let i = macroscopicity(&g)?;
        Ok((i.abs(), format!("{i:.3e}")))
    })
}

pub fn check_squeezed_macroscopicity() -> CheckResult {
    check("macroscopicity_squeezed", 1e-3, || {
        let mut worst: f64 = 0.0;
        for r in [0.5, 1.0, 1.5] {
            let s = GaussianState::squeezed_vacuum(r);
            let g = WignerGrid::sample(&gaussian_wigner(s)?, &GridSpec::around(&s, 9.0, 801));
            let i = macroscopicity(&g)?;
            worst = worst.max((i - r.sinh().powi(2)).abs()).max((gaussian_macroscopicity(&s) - r.sinh().powi(2)).abs());
        }
        Ok((worst, "r = 0.5, 1, 1.5 vs sinh^2 r".into()))
    })
}

pub fn check_fock_pipeline(variant: ClosedFormVariant) -> CheckResult {
    check("fock_pipeline_equivalence", 1e-4, || {
        let res = oracle_pipeline(1.0, 0.98, 0.95, 1, 1.0, 1.0, 0.0, OracleSettings::default())?;
        let spec = GridSpec::square(4.0, 41);
        let g = wigner_from_dm(&res.state, &spec);
        let cf = ConditionalState::new(
            &ResourceParams::new(1.0, 0.98, 0.95, 1),
            &MechanicalInput::thermal(1.0)?,
            &QndCoupling::new(1.0, 0.0, 0.0)?,
            variant,
        )?;
        let mut worst: f64 = 0.0;
        for ip in 0..spec.p.count {
            for ix in 0..spec.x.count {
                let pt = spec.lab(ix, ip);
                worst = worst.max((g.at(ix, ip) - cf.value(pt.x, pt.p)).abs());
            }
        }
        Ok((worst, "r=1 m=1 chi=1 on [-4,4]^2".into()))
    })
}

pub fn check_fock_doubling() -> CheckResult {
    check("fock_dimension_doubling", 1e-6, || {
        let base = OracleSettings::default();
        let big = OracleSettings { dim_optical: 2 * base.dim_optical, dim_mech: 2 * base.dim_mech };
        let a = oracle_pipeline(1.0, 0.98, 0.95, 1, 1.0, 1.0, 0.0, base)?;
        let b = oracle_pipeline(1.0, 0.98, 0.95, 1, 1.0, 1.0, 0.0, big)?;
        let spec = GridSpec::square(4.0, 21);
        let d = wigner_from_dm(&a.state, &spec).max_abs_diff(&wigner_from_dm(&b.state, &spec));
        Ok((d, format!("{}/{} -> {}/{}", base.dim_optical, base.dim_mech, big.dim_optical, big.dim_mech)))
    })
}

pub fn check_heisenberg() -> CheckResult {
    check("fock_heisenberg_relations", 1e-6, || {
        let mut worst: f64 = 0.0;
        for (chi, dim) in [(0.1, 60), (1.0, 120), (2.0, 240)] {
            let u = QndUnitary::new(chi, dim, dim)?;
            let (rp, rx) = heisenberg_residuals(&u, 15, 15);
            worst = worst.max(rp).max(rx).max(u.unitarity_defect(4));
        }
        Ok((worst, "levels < 15".into()))
    })
}

/// Amplitude-noise quadrature converges when the node count roughly doubles.
pub fn check_noise_nodes() -> CheckResult {
    check("noise_node_convergence", 1e-3, || {
        let g0k = 442e3 / 1e9;
        let res = ResourceParams::new(1.5, 0.98, 0.95, 3);
        let mech = MechanicalInput::thermal(1.0)?;
        let noise = NoiseSpec { check_convergence: false, ..NoiseSpec::relative(3.2e5, 1e-2) };
        let policy = GridPolicy::default();
        let spec = averaging_grid(&res, &mech, g0k, &noise.with_nodes(41), &policy, 0.0)?;
        let a = total_negativity(&amplitude_averaged_state(&res, &mech, g0k, &noise.with_nodes(21), &spec, 0.0)?);
        let b = total_negativity(&amplitude_averaged_state(&res, &mech, g0k, &noise.with_nodes(41), &spec, 0.0)?);
        Ok(((a - b).abs() / b, format!("N_p=3.2e5 sigma/N_p=1e-2: 21 -> 41 nodes, {a:.5} -> {b:.5}")))
    })
}

pub fn run_validation(level: Level, variant: ClosedFormVariant) -> ValidationReport {
    let mut checks = vec![
        check_closed_form_reference(variant),
        check_closed_form_suite(variant),
        check_normalization(variant),
        check_wigner_bound(variant),
        check_symplecticity(),
        check_omega_translation(variant),
        check_precool_consistency(),
        check_parity(variant),
        check_herald_probabilities(),
        check_single_photon_negativity(),
        check_vacuum_macroscopicity(),
        check_squeezed_macroscopicity(),
    ];
    if level == Level::Full {
        checks.push(check_fock_pipeline(variant));
        checks.push(check_fock_doubling());
        checks.push(check_heisenberg());
        checks.push(check_noise_nodes());
    }
    let passed = checks.iter().all(|c| c.passed);
    ValidationReport { level, variant, checks, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_deterministic_and_in_range() {
        let a = random_suite(SUITE_SEED, 5);
        assert_eq!(a, random_suite(SUITE_SEED, 5));
        let ms: Vec<u32> = a.iter().map(|i| i.resource.m).collect();
        assert_eq!(&ms[..4], &[0, 1, 2, 3]);
        for i in &a {
            assert!(i.resource.r <= 1.5 && (0.8..=1.0).contains(&i.resource.eta));
            assert!(i.resource.t >= 0.95 && i.resource.t < 1.0);
            assert!((0.5..=2.0).contains(&i.coupling.chi) && i.mech.v_x <= 5.5);
        }
    }

    #[test]
    fn failures_carry_the_check_name() {
        let bad = check("always_fails", 1.0, || Ok((2.0, String::new())));
        assert!(!bad.passed);
        let err = check("errors", 1.0, || Err(crate::Error::Validation("x".into())));
        assert!(!err.passed && err.detail.contains("error"));
        let r = ValidationReport {
            level: Level::Fast,
            variant: ClosedFormVariant::Corrected,
            checks: vec![bad],
            passed: false,
        };
        assert!(r.table().contains("always_fails") && r.table().contains("FAIL"));
    }
}

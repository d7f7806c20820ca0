//! Property tests for the structural invariants of the model.

use std::f64::consts::PI;

use optomech::metrics::{total_negativity, MetricsReport};
use optomech::optical_source::ResourceParams;
use optomech::phase_space::{laguerre_assoc, GridPolicy, Quadrature, WignerField};
use optomech::protocol::{decoherence_budget, precool, quarter_period_rotate, PulseSpec};
use optomech::qnd_core::{
    coupling_from_drive, lumped_params, qnd_map, ClosedFormVariant, ConditionalState, MechanicalInput, QndCoupling,
};
use proptest::prelude::*;

fn resource(r: f64, t: f64, eta: f64, m: u32) -> ResourceParams {
    ResourceParams { r, t, eta, m, n_p: 0.0, sigma_n: 0.0, squeezed_quadrature: Quadrature::P }
}

fn state(res: &ResourceParams, n_bar: f64, chi: f64, omega: f64, p_tilde: f64) -> ConditionalState {
    let mech = MechanicalInput::thermal(n_bar).unwrap();
    let c = QndCoupling::new(chi, omega, p_tilde).unwrap();
    ConditionalState::new(res, &mech, &c, ClosedFormVariant::Corrected).unwrap()
}

/// `L_n^α(z)` from its explicit power series.
fn laguerre_series(n: usize, alpha: f64, z: f64) -> f64 {
    let mut sum = 0.0;
    let mut fact = 1.0;
    for i in 0..=n {
        if i > 0 {
            fact *= i as f64;
        }
        let binom: f64 = (1..=n - i).map(|j| (alpha + i as f64 + j as f64) / j as f64).product();
        sum += (-1f64).powi(i as i32) * binom * z.powi(i as i32) / fact;
    }
    sum
}

/// Multiples of 1/256 in `[-half, half]`.
fn dyadic(half: f64) -> impl Strategy<Value = f64> {
    let n = (half * 256.0) as i64;
    (-n..=n).prop_map(|k| k as f64 / 256.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn laguerre_matches_power_series(n in 0usize..8, alpha in -0.5f64..2.0, z in -6.0f64..6.0) {
        let a = laguerre_assoc(n, alpha, z);
        let b = laguerre_series(n, alpha, z);
        prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn qnd_map_is_symplectic(chi in 0.0f64..5.0, omega in -500.0f64..500.0) {
        let m = qnd_map(chi, omega).unwrap();
        prop_assert!(m.symplectic_defect() < 1e-12);
        prop_assert!((m.matrix.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drive_coupling_relation(g in 1e-5f64..1e-3, n_p in 0.0f64..2e6) {
        let c = coupling_from_drive(g, n_p).unwrap();
        prop_assert!((c.chi - 4.0 * g * n_p.sqrt()).abs() <= 1e-12 * c.chi.max(1.0));
        prop_assert!((c.omega - c.chi * (n_p / 2.0).sqrt()).abs() <= 1e-9 * c.omega.max(1.0));
    }

    #[test]
    fn lumped_params_are_physical(
        r in 0.0f64..2.0, t in 0.9f64..1.0, eta in 0.5f64..1.0, m in 0u32..4,
        n_bar in 0.0f64..10.0, chi in 0.1f64..3.0,
    ) {
        let mech = MechanicalInput::thermal(n_bar).unwrap();
        let lp = lumped_params(&resource(r, t, eta, m), &mech, &QndCoupling::new(chi, 0.0, 0.0).unwrap()).unwrap();
        prop_assert!(lp.s_x > 0.0 && lp.s_p > 0.0);
        prop_assert!(lp.c_x >= 0.0 && lp.c_p >= 0.0);
        for v in [lp.v_xm_prime, lp.v_pm_prime, lp.v_xm_dblprime, lp.v_pm_dblprime] {
            prop_assert!(v >= 0.0);
        }
    }

    /// Ω only shifts the state along p. Coordinates are dyadic so the shifts are exact.
    #[test]
    fn omega_is_a_translation(
        r in 0.2f64..1.5, m in 0u32..4, n_bar in 0.0f64..5.0, chi in 0.5f64..2.0,
        omega in dyadic(400.0), x in dyadic(3.0), p in dyadic(3.0),
    ) {
        let res = resource(r, 0.97, 0.9, m);
        let a = state(&res, n_bar, chi, 0.0, 0.0);
        let b = state(&res, n_bar, chi, omega, 0.0);
        let (wa, wb) = (a.value(x, p), b.value(x, p + omega));
        prop_assert!((wa - wb).abs() <= 1e-14 * wa.abs().max(1e-3), "{wa} vs {wb}");
    }

    /// With `p̃ = 0` the conditional state is symmetric under `(x, p - Ω) → -(x, p - Ω)`.
    #[test]
    fn parity_about_the_kick(
        r in 0.2f64..1.5, m in 0u32..4, n_bar in 0.0f64..5.0, chi in 0.5f64..2.0,
        omega in dyadic(50.0), x in dyadic(3.0), p in dyadic(3.0),
    ) {
        let s = state(&resource(r, 0.97, 0.9, m), n_bar, chi, omega, 0.0);
        let (w1, w2) = (s.value(x, omega + p), s.value(-x, omega - p));
        prop_assert!((w1 - w2).abs() <= 1e-14 * w1.abs().max(1e-3), "{w1} vs {w2}");
    }

    /// The Gaussian m = 0 state loses x variance whenever it is measured.
    #[test]
    fn conditioning_squeezes_x(r in 0.0f64..1.5, n_bar in 0.0f64..20.0, chi in 0.05f64..3.0) {
        let s = state(&resource(r, 0.98, 0.95, 0), n_bar, chi, 0.0, 0.0);
        prop_assert!(s.moments().v_x < n_bar + 0.5);
    }

    #[test]
    fn precool_is_physical_and_squeezing_helps(
        n_bar in 0.0f64..1e4, chi_c in 0.01f64..5.0, r in 0.0f64..2.0,
    ) {
        let v = n_bar + 0.5;
        let (vxl, vpl) = PulseSpec { r, chi: chi_c }.variances();
        let (vx_c, vp_c) = precool(v, v, chi_c, vxl, vpl);
        prop_assert!(vx_c <= v && vp_c >= v);
        prop_assert!(vx_c * vp_c >= 0.25 * (1.0 - 1e-12));
        let (vx_vac, _) = precool(v, v, chi_c, 0.5, 0.5);
        prop_assert!(vx_c <= vx_vac * (1.0 + 1e-12));
        prop_assert_eq!(quarter_period_rotate(vx_c, vp_c), (vp_c, vx_c));
    }

    #[test]
    fn decoherence_shrinks_with_separation_and_occupation(
        n_bar in 1.0f64..1e5, d in 0.5f64..20.0, k in 1.01f64..4.0,
    ) {
        let gamma = 2.0 * PI * 1e-3;
        let base = decoherence_budget(n_bar, gamma, d, 2.0 * PI * 1e5).unwrap();
        let wider = decoherence_budget(n_bar, gamma, d * k, 2.0 * PI * 1e5).unwrap();
        let hotter = decoherence_budget(n_bar * k, gamma, d, 2.0 * PI * 1e5).unwrap();
        prop_assert!(wider.tau_dec < base.tau_dec && hotter.tau_dec < base.tau_dec);
        // fringes outlive a phonon jump only for d < sqrt(3)
        prop_assert_eq!(base.tau_dec < base.tau_th, d > 3f64.sqrt());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// Sampled states integrate to one, respect `|W| ≤ 1/π`, and have non-negative
    /// negativity and purity in (0, 1].
    #[test]
    fn sampled_states_are_valid_wigner_functions(
        r in 0.2f64..1.5, t in 0.95f64..1.0, eta in 0.8f64..1.0, m in 0u32..4,
        n_bar in 0.0f64..5.0, chi in 0.5f64..2.0, p_tilde in -1.0f64..1.0,
    ) {
        let s = state(&resource(r, t, eta, m), n_bar, chi, 0.0, p_tilde);
        let grid = s.sample(&s.grid_spec(&GridPolicy::default())).unwrap();
        let total = grid.integrate(|w| w);
        prop_assert!((total - 1.0).abs() < 1e-6, "norm {total}");
        prop_assert!(grid.peak_abs() <= 1.0 / PI * (1.0 + 1e-9));
        prop_assert!(total_negativity(&grid) >= 0.0);
        if m == 0 {
            prop_assert!(total_negativity(&grid) < 1e-6);
        }
        let report = MetricsReport::evaluate(&grid).unwrap();
        prop_assert!(report.purity > 0.0 && report.purity <= 1.0 + 1e-6);
    }
}

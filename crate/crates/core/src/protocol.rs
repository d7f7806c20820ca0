//! Device physics and the three-pulse protocol: pre-cool one quadrature, wait a quarter
//! period, prepare the conditional state, then read out rotated quadratures.
//!
//! SI units live only in this module; everything downstream is dimensionless.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{amplitude_separation, MetricsReport};
use crate::optical_source::ResourceParams;
use crate::phase_space::{GridPolicy, WignerGrid};
use crate::qnd_core::{coupling_from_drive, ClosedFormVariant, ConditionalState, MechanicalInput, QndCoupling};

/// CODATA constants.
pub mod constants {
    /// Reduced Planck constant, J s.
    pub const HBAR: f64 = 1.054571817e-34;
    /// Boltzmann constant, J/K.
    pub const K_B: f64 = 1.380649e-23;
    /// Speed of light, m/s.
    pub const C: f64 = 2.99792458e8;
}

use constants::{C, HBAR, K_B};

/// Required margin on each side of `ω_M ≪ τ⁻¹ ≪ κ`.
pub const QND_MARGIN: f64 = 10.0;

/// Hardware parameters in SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Laser wavelength, m.
    pub lambda_l: f64,
    /// Cavity length, m.
    pub length: f64,
    /// Mechanical angular frequency, rad/s.
    pub omega_m: f64,
    /// Effective mass, kg.
    pub mass: f64,
    pub q_m: f64,
    /// Cavity half-width, rad/s.
    pub kappa: f64,
    /// Bath temperature, K.
    pub t_bath: f64,
}

impl DeviceParams {
    /// 1550 nm light in a 4 μm cavity with κ/2π = 1 GHz; a 1 ng, 100 kHz oscillator with
    /// Q = 1e8 at 100 mK.
    pub fn reference() -> Self {
        Self {
            lambda_l: 1550e-9,
            length: 4e-6,
            omega_m: 2.0 * PI * 100e3,
            mass: 1e-12,
            q_m: 1e8,
            kappa: 2.0 * PI * 1e9,
            t_bath: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_l", self.lambda_l),
            ("length", self.length),
            ("omega_m", self.omega_m),
            ("mass", self.mass),
            ("q_m", self.q_m),
            ("kappa", self.kappa),
            ("t_bath", self.t_bath),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("device {name} = {v} must be finite and > 0")));
            }
        }
        Ok(())
    }

    /// Mechanical period, s.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_m
    }

    /// Checks `ω_M ≪ τ⁻¹ ≪ κ` with [`QND_MARGIN`] on each side. Without a pulse rate the
    /// geometric mean `sqrt(ω_M κ)` is used, which maximizes the smaller margin.
    pub fn qnd_validity(&self, pulse_rate: Option<f64>) -> QndValidity {
        let rate = pulse_rate.unwrap_or_else(|| (self.omega_m * self.kappa).sqrt());
        let slow_margin = rate / self.omega_m;
        let fast_margin = self.kappa / rate;
        QndValidity {
            pulse_rate: rate,
            slow_margin,
            fast_margin,
            valid: slow_margin >= QND_MARGIN && fast_margin >= QND_MARGIN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QndValidity {
    /// Inverse pulse duration, 1/s.
    pub pulse_rate: f64,
    /// `τ⁻¹ / ω_M`.
    pub slow_margin: f64,
    /// `κ τ`.
    pub fast_margin: f64,
    pub valid: bool,
}

/// Quantities derived from [`DeviceParams`] for one drive photon number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedDevice {
    pub n_p: f64,
    /// Zero-point fluctuation, m.
    pub x_zpf: f64,
    /// Optical angular frequency, rad/s.
    pub omega_0: f64,
    /// Vacuum coupling, rad/s.
    pub g0: f64,
    pub g0_over_kappa: f64,
    pub chi: f64,
    pub omega: f64,
    pub finesse: f64,
    pub n_bar_th: f64,
    /// Mechanical damping `ω_M / Q_M`, 1/s.
    pub gamma_m: f64,
}

pub fn derive_device(dev: &DeviceParams, n_p: f64) -> Result<DerivedDevice> {
    dev.validate()?;
    let x_zpf = (HBAR / (2.0 * dev.mass * dev.omega_m)).sqrt();
    let omega_0 = 2.0 * PI * C / dev.lambda_l;
    let g0 = x_zpf * omega_0 / dev.length;
    let g0_over_kappa = g0 / dev.kappa;
    let coupling = coupling_from_drive(g0_over_kappa, n_p)?;
    let fsr = C / (2.0 * dev.length);
    let fwhm_hz = 2.0 * dev.kappa / (2.0 * PI);
    Ok(DerivedDevice {
        n_p,
        x_zpf,
        omega_0,
        g0,
        g0_over_kappa,
        chi: coupling.chi,
        omega: coupling.omega,
        finesse: fsr / fwhm_hz,
        n_bar_th: bose_occupation(dev.omega_m, dev.t_bath),
        gamma_m: dev.omega_m / dev.q_m,
    })
}

/// `1/(exp(ħω/k_B T) - 1)`.
pub fn bose_occupation(omega: f64, temperature: f64) -> f64 {
    1.0 / (HBAR * omega / (K_B * temperature)).exp_m1()
}

/// Drive photon number giving coupling `chi`: `N_p = (χ / (4 g0/κ))²`.
pub fn photons_for_chi(g0_over_kappa: f64, chi: f64) -> f64 {
    (chi / (4.0 * g0_over_kappa)).powi(2)
}

/// Mechanical variances after a QND pulse of strength `chi_c` reads out `x` and the
/// outcome is fed forward: `x` narrows, `p` takes the optical back-action.
pub fn precool(v_x: f64, v_p: f64, chi_c: f64, v_xl: f64, v_pl: f64) -> (f64, f64) {
    let k = chi_c * chi_c;
    (v_x / (1.0 + k * v_x / v_pl), v_p + k * v_xl)
}

/// Free evolution by a quarter period swaps the quadrature variances.
pub fn quarter_period_rotate(v_x: f64, v_p: f64) -> (f64, f64) {
    (v_p, v_x)
}

/// Squeezed-vacuum drive pulse without photon subtraction, used for cooling and readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    /// Phase squeezing of the pulse.
    pub r: f64,
    pub chi: f64,
}

impl PulseSpec {
    /// `(V_xL, V_pL)` of the phase-squeezed pulse.
    pub fn variances(&self) -> (f64, f64) {
        ((2.0 * self.r).exp() / 2.0, (-2.0 * self.r).exp() / 2.0)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.r >= 0.0 && self.r.is_finite()) || !(self.chi >= 0.0 && self.chi.is_finite()) {
            return Err(Error::InvalidParameter(format!("{what} pulse needs finite r >= 0 and chi >= 0")));
        }
        Ok(())
    }
}

/// Cool, prepare and read pulses placed on the mechanical clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolPlan {
    pub cool: PulseSpec,
    /// Preparation strength; the resource's own `n_p` is replaced by the photon number
    /// giving this coupling on the device.
    pub chi: f64,
    pub readout: PulseSpec,
    /// Quadrature angles `θ` read out after preparation. Delays are `θ/ω_M`.
    #[serde(default)]
    pub readout_phases: Vec<f64>,
    /// Inverse pulse duration in 1/s; defaults to `sqrt(ω_M κ)`.
    #[serde(default)]
    pub pulse_rate: Option<f64>,
    #[serde(default)]
    pub grid: GridPolicy,
}

impl ProtocolPlan {
    /// Delay between pre-cooling and preparation, in periods.
    pub const PREPARE_DELAY: f64 = 0.25;

    pub fn new(chi_c: f64, r_c: f64, chi: f64) -> Self {
        Self {
            cool: PulseSpec { r: r_c, chi: chi_c },
            chi,
            readout: PulseSpec { r: r_c, chi: 1.0 },
            readout_phases: Vec::new(),
            pulse_rate: None,
            grid: GridPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cool.validate("cooling")?;
        self.readout.validate("readout")?;
        if !(self.chi > 0.0 && self.chi.is_finite()) {
            return Err(Error::InvalidParameter(format!("preparation chi = {} must be > 0", self.chi)));
        }
        if !self.readout_phases.is_empty() && !(self.readout.chi > 0.0) {
            return Err(Error::InvalidParameter("readout needs chi > 0".into()));
        }
        if self.readout_phases.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("readout phases must be finite".into()));
        }
        let lo = self.readout_phases.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.readout_phases.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !self.readout_phases.is_empty() && hi - lo >= PI {
            return Err(Error::InvalidParameter(format!(
                "readout phases span {:.4} rad; delays must stay within half a period",
                hi - lo
            )));
        }
        Ok(())
    }

    /// Pulse times in units of the mechanical period: cool at 0, prepare a quarter
    /// later, readouts after preparation.
    pub fn timing(&self) -> Vec<(String, f64)> {
        let mut t = vec![("cool".to_string(), 0.0), ("prepare".to_string(), Self::PREPARE_DELAY)];
        for th in &self.readout_phases {
            t.push((format!("readout {th}"), Self::PREPARE_DELAY + th / (2.0 * PI)));
        }
        t
    }
}

/// Quadrature distribution seen by one readout pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutMarginal {
    pub theta: f64,
    /// Imprecision variance `V_pL / χ_r²` convolved into the marginal.
    pub imprecision: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl ReadoutMarginal {
    pub fn local_maxima(&self) -> Vec<f64> {
        let d = &self.density;
        (1..d.len().saturating_sub(1)).filter(|&i| d[i] > d[i - 1] && d[i] >= d[i + 1]).map(|i| self.x[i]).collect()
    }
}

/// Everything one run of the protocol produces.
#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub device: DerivedDevice,
    pub cool_photons: f64,
    /// Thermal input `(V_x, V_p)`.
    pub initial: (f64, f64),
    /// After pre-cooling.
    pub cooled: (f64, f64),
    /// After the quarter-period wait; the preparation input.
    pub rotated: (f64, f64),
    pub prepared: WignerGrid,
    pub metrics: MetricsReport,
    pub readouts: Vec<ReadoutMarginal>,
    pub validity: QndValidity,
}

/// State, cooled and rotated variances, preparation photon number.
type Prepared = (ConditionalState, (f64, f64), (f64, f64), f64);

fn prepared_state(derived: &DerivedDevice, resource: &ResourceParams, plan: &ProtocolPlan) -> Result<Prepared> {
    let thermal = derived.n_bar_th + 0.5;
    let (v_xl, v_pl) = plan.cool.variances();
    let cooled = precool(thermal, thermal, plan.cool.chi, v_xl, v_pl);
    let rotated = quarter_period_rotate(cooled.0, cooled.1);
    let n_p = photons_for_chi(derived.g0_over_kappa, plan.chi);
    let coupling = coupling_from_drive(derived.g0_over_kappa, n_p)?;
    let mut res = *resource;
    res.n_p = n_p;
    res.sigma_n = 0.0;
    let mech = MechanicalInput::new(rotated.0, rotated.1)?;
    let state = ConditionalState::new(&res, &mech, &coupling.with_outcome(0.0), ClosedFormVariant::Corrected)?;
    Ok((state, cooled, rotated, photons_for_chi(derived.g0_over_kappa, plan.cool.chi)))
}

/// Pre-cool, rotate, prepare (outcome `p̃ = 0`), score, and read out each phase.
pub fn three_pulse_run(dev: &DeviceParams, resource: &ResourceParams, plan: &ProtocolPlan) -> Result<ProtocolRun> {
    plan.validate()?;
    let validity = dev.qnd_validity(plan.pulse_rate);
    if !validity.valid {
        return Err(Error::InvalidParameter(format!(
            "pulsed QND regime not satisfied: tau^-1/omega_M = {:.2}, kappa tau = {:.2} (need >= {QND_MARGIN})",
            validity.slow_margin, validity.fast_margin
        )));
    }
    let derived = derive_device(dev, photons_for_chi(derive_device(dev, 0.0)?.g0_over_kappa, plan.chi))?;
    let thermal = derived.n_bar_th + 0.5;
    let (state, cooled, rotated, cool_photons) = prepared_state(&derived, resource, plan)?;
    let prepared = state.sample(&state.grid_spec(&plan.grid))?;
    let metrics = MetricsReport::evaluate(&prepared)?;

    let (_, v_pl_r) = plan.readout.variances();
    let imprecision = v_pl_r / plan.readout.chi.powi(2);
    let fringe = 2.0 * state.moments().v_x.max(state.moments().v_p).sqrt();
    let readouts = plan
        .readout_phases
        .par_iter()
        .map(|&theta| readout_marginal(&state, theta, imprecision, fringe, &plan.grid))
        .collect();
    Ok(ProtocolRun {
        device: derived,
        cool_photons,
        initial: (thermal, thermal),
        cooled,
        rotated,
        prepared,
        metrics,
        readouts,
        validity,
    })
}

fn readout_marginal(
    state: &ConditionalState,
    theta: f64,
    imprecision: f64,
    fringe: f64,
    policy: &GridPolicy,
) -> ReadoutMarginal {
    let env = state.moments();
    let (sn, c) = theta.sin_cos();
    let mean = env.mean.x * c + env.mean.p * sn;
    let var = env.v_x * c * c + env.v_p * sn * sn + imprecision;
    let half = (policy.extent_sigmas + policy.sigmas_per_photon * state.photons() as f64) * var.sqrt();
    let step = (PI / (8.0 * fringe)).min(imprecision.sqrt() / 4.0);
    let count = ((2.0 * half / step).ceil() as usize).max(policy.min_count) | 1;
    let axis = crate::phase_space::Axis::new(0.0, half, count);
    let x: Vec<f64> = (0..count).map(|i| mean + axis.coord(i)).collect();
    let density = x.iter().map(|&s| state.quadrature_density(theta, s, imprecision)).collect();
    ReadoutMarginal { theta, imprecision, x, density }
}

/// Readout marginals as CSV `theta,x,density` in phase order.
pub fn write_readout_csv<W: Write>(readouts: &[ReadoutMarginal], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta", "x", "density"]).map_err(csv_err)?;
    for r in readouts {
        for (x, d) in r.x.iter().zip(&r.density) {
            w.write_record([format!("{:?}", r.theta), format!("{x:?}"), format!("{d:?}")]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Prepared-state negativity for each pre-cooling strength, all else fixed.
pub fn cooling_saturation(
    dev: &DeviceParams,
    resource: &ResourceParams,
    plan: &ProtocolPlan,
    chi_c: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let derived = derive_device(dev, photons_for_chi(derive_device(dev, 0.0)?.g0_over_kappa, plan.chi))?;
    chi_c
        .par_iter()
        .map(|&k| {
            let mut p = plan.clone();
            p.cool.chi = k;
            let (state, ..) = prepared_state(&derived, resource, &p)?;
            let grid = state.sample(&state.grid_spec(&plan.grid))?;
            Ok((k, crate::metrics::total_negativity(&grid)))
        })
        .collect()
}

/// Thermal decoherence timescales compared with the mechanical period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceBudget {
    /// Coherent-amplitude separation `d` of the superposed components.
    pub d: f64,
    /// Decay time of the fringes, s.
    pub tau_dec: f64,
    /// Time to absorb one thermal phonon, s.
    pub tau_th: f64,
    pub t_period: f64,
    pub dec_over_period: f64,
    pub th_over_period: f64,
}

/// `τ_dec = 6 / (n̄ Γ (d√2)²)`, `τ_th = 1/(n̄ Γ)`.
pub fn decoherence_budget(n_bar_th: f64, gamma_m: f64, d: f64, omega_m: f64) -> Result<DecoherenceBudget> {
    for (name, v) in [("n_bar_th", n_bar_th), ("gamma_m", gamma_m), ("d", d), ("omega_m", omega_m)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and > 0")));
        }
    }
    let rate = n_bar_th * gamma_m;
    let tau_dec = 6.0 / (rate * 2.0 * d * d);
    let tau_th = 1.0 / rate;
    let t_period = 2.0 * PI / omega_m;
    Ok(DecoherenceBudget {
        d,
        tau_dec,
        tau_th,
        t_period,
        dec_over_period: tau_dec / t_period,
        th_over_period: tau_th / t_period,
    })
}

/// JSON document written by the protocol command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub device: DeviceParams,
    pub derived: DerivedDevice,
    pub validity: QndValidity,
    pub plan: ProtocolPlan,
    pub timing: Vec<(String, f64)>,
    pub cool_photons: f64,
    pub initial_variances: [f64; 2],
    pub cooled_variances: [f64; 2],
    pub rotated_variances: [f64; 2],
    pub metrics: MetricsReport,
    /// Decoherence budget at the prepared state's lobe separation, if it has two lobes.
    pub timescales: Option<DecoherenceBudget>,
    /// Readout angles written to the marginal CSV; absent without readout phases.
    pub tomography: Option<Vec<f64>>,
    #[serde(default)]
    pub saturation: Vec<(f64, f64)>,
}

impl ProtocolReport {
    pub fn new(
        dev: &DeviceParams,
        plan: &ProtocolPlan,
        run: &ProtocolRun,
        saturation: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let timescales = match run.metrics.fringe_d {
            Some(dq) => Some(decoherence_budget(
                run.device.n_bar_th,
                run.device.gamma_m,
                amplitude_separation(dq),
                dev.omega_m,
            )?),
            None => None,
        };
        Ok(Self {
            device: *dev,
            derived: run.device,
            validity: run.validity,
            plan: plan.clone(),
            timing: plan.timing(),
            cool_photons: run.cool_photons,
            initial_variances: [run.initial.0, run.initial.1],
            cooled_variances: [run.cooled.0, run.cooled.1],
            rotated_variances: [run.rotated.0, run.rotated.1],
            metrics: run.metrics,
            timescales,
            tomography: (!run.readouts.is_empty()).then(|| run.readouts.iter().map(|r| r.theta).collect()),
            saturation,
        })
    }
}

/// Prepared-state coupling at the plan's `chi` on this device.
pub fn preparation_coupling(dev: &DeviceParams, chi: f64) -> Result<QndCoupling> {
    let g = derive_device(dev, 0.0)?.g0_over_kappa;
    coupling_from_drive(g, photons_for_chi(g, chi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{gaussian_wigner, GaussianState, GridSpec};
    use crate::qnd_core::{condition_numeric, gaussian_condition};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn reference_device_numbers() {
        let dev = DeviceParams::reference();
        let d = derive_device(&dev, 3.2e5).unwrap();
        assert!(rel(d.x_zpf, 9.1e-15) < 0.01, "{}", d.x_zpf);
        assert!(rel(d.g0 / (2.0 * PI), 442e3) < 0.01, "{}", d.g0 / (2.0 * PI));
        assert!(rel(d.finesse, 19000.0) < 0.05, "{}", d.finesse);
        assert!(rel(d.chi, 1.0) < 0.02, "{}", d.chi);
        assert!(rel(d.omega, 400.0) < 0.02, "{}", d.omega);
        assert!(rel(d.n_bar_th, 2.08e4) < 0.01, "{}", d.n_bar_th);
        assert!(dev.qnd_validity(None).valid);
        assert!(!dev.qnd_validity(Some(dev.omega_m * 2.0)).valid);
    }

    #[test]
    fn decoherence_times() {
        let dev = DeviceParams::reference();
        let d = derive_device(&dev, 0.0).unwrap();
        let b = decoherence_budget(d.n_bar_th, d.gamma_m, 10.0, dev.omega_m).unwrap();
        assert!(rel(b.tau_dec, 230e-6) < 0.05, "{}", b.tau_dec);
        assert!(rel(b.tau_th, 7.6e-3) < 0.05, "{}", b.tau_th);
        assert!(rel(b.t_period, 10e-6) < 1e-12);
        let worse = decoherence_budget(2.0 * d.n_bar_th, d.gamma_m, 10.0, dev.omega_m).unwrap();
        assert!(worse.tau_dec < b.tau_dec);
    }

    #[test]
    fn precool_examples() {
        assert_eq!(precool(3.0, 4.0, 0.0, 10.0, 0.1), (3.0, 4.0));
        let v = 2.1e4 + 0.5;
        let sq = PulseSpec { r: 1.5, chi: 0.2 }.variances();
        let (vx, _) = precool(v, v, 0.2, sq.0, sq.1);
        assert!((vx - 0.62).abs() < 0.01, "{vx}");
        let (vc, _) = precool(v, v, 0.2, 0.5, 0.5);
        assert!((vc - 12.5).abs() < 0.05, "{vc}");
        assert!(vc / vx > 19.0);
        let g = derive_device(&DeviceParams::reference(), 0.0).unwrap().g0_over_kappa;
        let n = photons_for_chi(g, 0.2);
        assert!(n > 1.0e4 && n < 1.6e4, "{n}");
    }

    #[test]
    fn precool_matches_gaussian_conditioning() {
        let (v_x, v_p, chi) = (40.0, 25.0, 0.7);
        let pulse = PulseSpec { r: 1.2, chi };
        let (vxl, vpl) = pulse.variances();
        let (vxc, vpc) = precool(v_x, v_p, chi, vxl, vpl);
        let optical = GaussianState::squeezed_vacuum(1.2);
        let optical = GaussianState { v_x: vxl, v_p: vpl, ..optical };
        let mech = GaussianState::new(Default::default(), v_x, v_p).unwrap();
        let cpl = QndCoupling::new(chi, 0.0, 0.3).unwrap();
        let g = gaussian_condition(&optical, &mech, &cpl).unwrap();
        assert!(rel(g.v_x, vxc) < 1e-12 && rel(g.v_p, vpc) < 1e-12);

        let wl = gaussian_wigner(optical).unwrap();
        let wm = gaussian_wigner(mech).unwrap();
        let spec = GridSpec::around(&g, 9.0, 601);
        let num = condition_numeric(&wl, &wm, &cpl, &spec, 64).unwrap();
        let m = crate::metrics::moments(&num.grid);
        assert!((m.v_x - vxc).abs() < 1e-6 * vxc.max(1.0), "{} vs {vxc}", m.v_x);
        assert!((m.v_p - vpc).abs() < 1e-6 * vpc.max(1.0), "{} vs {vpc}", m.v_p);
    }

    #[test]
    fn three_pulse_chain_and_readout() {
        let dev = DeviceParams::reference();
        let resource = ResourceParams::new(1.5, 0.98, 0.95, 3);
        let mut plan = ProtocolPlan::new(0.2, 1.5, 1.0);
        plan.readout_phases = vec![0.0, PI / 2.0];
        let run = three_pulse_run(&dev, &resource, &plan).unwrap();
        assert!((run.cooled.0 - 0.62).abs() < 0.01);
        assert_eq!(run.rotated, (run.cooled.1, run.cooled.0));
        assert!(run.metrics.negativity > 0.3, "{:?}", run.metrics);
        for r in &run.readouts {
            let step = r.x[1] - r.x[0];
            let total: f64 = r.density.iter().sum::<f64>() * step;
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
        // θ = 0 separates the two lobes; θ = π/2 shows the interference fringes.
        // The kick enters p, so θ = π/2 separates the lobes and θ = 0 crosses the fringes.
        let lobes = run.readouts[1].local_maxima();
        assert_eq!(lobes.len(), 2, "{lobes:?}");
        let d = run.metrics.fringe_d.unwrap();
        assert!(rel(lobes[1] - lobes[0], d) < 0.05, "{lobes:?} vs {d}");
        let fringes = &run.readouts[0];
        let mid = fringes.x.len() / 2;
        assert_eq!(fringes.local_maxima().len(), 2);
        let peak = fringes.density.iter().cloned().fold(0.0, f64::max);
        assert!(fringes.density[mid] < 0.99 * peak);
        let report = ProtocolReport::new(&dev, &plan, &run, Vec::new()).unwrap();
        assert!(report.timescales.is_some());
        let mut buf = Vec::new();
        write_readout_csv(&run.readouts, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta,x,density\n"));
    }

    #[test]
    fn plan_rejects_long_readout_span() {
        let mut plan = ProtocolPlan::new(0.2, 1.5, 1.0);
        plan.readout_phases = vec![0.0, PI];
        assert!(plan.validate().is_err());
        plan.readout_phases = vec![0.0, 3.0];
        assert!(plan.validate().is_ok());
    }

    #[test]
    fn cooling_saturates_near_chi_c_0_2() {
        let dev = DeviceParams::reference();
        let resource = ResourceParams::new(1.5, 0.98, 0.95, 3);
        let plan = ProtocolPlan::new(0.2, 1.5, 1.0);
        let curve = cooling_saturation(&dev, &resource, &plan, &[0.02, 0.05, 0.1, 0.2, 0.5, 2.0, 10.0, 100.0]).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9), "{curve:?}");
        let asymptote = curve.last().unwrap().1;
        assert!((asymptote - curve[6].1).abs() < 1e-4);
        assert!(curve[3].1 >= 0.95 * asymptote, "{curve:?}");
    }
}

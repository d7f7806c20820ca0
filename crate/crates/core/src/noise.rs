//! Classical pulse-energy fluctuations: the conditional mechanical state averaged over a
//! Gaussian distribution of the pulse photon number.
//!
//! Each quadrature node recomputes both `χ ∝ sqrt(N_p)` and `Ω ∝ N_p` and samples its
//! state on one shared lab-frame grid. The spread of `Ω` across nodes is what smears the
//! fringes, so nodes are never re-centred on their own kick.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::total_negativity;
use crate::optical_source::ResourceParams;
use crate::phase_space::special::GaussHermite;
use crate::phase_space::{Axis, GridPolicy, GridSpec, WignerGrid};
use crate::qnd_core::{coupling_from_drive, ClosedFormVariant, ConditionalState, MechanicalInput, QndCoupling};

/// Relative change of the averaged negativity tolerated when the node count roughly doubles.
pub const NODE_CONVERGENCE_TOL: f64 = 1e-3;

fn default_nodes() -> usize {
    21
}

fn default_check() -> bool {
    true
}

/// Gaussian distribution of the pulse photon number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub n_p_mean: f64,
    pub sigma_n: f64,
    /// Gauss–Hermite nodes over `N_p` (odd).
    #[serde(default = "default_nodes")]
    pub node_count: usize,
    /// Repeat with `2 n - 1` nodes and fail if the negativity moves by more than
    /// [`NODE_CONVERGENCE_TOL`].
    #[serde(default = "default_check")]
    pub check_convergence: bool,
}

impl NoiseSpec {
    pub fn new(n_p_mean: f64, sigma_n: f64) -> Self {
        Self { n_p_mean, sigma_n, node_count: default_nodes(), check_convergence: true }
    }

    pub fn relative(n_p_mean: f64, sigma_rel: f64) -> Self {
        Self::new(n_p_mean, sigma_rel * n_p_mean)
    }

    pub fn with_nodes(mut self, node_count: usize) -> Self {
        self.node_count = node_count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_p_mean >= 0.0) || !self.n_p_mean.is_finite() {
            return Err(Error::InvalidParameter(format!("mean photon number {} must be >= 0", self.n_p_mean)));
        }
        if !(self.sigma_n >= 0.0) || !self.sigma_n.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma_N = {} must be >= 0", self.sigma_n)));
        }
        if self.node_count == 0 || self.node_count.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("node count {} must be odd", self.node_count)));
        }
        if self.sigma_n > 0.0 && self.sigma_n >= self.n_p_mean / 4.0 {
            return Err(Error::TailMass { sigma: self.sigma_n, mean: self.n_p_mean });
        }
        Ok(())
    }

    /// Quadrature nodes `(N_p, weight)`; nodes at `N_p <= 0` are dropped and the rest
    /// renormalized. A single node when `sigma_n = 0`.
    pub fn photon_nodes(&self, count: usize) -> Vec<(f64, f64)> {
        if self.sigma_n == 0.0 {
            return vec![(self.n_p_mean, 1.0)];
        }
        let rule = GaussHermite::new(count);
        let scale = std::f64::consts::SQRT_2 * self.sigma_n;
        let mut nodes: Vec<(f64, f64)> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(t, w)| (self.n_p_mean + scale * t, *w))
            .filter(|(n, _)| *n > 0.0)
            .collect();
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        nodes.iter_mut().for_each(|(_, w)| *w /= total);
        nodes
    }
}

/// Per-node state on the shared grid.
struct NodeState {
    weight: f64,
    coupling: QndCoupling,
    state: ConditionalState,
}

fn node_states(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    g0_over_kappa: f64,
    noise: &NoiseSpec,
    count: usize,
    p_tilde: f64,
) -> Result<Vec<NodeState>> {
    noise
        .photon_nodes(count)
        .into_iter()
        .map(|(n_p, weight)| {
            let coupling = coupling_from_drive(g0_over_kappa, n_p)?.with_outcome(p_tilde);
            let state = ConditionalState::new(resource, mech, &coupling, ClosedFormVariant::Corrected)?;
            Ok(NodeState { weight, coupling, state })
        })
        .collect()
}

/// Grid for the averaged state: the mean-drive state's grid from `policy`, widened at
/// the same step until it covers every node's state (up to twice the node count, so the
/// convergence check samples on the same grid).
pub fn averaging_grid(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    g0_over_kappa: f64,
    noise: &NoiseSpec,
    policy: &GridPolicy,
    p_tilde: f64,
) -> Result<GridSpec> {
    noise.validate()?;
    let mean = coupling_from_drive(g0_over_kappa, noise.n_p_mean)?.with_outcome(p_tilde);
    let center = ConditionalState::new(resource, mech, &mean, ClosedFormVariant::Corrected)?;
    let mut spec = center.grid_spec(policy);
    let sig = policy.extent_sigmas + policy.sigmas_per_photon * resource.m as f64;
    let nodes = node_states(resource, mech, g0_over_kappa, noise, 2 * noise.node_count - 1, p_tilde)?;
    let (mut hx, mut hp) = (spec.x.half_width(), spec.p.half_width());
    for n in &nodes {
        let env = n.state.moments();
        hx = hx.max((env.mean.x - spec.frame_offset.x).abs() + sig * env.v_x.sqrt());
        hp = hp.max((env.mean.p - spec.frame_offset.p).abs() + sig * env.v_p.sqrt());
    }
    let widen = |axis: Axis, half: f64| {
        let count = 2 * (half / axis.step).ceil() as usize + 1;
        Axis::with_step(axis.center, axis.step, count.max(axis.count))
    };
    spec.x = widen(spec.x, hx);
    spec.p = widen(spec.p, hp);
    Ok(spec)
}

fn average_on(nodes: &[NodeState], spec: &GridSpec) -> Result<WignerGrid> {
    let grids: Vec<WignerGrid> = nodes.par_iter().map(|n| n.state.sample(spec)).collect::<Result<_>>()?;
    // Fixed node order for the reduction.
    let mut acc = WignerGrid::from_values(spec, vec![0.0; spec.len()])?;
    for (n, g) in nodes.iter().zip(&grids) {
        acc.add_scaled(g, n.weight)?;
    }
    acc.normalized()
}

/// Amplitude-averaged conditional state on `spec`, normalized.
pub fn amplitude_averaged_state(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    g0_over_kappa: f64,
    noise: &NoiseSpec,
    spec: &GridSpec,
    p_tilde: f64,
) -> Result<WignerGrid> {
    noise.validate()?;
    let nodes = node_states(resource, mech, g0_over_kappa, noise, noise.node_count, p_tilde)?;
    let grid = average_on(&nodes, spec)?;
    if noise.check_convergence && noise.sigma_n > 0.0 {
        let fine = node_states(resource, mech, g0_over_kappa, noise, 2 * noise.node_count - 1, p_tilde)?;
        let refined = average_on(&fine, spec)?;
        let (a, b) = (total_negativity(&grid), total_negativity(&refined));
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-9);
        if (a - b).abs() > 1e-9 && rel > NODE_CONVERGENCE_TOL {
            return Err(Error::NodeConvergence { relative_change: rel });
        }
    }
    Ok(grid)
}

/// Separate contributions of the two jitter channels, each averaged with the other held
/// at its mean-drive value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterDiagnostics {
    pub noiseless: f64,
    pub chi_only: f64,
    pub omega_only: f64,
    pub both: f64,
}

pub fn jitter_diagnostics(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    g0_over_kappa: f64,
    noise: &NoiseSpec,
    spec: &GridSpec,
    p_tilde: f64,
) -> Result<JitterDiagnostics> {
    noise.validate()?;
    let mean = coupling_from_drive(g0_over_kappa, noise.n_p_mean)?;
    let nodes = node_states(resource, mech, g0_over_kappa, noise, noise.node_count, p_tilde)?;
    let partial = |keep_chi: bool| -> Result<f64> {
        let swapped: Vec<NodeState> = nodes
            .iter()
            .map(|n| {
                let c = if keep_chi {
                    QndCoupling::new(n.coupling.chi, mean.omega, p_tilde)?
                } else {
                    QndCoupling::new(mean.chi, n.coupling.omega, p_tilde)?
                };
                let state = ConditionalState::new(resource, mech, &c, ClosedFormVariant::Corrected)?;
                Ok(NodeState { weight: n.weight, coupling: c, state })
            })
            .collect::<Result<_>>()?;
        Ok(total_negativity(&average_on(&swapped, spec)?))
    };
    let single = NoiseSpec { sigma_n: 0.0, ..*noise };
    let base = node_states(resource, mech, g0_over_kappa, &single, 1, p_tilde)?;
    Ok(JitterDiagnostics {
        noiseless: total_negativity(&average_on(&base, spec)?),
        chi_only: partial(true)?,
        omega_only: partial(false)?,
        both: total_negativity(&average_on(&nodes, spec)?),
    })
}

/// One point of the negativity surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_p: f64,
    pub sigma_rel: f64,
    pub chi: f64,
    pub omega: f64,
    pub negativity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativitySweep {
    /// Rows in declared order: noise levels outer, photon numbers inner.
    pub rows: Vec<SweepRow>,
    /// `(sigma_rel, n_p at maximum negativity, maximum)` per noise level.
    pub argmax: Vec<(f64, f64, f64)>,
}

impl NegativitySweep {
    pub fn row(&self, sigma_rel: f64, n_p: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.sigma_rel == sigma_rel && r.n_p == n_p)
    }

    /// CSV with columns `n_p, sigma_rel, chi, omega, negativity`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_p", "sigma_rel", "chi", "omega", "negativity"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.n_p, r.sigma_rel, r.chi, r.omega, r.negativity].map(|v| format!("{v:?}")))
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Largest node count the sweep escalates to before giving up.
pub const MAX_SWEEP_NODES: usize = 161;

/// Averaged state starting at `node_count` nodes and refining (`n → 2n - 1`) while the
/// node-convergence check fails. Large `Ω` spreads need more nodes than the default.
pub fn converged_average(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    g0_over_kappa: f64,
    noise: NoiseSpec,
    policy: &GridPolicy,
    node_count: usize,
) -> Result<WignerGrid> {
    let mut nodes = node_count;
    loop {
        let noise = noise.with_nodes(nodes);
        let spec = averaging_grid(resource, mech, g0_over_kappa, &noise, policy, 0.0)?;
        match amplitude_averaged_state(resource, mech, g0_over_kappa, &noise, &spec, 0.0) {
            Err(Error::NodeConvergence { relative_change }) if 2 * nodes - 1 <= MAX_SWEEP_NODES => {
                log::info!(
                    "N_p = {:.3e}, sigma = {:.3e}: {nodes} nodes not converged ({relative_change:.2e}); refining",
                    noise.n_p_mean,
                    noise.sigma_n
                );
                nodes = 2 * nodes - 1;
            }
            other => return other,
        }
    }
}

/// Total negativity over `(σ_N/N_p) × N_p`. Each point gets its own averaging grid.
pub fn negativity_vs_photon_sweep(
    resource: &ResourceParams,
    mech: &MechanicalInput,
    g0_over_kappa: f64,
    sigma_rel: &[f64],
    n_p: &[f64],
    policy: &GridPolicy,
    node_count: usize,
) -> Result<NegativitySweep> {
    let points: Vec<(f64, f64)> = sigma_rel.iter().flat_map(|s| n_p.iter().map(move |n| (*s, *n))).collect();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|&(s, n)| {
            let grid = converged_average(resource, mech, g0_over_kappa, NoiseSpec::relative(n, s), policy, node_count)?;
            let c = coupling_from_drive(g0_over_kappa, n)?;
            Ok(SweepRow { n_p: n, sigma_rel: s, chi: c.chi, omega: c.omega, negativity: total_negativity(&grid) })
        })
        .collect::<Result<_>>()?;
    let argmax = sigma_rel
        .iter()
        .map(|s| {
            let best = rows
                .iter()
                .filter(|r| r.sigma_rel == *s)
                .fold(None::<&SweepRow>, |b, r| match b {
                    Some(b) if b.negativity >= r.negativity => Some(b),
                    _ => Some(r),
                })
                .expect("non-empty photon axis");
            (*s, best.n_p, best.negativity)
        })
        .collect();
    Ok(NegativitySweep { rows, argmax })
}

#[cfg(test)]
mod tests {
    use super::*;

    const G0K: f64 = 442e3 / 1e9;

    fn noise_reference(m: u32) -> (ResourceParams, MechanicalInput) {
        (ResourceParams::new(1.5, 0.98, 0.95, m), MechanicalInput::thermal(1.0).unwrap())
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(NoiseSpec::relative(1e5, 0.3).validate(), Err(Error::TailMass { .. })));
        assert!(NoiseSpec::relative(1e5, 0.01).with_nodes(20).validate().is_err());
        let n = NoiseSpec::relative(1e5, 0.2).photon_nodes(21);
        assert!((n.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(n.iter().all(|(np, _)| *np > 0.0));
        assert_eq!(NoiseSpec::new(1e5, 0.0).photon_nodes(21), vec![(1e5, 1.0)]);
    }

    #[test]
    fn zero_noise_is_the_noiseless_state() {
        let (res, mech) = noise_reference(3);
        let noise = NoiseSpec::new(3.2e5, 0.0);
        let spec = averaging_grid(&res, &mech, G0K, &noise, &GridPolicy::default(), 0.0).unwrap();
        let avg = amplitude_averaged_state(&res, &mech, G0K, &noise, &spec, 0.0).unwrap();
        let c = coupling_from_drive(G0K, 3.2e5).unwrap();
        let direct =
            ConditionalState::new(&res, &mech, &c, ClosedFormVariant::Corrected).unwrap().sample(&spec).unwrap();
        assert!(avg.max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn averaging_keeps_normalization_and_reduces_negativity() {
        let (res, mech) = noise_reference(3);
        let noise = NoiseSpec::relative(3.2e5, 3e-3);
        let spec = averaging_grid(&res, &mech, G0K, &noise, &GridPolicy::default(), 0.0).unwrap();
        let avg = amplitude_averaged_state(&res, &mech, G0K, &noise, &spec, 0.0).unwrap();
        assert!((avg.integrate(|w| w) - 1.0).abs() < 1e-6);
        let clean = amplitude_averaged_state(&res, &mech, G0K, &NoiseSpec::new(3.2e5, 0.0), &spec, 0.0).unwrap();
        assert!(total_negativity(&avg) <= total_negativity(&clean) + 1e-6);
    }

    #[test]
    fn gaussian_column_has_no_negativity() {
        let (res, mech) = noise_reference(0);
        let s = negativity_vs_photon_sweep(&res, &mech, G0K, &[0.0, 1e-2], &[1e5, 3.2e5], &GridPolicy::default(), 21)
            .unwrap();
        assert_eq!(s.rows.len(), 4);
        assert!(s.rows.iter().all(|r| r.negativity < 1e-6));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n_p,sigma_rel,chi,omega,negativity\n"));
        assert_eq!(text.lines().count(), 5);
    }
}

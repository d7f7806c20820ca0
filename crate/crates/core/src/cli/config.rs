//! Run configuration: one JSON document per run, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::optical_source::ResourceParams;
use crate::phase_space::io::sha256_hex;
use crate::phase_space::GridPolicy;
use crate::protocol::{derive_device, photons_for_chi, DeviceParams, ProtocolPlan};
use crate::qnd_core::{MechanicalInput, QndCoupling};

/// Initial mechanical state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanicalConfig {
    /// Thermal state with this occupation.
    Thermal(f64),
    Variances {
        v_x: f64,
        v_p: f64,
    },
    /// Thermal at the device bath temperature.
    Bath,
}

/// Preparation coupling. `omega` defaults to `χ sqrt(N_p/2)` with `N_p` taken from the
/// resource, or derived from `χ` on the device when the resource has none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub chi: f64,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub p_tilde: f64,
}

/// Sweep axes. Empty axes fall back to the single value of the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    /// Total negativity over `σ_N/N_p × N_p`, with couplings from the device.
    PhotonNoise {
        #[serde(default)]
        n_p: Vec<f64>,
        #[serde(default)]
        sigma_rel: Vec<f64>,
        #[serde(default = "default_nodes")]
        node_count: usize,
    },
    /// Full metrics over `r × m × n̄` at the base coupling.
    Occupancy {
        #[serde(default)]
        n_bar: Vec<f64>,
        #[serde(default)]
        r: Vec<f64>,
        #[serde(default)]
        m: Vec<u32>,
    },
}

fn default_nodes() -> usize {
    21
}

/// Protocol block: the plan plus an optional pre-cooling sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub plan: ProtocolPlan,
    #[serde(default)]
    pub saturation_chi_c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "DeviceParams::reference")]
    pub device: DeviceParams,
    pub resource: ResourceParams,
    pub mechanical: MechanicalConfig,
    pub coupling: CouplingConfig,
    /// Amplitude noise for `state`; absent means a noiseless drive.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub grid: GridPolicy,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub protocol: Option<ProtocolConfig>,
    /// Reserved; every computation is deterministic.
    #[serde(default)]
    pub seed: u64,
}

/// A parsed config together with the hash of its source bytes.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(LoadedConfig { config: Self::parse(text)?, hash: sha256_hex(&bytes) })
    }

    /// Parameter checks; failures are config errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| Error::Config(e.to_string());
        self.device.validate().map_err(as_config)?;
        self.resource.validate().map_err(as_config)?;
        self.mechanical_input().map_err(as_config)?;
        self.coupling().map_err(as_config)?;
        if let Some(n) = &self.noise {
            n.validate().map_err(as_config)?;
        }
        if self.grid.min_count < 3 || !(self.grid.extent_sigmas > 0.0) || !(self.grid.sigmas_per_photon >= 0.0) {
            return Err(Error::Config("grid policy needs min_count >= 3 and positive extents".into()));
        }
        if let Some(SweepConfig::PhotonNoise { n_p, sigma_rel, node_count }) = &self.sweep {
            if node_count % 2 == 0 || *node_count == 0 {
                return Err(Error::Config(format!("node_count = {node_count} must be odd")));
            }
            if n_p.iter().chain(sigma_rel).any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config("sweep axes must be finite and >= 0".into()));
            }
        }
        if let Some(p) = &self.protocol {
            p.plan.validate().map_err(as_config)?;
        }
        Ok(())
    }

    pub fn g0_over_kappa(&self) -> Result<f64> {
        Ok(derive_device(&self.device, 0.0)?.g0_over_kappa)
    }

    pub fn mechanical_input(&self) -> Result<MechanicalInput> {
        match self.mechanical {
            MechanicalConfig::Thermal(n) => MechanicalInput::thermal(n),
            MechanicalConfig::Variances { v_x, v_p } => MechanicalInput::new(v_x, v_p),
            MechanicalConfig::Bath => MechanicalInput::thermal(derive_device(&self.device, 0.0)?.n_bar_th),
        }
    }

    /// Photon number behind the base coupling.
    pub fn drive_photons(&self) -> Result<f64> {
        if self.resource.n_p > 0.0 {
            Ok(self.resource.n_p)
        } else {
            Ok(photons_for_chi(self.g0_over_kappa()?, self.coupling.chi))
        }
    }

    pub fn coupling(&self) -> Result<QndCoupling> {
        let omega = match self.coupling.omega {
            Some(o) => o,
            None => self.coupling.chi * (self.drive_photons()? / 2.0).sqrt(),
        };
        QndCoupling::new(self.coupling.chi, omega, self.coupling.p_tilde)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAT: &str = r#"{
        "resource": {"r": 1.5, "t": 0.98, "eta": 0.95, "m": 3},
        "mechanical": {"thermal": 1.0},
        "coupling": {"chi": 1.0, "omega": 400.0}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let c = RunConfig::parse(CAT).unwrap();
        assert_eq!(c.device, DeviceParams::reference());
        assert_eq!(c.coupling().unwrap().omega, 400.0);
        assert_eq!(c.mechanical_input().unwrap().v_x, 1.5);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = CAT.replace("\"eta\"", "\"etta\"");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::Config(_))));
        let bad = CAT.replace("\"coupling\"", "\"extra\": 1, \"coupling\"");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::Config(_))));
        let bad = CAT.replace("{\"thermal\": 1.0}", "{\"thermal\": -1.0}");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn derived_omega_and_bath() {
        let text = CAT.replace(", \"omega\": 400.0", "").replace("{\"thermal\": 1.0}", "\"bath\"");
        let c = RunConfig::parse(&text).unwrap();
        let o = c.coupling().unwrap().omega;
        assert!((o - 400.0).abs() < 8.0, "{o}");
        assert!((c.mechanical_input().unwrap().v_x - 2.08e4).abs() < 300.0);
    }
}

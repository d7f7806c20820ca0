//! Batch commands behind the `optomech` binary. Each writes deterministic artifacts into
//! an output directory; identical configs give byte-identical files.

pub mod config;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::metrics::{total_negativity, MetricsReport, TRUNCATION_WARN_RATIO};
use crate::noise::{converged_average, NoiseSpec};
use crate::phase_space::io::{save_grid, GridMeta, ARTIFACT_VERSION};
use crate::phase_space::WignerGrid;
use crate::protocol::{cooling_saturation, three_pulse_run, write_readout_csv, ProtocolReport};
use crate::qnd_core::{coupling_from_drive, ClosedFormVariant, ConditionalState};
use crate::validation::{run_validation, Level, ValidationReport};

pub use config::{LoadedConfig, RunConfig};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "OPTOMECH_THREADS";

/// Options shared by all commands.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Escalate warnings (grid truncation, coupling inconsistent with the device) to errors.
    pub strict: bool,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn check_grid(grid: &WignerGrid, opts: RunOptions) -> Result<()> {
    match grid.check_truncation(TRUNCATION_WARN_RATIO) {
        Err(e) if opts.strict => Err(e),
        _ => Ok(()),
    }
}

/// Conditional state of the base config: closed form, or the amplitude-noise average
/// when a noise block with nonzero spread is present.
pub fn base_state(cfg: &RunConfig, opts: RunOptions) -> Result<(WignerGrid, serde_json::Value)> {
    let mech = cfg.mechanical_input()?;
    let g0k = cfg.g0_over_kappa()?;
    if let Some(noise) = cfg.noise.filter(|n| n.sigma_n > 0.0) {
        let grid = converged_average(&cfg.resource, &mech, g0k, noise, &cfg.grid, noise.node_count)?;
        let c = coupling_from_drive(g0k, noise.n_p_mean)?;
        let prov = json!({"kind": "amplitude_averaged", "noise": noise, "chi": c.chi, "omega": c.omega});
        return Ok((grid, prov));
    }
    let coupling = cfg.coupling()?;
    let device_coupling = coupling_from_drive(g0k, cfg.drive_photons()?)?;
    if (device_coupling.chi - coupling.chi).abs() > 0.02 * coupling.chi.max(1e-12) {
        let msg = format!(
            "chi = {} differs from the device value {:.4} at N_p = {:.4e}",
            coupling.chi,
            device_coupling.chi,
            cfg.drive_photons()?
        );
        if opts.strict {
            return Err(Error::Config(msg));
        }
        log::warn!("{msg}");
    }
    let state = ConditionalState::new(&cfg.resource, &mech, &coupling, ClosedFormVariant::Corrected)?;
    let grid = state.sample(&state.grid_spec(&cfg.grid))?;
    let prov = json!({"kind": "closed_form", "resource": cfg.resource, "mechanical": mech, "coupling": coupling});
    Ok((grid, prov))
}

/// `wigner.csv`, `wigner.meta.json`, `metrics.json`.
pub fn cmd_state(cfg: &LoadedConfig, out: &Path, opts: RunOptions) -> Result<MetricsReport> {
    let (grid, prov) = base_state(&cfg.config, opts)?;
    check_grid(&grid, opts)?;
    let metrics = MetricsReport::evaluate(&grid)?;
    fs::create_dir_all(out)?;
    let meta = GridMeta::for_grid(&grid, Some(cfg.hash.clone()), json!({"command": "state", "state": prov}));
    save_grid(out, "wigner", &grid, &meta)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

/// `(sigma_rel, n_p, (chi, omega, negativity))` of one photon-noise sweep point.
type NoiseRow = (f64, f64, Result<(f64, f64, f64)>);

/// Axis values, or the base value when the axis is empty.
fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// `sweep.csv` (one row per point, declared order, failures in the `error` column) and
/// `sweep.json` with the config hash and per-noise-level maxima.
pub fn cmd_sweep(cfg: &LoadedConfig, out: &Path, opts: RunOptions) -> Result<()> {
    let c = &cfg.config;
    let sweep = c.sweep.clone().ok_or_else(|| Error::Config("sweep command needs a `sweep` block".into()))?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(csv_err)?;
    let mut summary = json!({"artifact_version": ARTIFACT_VERSION, "config_hash": cfg.hash});
    match sweep {
        config::SweepConfig::PhotonNoise { n_p, sigma_rel, node_count } => {
            let mech = c.mechanical_input()?;
            let g0k = c.g0_over_kappa()?;
            let base_sigma = if c.resource.n_p > 0.0 { c.resource.sigma_n / c.resource.n_p } else { 0.0 };
            let sigmas = axis(&sigma_rel, base_sigma);
            let photons = axis(&n_p, c.drive_photons()?);
            let points: Vec<(f64, f64)> = sigmas.iter().flat_map(|s| photons.iter().map(move |n| (*s, *n))).collect();
            let rows: Vec<NoiseRow> = points
                .par_iter()
                .map(|&(s, n)| {
                    let r = (|| {
                        let grid =
                            converged_average(&c.resource, &mech, g0k, NoiseSpec::relative(n, s), &c.grid, node_count)?;
                        check_grid(&grid, opts)?;
                        let cp = coupling_from_drive(g0k, n)?;
                        Ok((cp.chi, cp.omega, total_negativity(&grid)))
                    })();
                    (s, n, r)
                })
                .collect();
            w.write_record(["n_p", "sigma_rel", "chi", "omega", "negativity", "error"]).map_err(csv_err)?;
            let mut argmax = Vec::new();
            for s in &sigmas {
                let mut best: Option<(f64, f64)> = None;
                for (rs, n, r) in rows.iter().filter(|(rs, ..)| rs == s) {
                    let rec = match r {
                        Ok((chi, omega, neg)) => {
                            if best.is_none_or(|b| *neg > b.1) {
                                best = Some((*n, *neg));
                            }
                            [fmt(*n), fmt(*rs), fmt(*chi), fmt(*omega), fmt(*neg), String::new()]
                        }
                        Err(e) => [fmt(*n), fmt(*rs), String::new(), String::new(), String::new(), e.to_string()],
                    };
                    w.write_record(&rec).map_err(csv_err)?;
                }
                if let Some((n, v)) = best {
                    argmax.push(json!({"sigma_rel": s, "n_p": n, "negativity": v}));
                }
            }
            summary["kind"] = json!("photon_noise");
            summary["argmax"] = json!(argmax);
        }
        config::SweepConfig::Occupancy { n_bar, r, m } => {
            let coupling = c.coupling()?;
            let base_nbar = match c.mechanical {
                config::MechanicalConfig::Thermal(n) => n,
                _ => {
                    let mech = c.mechanical_input()?;
                    if n_bar.is_empty() && mech.v_x != mech.v_p {
                        return Err(Error::Config("occupancy sweep needs a thermal mechanical input".into()));
                    }
                    mech.v_x - 0.5
                }
            };
            let points: Vec<(f64, u32, f64)> = axis(&r, c.resource.r)
                .into_iter()
                .flat_map(|rv| {
                    let nb = axis(&n_bar, base_nbar);
                    axis(&m, c.resource.m)
                        .into_iter()
                        .flat_map(move |mv| nb.clone().into_iter().map(move |n| (rv, mv, n)))
                })
                .collect();
            let rows: Vec<Result<MetricsReport>> = points
                .par_iter()
                .map(|&(rv, mv, n)| {
                    let res = crate::optical_source::ResourceParams { r: rv, m: mv, ..c.resource };
                    let mech = crate::qnd_core::MechanicalInput::thermal(n)?;
                    let st = ConditionalState::new(&res, &mech, &coupling, ClosedFormVariant::Corrected)?;
                    let grid = st.sample(&st.grid_spec(&c.grid))?;
                    check_grid(&grid, opts)?;
                    MetricsReport::evaluate(&grid)
                })
                .collect();
            w.write_record([
                "n_bar",
                "r",
                "m",
                "negativity",
                "macroscopicity",
                "v_x",
                "v_p",
                "mean_x",
                "mean_p",
                "purity",
                "fringe_d",
                "error",
            ])
            .map_err(csv_err)?;
            for ((rv, mv, n), row) in points.iter().zip(&rows) {
                let mut rec = vec![fmt(*n), fmt(*rv), mv.to_string()];
                match row {
                    Ok(mr) => {
                        rec.extend(
                            [mr.negativity, mr.macroscopicity, mr.v_x, mr.v_p, mr.mean_x, mr.mean_p, mr.purity]
                                .map(fmt),
                        );
                        rec.push(mr.fringe_d.map(fmt).unwrap_or_default());
                        rec.push(String::new());
                    }
                    Err(e) => {
                        rec.extend(std::iter::repeat_n(String::new(), 8));
                        rec.push(e.to_string());
                    }
                }
                w.write_record(&rec).map_err(csv_err)?;
            }
            summary["kind"] = json!("occupancy");
            summary["failed_points"] = json!(rows.iter().filter(|r| r.is_err()).count());
        }
    }
    w.flush()?;
    write_json(&out.join("sweep.json"), &summary)?;
    Ok(())
}

/// `protocol.json`, `prepared.csv` / `prepared.meta.json`, and `readout.csv` when readout
/// phases are given.
pub fn cmd_protocol(cfg: &LoadedConfig, out: &Path, opts: RunOptions) -> Result<ProtocolReport> {
    let c = &cfg.config;
    let block = c.protocol.clone().ok_or_else(|| Error::Config("protocol command needs a `protocol` block".into()))?;
    let run = three_pulse_run(&c.device, &c.resource, &block.plan)?;
    check_grid(&run.prepared, opts)?;
    let saturation = if block.saturation_chi_c.is_empty() {
        Vec::new()
    } else {
        cooling_saturation(&c.device, &c.resource, &block.plan, &block.saturation_chi_c)?
    };
    let report = ProtocolReport::new(&c.device, &block.plan, &run, saturation)?;
    fs::create_dir_all(out)?;
    let meta = GridMeta::for_grid(&run.prepared, Some(cfg.hash.clone()), json!({"command": "protocol"}));
    save_grid(out, "prepared", &run.prepared, &meta)?;
    if !run.readouts.is_empty() {
        write_readout_csv(&run.readouts, fs::File::create(out.join("readout.csv"))?)?;
    }
    let mut doc = serde_json::to_value(&report)?;
    doc["artifact_version"] = json!(ARTIFACT_VERSION);
    doc["config_hash"] = json!(cfg.hash);
    write_json(&out.join("protocol.json"), &doc)?;
    Ok(report)
}

/// Runs the check suite, writes `validate.json` when `out` is given, and fails with a
/// validation error naming the failed checks.
pub fn cmd_validate(level: Level, variant: ClosedFormVariant, out: Option<&Path>) -> Result<ValidationReport> {
    let report = run_validation(level, variant);
    eprint!("{}", report.table());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("validate.json"), &report)?;
    }
    if !report.passed {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        return Err(Error::Validation(format!("failed checks: {}", names.join(", "))));
    }
    Ok(report)
}

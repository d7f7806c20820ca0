//! Grid serialization: `x,p,w` CSV plus a JSON sidecar.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Axis, GridSpec, PhasePoint, WignerGrid};
use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: &str = concat!("optomech-", env!("CARGO_PKG_VERSION"), "/grid-1");

/// Sidecar describing a grid CSV. Coordinates in the CSV are local; add `frame_offset`
/// to get lab-frame quadratures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMeta {
    pub artifact_version: String,
    pub x_axis: Axis,
    pub p_axis: Axis,
    pub frame_offset: PhasePoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Free-form provenance: state parameters, command, label.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl GridMeta {
    pub fn for_grid(grid: &WignerGrid, config_hash: Option<String>, provenance: serde_json::Value) -> Self {
        let spec = grid.spec();
        Self {
            artifact_version: ARTIFACT_VERSION.to_string(),
            x_axis: spec.x,
            p_axis: spec.p,
            frame_offset: spec.frame_offset,
            config_hash,
            provenance,
        }
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec::new(self.x_axis, self.p_axis, self.frame_offset)
    }
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// 17 significant digits.
#[inline]
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_grid_csv<W: Write>(grid: &WignerGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["x", "p", "w"]).map_err(to_io)?;
    let spec = grid.spec();
    let xs: Vec<String> = spec.x.coords().into_iter().map(fmt17).collect();
    for ip in 0..spec.p.count {
        let p = fmt17(spec.p.coord(ip));
        for (ix, x) in xs.iter().enumerate() {
            w.write_record([x.as_str(), p.as_str(), fmt17(grid.at(ix, ip)).as_str()]).map_err(to_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write `<stem>.csv` and `<stem>.meta.json` into `dir`.
pub fn save_grid(dir: &Path, stem: &str, grid: &WignerGrid, meta: &GridMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let file = BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?);
    write_grid_csv(grid, file)?;
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    std::fs::write(dir.join(format!("{stem}.meta.json")), json)?;
    Ok(())
}

/// Read a grid back from CSV text and its sidecar; values must follow the declared layout.
pub fn read_grid<R: Read>(csv_in: R, meta: &GridMeta) -> Result<WignerGrid> {
    let spec = meta.spec();
    let mut rdr = csv::Reader::from_reader(csv_in);
    let headers = rdr.headers().map_err(|e| Error::Io(e.into()))?;
    if headers != vec!["x", "p", "w"] {
        return Err(Error::InvalidParameter(format!("unexpected grid header {headers:?}")));
    }
    let mut values = Vec::with_capacity(spec.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io(e.into()))?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("bad grid row {}", i + 2)))
        };
        let (x, p) = (parse(0)?, parse(1)?);
        let (ix, ip) = (i % spec.x.count, i / spec.x.count);
        let tol = 1e-9 * (spec.x.step + spec.p.step);
        if (x - spec.x.coord(ix)).abs() > tol || (p - spec.p.coord(ip)).abs() > tol {
            return Err(Error::InvalidParameter(format!("grid row {} off the declared axes", i + 2)));
        }
        values.push(parse(2)?);
    }
    WignerGrid::from_values(&spec, values)
}

pub fn load_grid(dir: &Path, stem: &str) -> Result<(WignerGrid, GridMeta)> {
    let meta: GridMeta = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.meta.json")))?)?;
    let grid = read_grid(File::open(dir.join(format!("{stem}.csv")))?, &meta)?;
    Ok((grid, meta))
}

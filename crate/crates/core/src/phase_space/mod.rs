//! Phase-space conventions and containers.
//!
//! Units throughout: ħ = 1, `[x, p] = i`, vacuum quadrature variance 1/2. Only the
//! `protocol` module handles dimensionful device numbers.

mod grid;
pub mod io;
pub mod special;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{Axis, GridPolicy, GridSpec, Marginal, Quadrature, WignerGrid};
pub use special::{laguerre_assoc, GaussHermite};

/// Upper bound on |W| for any physical state.
pub const WIGNER_BOUND: f64 = 1.0 / PI;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub p: f64,
}

impl PhasePoint {
    pub const ORIGIN: PhasePoint = PhasePoint { x: 0.0, p: 0.0 };

    pub fn new(x: f64, p: f64) -> Self {
        Self { x, p }
    }
}

/// An evaluable real function on (x, p) phase space.
pub trait WignerField: Sync {
    fn value(&self, x: f64, p: f64) -> f64;

    /// Gaussian moment estimate of the state; drives grid sizing and quadrature node
    /// placement. Need not be exact.
    fn envelope(&self) -> GaussianState;
}

impl<T: WignerField + ?Sized> WignerField for &T {
    fn value(&self, x: f64, p: f64) -> f64 {
        (**self).value(x, p)
    }

    fn envelope(&self) -> GaussianState {
        (**self).envelope()
    }
}

/// A two-dimensional Gaussian state described by its first and second moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: PhasePoint,
    pub v_x: f64,
    pub v_p: f64,
    #[serde(default)]
    pub cov_xp: f64,
}

impl GaussianState {
    pub fn new(mean: PhasePoint, v_x: f64, v_p: f64) -> Result<Self> {
        Self::with_covariance(mean, v_x, v_p, 0.0)
    }

    pub fn with_covariance(mean: PhasePoint, v_x: f64, v_p: f64, cov_xp: f64) -> Result<Self> {
        let s = Self { mean, v_x, v_p, cov_xp };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if !(self.v_x > 0.0 && self.v_p > 0.0) || !self.v_x.is_finite() || !self.v_p.is_finite() {
            return Err(Error::InvalidState(format!(
                "variances must be positive and finite (v_x = {}, v_p = {})",
                self.v_x, self.v_p
            )));
        }
        if self.determinant() <= 0.0 {
            return Err(Error::InvalidState("covariance matrix is not positive definite".into()));
        }
        Ok(())
    }

    pub fn vacuum() -> Self {
        Self { mean: PhasePoint::ORIGIN, v_x: 0.5, v_p: 0.5, cov_xp: 0.0 }
    }

    /// Thermal state with mean occupation `n_bar`: variance `n_bar + 1/2` in both quadratures.
    pub fn thermal(n_bar: f64) -> Self {
        let v = n_bar + 0.5;
        Self { mean: PhasePoint::ORIGIN, v_x: v, v_p: v, cov_xp: 0.0 }
    }

    /// Phase-squeezed vacuum: `v_x = e^{2r}/2`, `v_p = e^{-2r}/2`.
    pub fn squeezed_vacuum(r: f64) -> Self {
        Self { mean: PhasePoint::ORIGIN, v_x: (2.0 * r).exp() / 2.0, v_p: (-2.0 * r).exp() / 2.0, cov_xp: 0.0 }
    }

    pub fn determinant(&self) -> f64 {
        self.v_x * self.v_p - self.cov_xp * self.cov_xp
    }

    /// Robertson–Schrödinger bound `det ≥ 1/4`.
    pub fn is_physical(&self) -> bool {
        self.determinant() >= 0.25 * (1.0 - 1e-12)
    }

    pub fn purity(&self) -> f64 {
        0.5 / self.determinant().sqrt()
    }
}

/// Normalized Gaussian Wigner function.
#[derive(Clone, Copy, Debug)]
pub struct GaussianWigner {
    state: GaussianState,
    inv_xx: f64,
    inv_pp: f64,
    inv_xp: f64,
    norm: f64,
}

pub fn gaussian_wigner(state: GaussianState) -> Result<GaussianWigner> {
    state.check()?;
    if !state.is_physical() {
        log::warn!("Gaussian state violates the uncertainty bound (det = {:.4e} < 1/4)", state.determinant());
    }
    let det = state.determinant();
    Ok(GaussianWigner {
        state,
        inv_xx: state.v_p / det,
        inv_pp: state.v_x / det,
        inv_xp: -state.cov_xp / det,
        norm: 1.0 / (2.0 * PI * det.sqrt()),
    })
}

impl GaussianWigner {
    pub fn state(&self) -> GaussianState {
        self.state
    }
}

impl WignerField for GaussianWigner {
    fn value(&self, x: f64, p: f64) -> f64 {
        let dx = x - self.state.mean.x;
        let dp = p - self.state.mean.p;
        let q = self.inv_xx * dx * dx + 2.0 * self.inv_xp * dx * dp + self.inv_pp * dp * dp;
        self.norm * (-0.5 * q).exp()
    }

    fn envelope(&self) -> GaussianState {
        self.state
    }
}

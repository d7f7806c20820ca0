use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GaussianState, PhasePoint, WignerField};
use crate::error::{Error, Result};

/// Uniform 1D sampling axis. `count` is always odd so composite Simpson applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub center: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    /// Axis spanning `center ± half_width` with at least `count` points (rounded up to odd).
    pub fn new(center: f64, half_width: f64, count: usize) -> Self {
        let count = count.max(3) | 1;
        let step = 2.0 * half_width / (count - 1) as f64;
        Self { center, step, count }
    }

    pub fn with_step(center: f64, step: f64, count: usize) -> Self {
        Self { center, step, count: count.max(3) | 1 }
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.center + (i as f64 - ((self.count - 1) / 2) as f64) * self.step
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.coord(i)).collect()
    }

    pub fn start(&self) -> f64 {
        self.coord(0)
    }

    pub fn end(&self) -> f64 {
        self.coord(self.count - 1)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.step * (self.count - 1) as f64
    }

    /// Every other point, same span.
    pub fn coarsened(&self) -> Axis {
        Axis { center: self.center, step: 2.0 * self.step, count: (self.count - 1) / 2 + 1 }
    }

    /// Composite Simpson weights (1, 4, 2, ..., 4, 1) · step / 3.
    pub fn simpson_weights(&self) -> Vec<f64> {
        simpson_weights(self.count, self.step)
    }

    fn check(&self) -> Result<()> {
        if self.count < 3 || self.count.is_multiple_of(2) || !(self.step > 0.0) || !self.center.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "axis needs an odd count >= 3 and a positive step (count = {}, step = {})",
                self.count, self.step
            )));
        }
        Ok(())
    }
}

pub(crate) fn simpson_weights(count: usize, step: f64) -> Vec<f64> {
    let mut w = vec![0.0; count];
    let mut odd_tail = false;
    let n = if count.is_multiple_of(2) {
        odd_tail = true;
        count - 1
    } else {
        count
    };
    for (i, wi) in w.iter_mut().enumerate().take(n) {
        *wi = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        } * step
            / 3.0;
    }
    if odd_tail {
        w[count - 2] += 0.5 * step;
        w[count - 1] += 0.5 * step;
    }
    w
}

/// Sampling layout of a Wigner grid: local axes plus the lab-frame offset of their origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: Axis,
    pub p: Axis,
    pub frame_offset: PhasePoint,
}

impl GridSpec {
    pub fn new(x: Axis, p: Axis, frame_offset: PhasePoint) -> Self {
        Self { x, p, frame_offset }
    }

    /// Square window `[-half_width, half_width]²` about the lab origin.
    pub fn square(half_width: f64, count: usize) -> Self {
        let a = Axis::new(0.0, half_width, count);
        Self { x: a, p: a, frame_offset: PhasePoint::ORIGIN }
    }

    /// Frame centered on the envelope mean, extending `sigmas` standard deviations.
    pub fn around(env: &GaussianState, sigmas: f64, count: usize) -> Self {
        Self {
            x: Axis::new(0.0, sigmas * env.v_x.sqrt(), count),
            p: Axis::new(0.0, sigmas * env.v_p.sqrt(), count),
            frame_offset: env.mean,
        }
    }

    pub fn lab(&self, ix: usize, ip: usize) -> PhasePoint {
        PhasePoint::new(self.frame_offset.x + self.x.coord(ix), self.frame_offset.p + self.p.coord(ip))
    }

    pub fn coarsened(&self) -> GridSpec {
        GridSpec { x: self.x.coarsened(), p: self.p.coarsened(), frame_offset: self.frame_offset }
    }

    pub fn len(&self) -> usize {
        self.x.count * self.p.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Automatic grid sizing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridPolicy {
    /// Minimum points per axis (rounded up to odd).
    pub min_count: usize,
    /// Half-width in envelope standard deviations before polynomial widening.
    pub extent_sigmas: f64,
    /// Extra standard deviations per subtracted photon (polynomial prefactors widen the tails).
    pub sigmas_per_photon: f64,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self { min_count: 513, extent_sigmas: 6.0, sigmas_per_photon: 1.0 }
    }
}

impl GridPolicy {
    /// Grid centered on the envelope. `fringe_d` is the largest phase-space displacement
    /// between superposed components along each axis; the step is capped at `π/(8 d)`.
    pub fn spec_for(&self, env: &GaussianState, photons: u32, fringe_d: Option<PhasePoint>) -> GridSpec {
        let sig = self.extent_sigmas + self.sigmas_per_photon * photons as f64;
        let hx = sig * env.v_x.sqrt();
        let hp = sig * env.v_p.sqrt();
        let count_for = |half: f64, d: Option<f64>| {
            let mut count = self.min_count;
            if let Some(d) = d.filter(|d| *d > 0.0) {
                let max_step = std::f64::consts::PI / (8.0 * d);
                let needed = (2.0 * half / max_step).ceil() as usize + 1;
                count = count.max(needed);
            }
            count
        };
        GridSpec {
            x: Axis::new(0.0, hx, count_for(hx, fringe_d.map(|d| d.x))),
            p: Axis::new(0.0, hp, count_for(hp, fringe_d.map(|d| d.p))),
            frame_offset: env.mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    X,
    P,
}

/// A Wigner function sampled on a uniform grid.
///
/// Values are stored row-major over p then x: `values[ip * nx + ix]`. Axis coordinates
/// are local; the lab-frame point is `frame_offset + (x, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl WignerGrid {
    /// Fill from a function of local coordinates.
    pub fn from_local_fn(spec: &GridSpec, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let nx = spec.x.count;
        let xs = spec.x.coords();
        let mut values = vec![0.0; spec.len()];
        values.par_chunks_mut(nx).enumerate().for_each(|(ip, row)| {
            let p = spec.p.coord(ip);
            for (v, &x) in row.iter_mut().zip(&xs) {
                *v = f(x, p);
            }
        });
        Self { spec: *spec, values }
    }

    /// Fill from a function of lab-frame coordinates.
    pub fn from_fn(spec: &GridSpec, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let off = spec.frame_offset;
        Self::from_local_fn(spec, |x, p| f(off.x + x, off.p + p))
    }

    pub fn sample(field: &(impl WignerField + ?Sized), spec: &GridSpec) -> Self {
        Self::from_fn(spec, |x, p| field.value(x, p))
    }

    pub fn from_values(spec: &GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.x.check()?;
        spec.p.check()?;
        if values.len() != spec.len() {
            return Err(Error::InvalidParameter(format!("grid expects {} values, got {}", spec.len(), values.len())));
        }
        Ok(Self { spec: *spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn x_axis(&self) -> &Axis {
        &self.spec.x
    }

    pub fn p_axis(&self) -> &Axis {
        &self.spec.p
    }

    pub fn frame_offset(&self) -> PhasePoint {
        self.spec.frame_offset
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.values[ip * self.spec.x.count + ix]
    }

    /// Composite-Simpson integral of `transform(W)` over the grid.
    ///
    /// Summation order is fixed (rows of constant p, ascending x) so the result does
    /// not depend on thread count.
    pub fn integrate(&self, transform: impl Fn(f64) -> f64) -> f64 {
        let wx = self.spec.x.simpson_weights();
        let wp = self.spec.p.simpson_weights();
        let nx = self.spec.x.count;
        let mut total = 0.0;
        for (ip, wpi) in wp.iter().enumerate() {
            let row = &self.values[ip * nx..(ip + 1) * nx];
            let mut acc = 0.0;
            for (v, wxi) in row.iter().zip(&wx) {
                acc += wxi * transform(*v);
            }
            total += wpi * acc;
        }
        total
    }

    /// Simpson integral of `f(x_lab, p_lab, W)`.
    pub fn integrate_with(&self, f: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let wx = self.spec.x.simpson_weights();
        let wp = self.spec.p.simpson_weights();
        let nx = self.spec.x.count;
        let off = self.spec.frame_offset;
        let xs = self.spec.x.coords();
        let mut total = 0.0;
        for (ip, wpi) in wp.iter().enumerate() {
            let p = off.p + self.spec.p.coord(ip);
            let row = &self.values[ip * nx..(ip + 1) * nx];
            let mut acc = 0.0;
            for ((v, wxi), x) in row.iter().zip(&wx).zip(&xs) {
                acc += wxi * f(off.x + x, p, *v);
            }
            total += wpi * acc;
        }
        total
    }

    /// Scale so that the grid integrates to one; returns the pre-normalization integral.
    pub fn normalize(&mut self) -> Result<f64> {
        let norm = self.integrate(|v| v);
        if !norm.is_finite() || norm.abs() < f64::MIN_POSITIVE {
            return Err(Error::InvalidState(format!("cannot normalize grid with integral {norm}")));
        }
        let inv = 1.0 / norm;
        self.values.iter_mut().for_each(|v| *v *= inv);
        Ok(norm)
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn peak_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn boundary_max(&self) -> f64 {
        let nx = self.spec.x.count;
        let np = self.spec.p.count;
        let mut m = 0.0f64;
        for ix in 0..nx {
            m = m.max(self.at(ix, 0).abs()).max(self.at(ix, np - 1).abs());
        }
        for ip in 0..np {
            m = m.max(self.at(0, ip).abs()).max(self.at(nx - 1, ip).abs());
        }
        m
    }

    /// Boundary-to-peak ratio of |W|.
    pub fn boundary_ratio(&self) -> f64 {
        let peak = self.peak_abs();
        if peak == 0.0 {
            0.0
        } else {
            self.boundary_max() / peak
        }
    }

    /// Estimated probability mass beyond the grid: |W| mass in the outer 1/16 of each axis.
    pub fn leaked_mass_estimate(&self) -> f64 {
        let nx = self.spec.x.count;
        let np = self.spec.p.count;
        let bx = (nx / 16).max(1);
        let bp = (np / 16).max(1);
        let cell = self.spec.x.step * self.spec.p.step;
        let mut acc = 0.0;
        for ip in 0..np {
            for ix in 0..nx {
                if ix < bx || ix >= nx - bx || ip < bp || ip >= np - bp {
                    acc += self.at(ix, ip).abs();
                }
            }
        }
        acc * cell
    }

    /// Extent check: boundary values must stay below `ratio_tol` of the peak.
    pub fn check_truncation(&self, ratio_tol: f64) -> Result<()> {
        let ratio = self.boundary_ratio();
        if ratio > ratio_tol {
            let leaked = self.leaked_mass_estimate();
            log::warn!("grid truncation: boundary/peak {ratio:.3e}, estimated leaked mass {leaked:.3e}");
            return Err(Error::Truncation { leaked, ratio });
        }
        Ok(())
    }

    /// Marginal density along `axis` (integrating out the other quadrature).
    pub fn marginal(&self, axis: Quadrature) -> Marginal {
        let nx = self.spec.x.count;
        let np = self.spec.p.count;
        match axis {
            Quadrature::X => {
                let wp = self.spec.p.simpson_weights();
                let mut density = vec![0.0; nx];
                for (ip, w) in wp.iter().enumerate() {
                    for (ix, d) in density.iter_mut().enumerate() {
                        *d += w * self.values[ip * nx + ix];
                    }
                }
                Marginal { axis: self.spec.x, offset: self.spec.frame_offset.x, density }
            }
            Quadrature::P => {
                let wx = self.spec.x.simpson_weights();
                let density = (0..np)
                    .map(|ip| {
                        let row = &self.values[ip * nx..(ip + 1) * nx];
                        row.iter().zip(&wx).map(|(v, w)| v * w).sum()
                    })
                    .collect();
                Marginal { axis: self.spec.p, offset: self.spec.frame_offset.p, density }
            }
        }
    }

    /// Accumulate `weight · other` into this grid; layouts must match exactly.
    pub fn add_scaled(&mut self, other: &WignerGrid, weight: f64) -> Result<()> {
        if other.spec != self.spec {
            return Err(Error::InvalidParameter("grid layouts differ".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += weight * b;
        }
        Ok(())
    }

    /// Largest pointwise difference to a grid with the same sample positions.
    pub fn max_abs_diff(&self, other: &WignerGrid) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "grid layouts differ");
        self.values.iter().zip(&other.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Free harmonic evolution by a quarter period, `W'(x, p) = W(-p, x)`.
    ///
    /// Exact permutation of samples: axes and frame offset are relabeled, so four
    /// applications reproduce the original grid bit for bit.
    pub fn rotate_quarter(&self) -> WignerGrid {
        let old = self.spec;
        let spec = GridSpec {
            x: old.p,
            p: Axis { center: -old.x.center, step: old.x.step, count: old.x.count },
            frame_offset: PhasePoint::new(old.frame_offset.p, -old.frame_offset.x),
        };
        let nx_new = spec.x.count;
        let nx_old = old.x.count;
        let mut values = vec![0.0; spec.len()];
        for ip in 0..spec.p.count {
            for ix in 0..nx_new {
                values[ip * nx_new + ix] = self.values[ix * nx_old + (nx_old - 1 - ip)];
            }
        }
        WignerGrid { spec, values }
    }

    /// Every other sample along both axes (same span, twice the step).
    pub fn coarsened(&self) -> WignerGrid {
        let spec = self.spec.coarsened();
        let nx = self.spec.x.count;
        let values = (0..spec.p.count)
            .flat_map(|ip| (0..spec.x.count).map(move |ix| (ix, ip)))
            .map(|(ix, ip)| self.values[2 * ip * nx + 2 * ix])
            .collect();
        WignerGrid { spec, values }
    }

    /// Bilinear interpolation at a lab-frame point; zero outside the grid.
    pub fn interpolate(&self, x: f64, p: f64) -> f64 {
        let lx = x - self.spec.frame_offset.x;
        let lp = p - self.spec.frame_offset.p;
        let fx = (lx - self.spec.x.start()) / self.spec.x.step;
        let fp = (lp - self.spec.p.start()) / self.spec.p.step;
        if !(fx >= 0.0 && fp >= 0.0) {
            return 0.0;
        }
        let ix = fx.floor() as usize;
        let ip = fp.floor() as usize;
        if ix + 1 >= self.spec.x.count || ip + 1 >= self.spec.p.count {
            return 0.0;
        }
        let tx = fx - ix as f64;
        let tp = fp - ip as f64;
        let v00 = self.at(ix, ip);
        let v10 = self.at(ix + 1, ip);
        let v01 = self.at(ix, ip + 1);
        let v11 = self.at(ix + 1, ip + 1);
        (1.0 - tp) * ((1.0 - tx) * v00 + tx * v10) + tp * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// 1D density on a uniform axis (local coordinates; lab = `offset + coord`).
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub axis: Axis,
    pub offset: f64,
    pub density: Vec<f64>,
}

impl Marginal {
    pub fn integral(&self) -> f64 {
        simpson_weights(self.density.len(), self.axis.step).iter().zip(&self.density).map(|(w, d)| w * d).sum()
    }

    /// Lab-frame mean and variance.
    pub fn mean_variance(&self) -> (f64, f64) {
        let w = simpson_weights(self.density.len(), self.axis.step);
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for (i, (wi, d)) in w.iter().zip(&self.density).enumerate() {
            let x = self.axis.coord(i);
            m0 += wi * d;
            m1 += wi * d * x;
        }
        let mean_local = m1 / m0;
        let mut m2 = 0.0;
        for (i, (wi, d)) in w.iter().zip(&self.density).enumerate() {
            let dx = self.axis.coord(i) - mean_local;
            m2 += wi * d * dx * dx;
        }
        (self.offset + mean_local, m2 / m0)
    }

    pub fn lab_coord(&self, i: usize) -> f64 {
        self.offset + self.axis.coord(i)
    }

    /// Interior local maxima as `(lab position, value)`, refined by a parabola through
    /// the three neighbouring samples.
    pub fn local_maxima(&self) -> Vec<(f64, f64)> {
        let d = &self.density;
        let mut out = Vec::new();
        for i in 1..d.len().saturating_sub(1) {
            if d[i] > d[i - 1] && d[i] >= d[i + 1] {
                let denom = d[i - 1] - 2.0 * d[i] + d[i + 1];
                let shift = if denom != 0.0 { 0.5 * (d[i - 1] - d[i + 1]) / denom } else { 0.0 };
                let value = d[i] - 0.25 * (d[i - 1] - d[i + 1]) * shift;
                out.push((self.lab_coord(i) + shift * self.axis.step, value));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{gaussian_wigner, GaussianState};

    #[test]
    fn axis_is_odd_and_symmetric() {
        let a = Axis::new(1.0, 2.0, 512);
        assert_eq!(a.count, 513);
        assert!((a.start() + 1.0).abs() < 1e-14);
        assert!((a.end() - 3.0).abs() < 1e-14);
        assert_eq!(a.coord(256), 1.0);
        let c = a.coarsened();
        assert_eq!(c.count, 257);
        assert!((c.end() - a.end()).abs() < 1e-14);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let w = simpson_weights(11, 0.1);
        let s: f64 = w.iter().enumerate().map(|(i, wi)| wi * (i as f64 * 0.1).powi(3)).sum();
        assert!((s - 0.25).abs() < 1e-14);
    }

    #[test]
    fn vacuum_grid_normalization_and_marginals() {
        let w = gaussian_wigner(GaussianState::vacuum()).unwrap();
        let g = WignerGrid::sample(&w, &GridSpec::square(8.0, 401));
        assert!((g.integrate(|v| v) - 1.0).abs() < 1e-10);
        assert!((g.integrate(f64::abs) - 1.0).abs() < 1e-10);
        let (mean, var) = g.marginal(Quadrature::X).mean_variance();
        assert!(mean.abs() < 1e-12);
        assert!((var - 0.5).abs() < 1e-10);
        let th = gaussian_wigner(GaussianState::thermal(1.0)).unwrap();
        let g = WignerGrid::sample(&th, &GridSpec::square(14.0, 401));
        let m = g.marginal(Quadrature::P);
        assert!((m.integral() - 1.0).abs() < 1e-10);
        assert!((m.mean_variance().1 - 1.5).abs() < 1e-9);
    }

    #[test]
    fn quadrature_converges_under_refinement() {
        let s = GaussianState::with_covariance(PhasePoint::new(0.2, 0.1), 0.8, 1.7, 0.3).unwrap();
        let w = gaussian_wigner(s).unwrap();
        let spec = GridSpec::around(&s, 10.0, 101);
        let fine = GridSpec::around(&s, 10.0, 201);
        let a = WignerGrid::sample(&w, &spec).integrate(|v| v * v);
        let b = WignerGrid::sample(&w, &fine).integrate(|v| v * v);
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn quarter_rotation_swaps_and_composes_to_identity() {
        let s = GaussianState::new(PhasePoint::new(1.0, -3.0), 0.3, 2.0).unwrap();
        let w = gaussian_wigner(s).unwrap();
        let spec = GridSpec::new(Axis::new(0.1, 4.0, 61), Axis::new(-0.2, 9.0, 81), PhasePoint::new(1.0, -3.0));
        let g = WignerGrid::sample(&w, &spec);
        let r = g.rotate_quarter();
        let (mx, vx) = r.marginal(Quadrature::X).mean_variance();
        let (mp, vp) = r.marginal(Quadrature::P).mean_variance();
        // W'(x, p) = W(-p, x): (x, p) -> (p, -x), so the mean moves from (1, -3) to (-3, -1).
        assert!((mx + 3.0).abs() < 1e-6 && (mp + 1.0).abs() < 1e-6);
        assert!((vx - 2.0).abs() < 1e-5 && (vp - 0.3).abs() < 1e-5);
        let back = r.rotate_quarter().rotate_quarter().rotate_quarter();
        assert_eq!(back, g);
    }

    #[test]
    fn truncation_check_flags_small_windows() {
        let w = gaussian_wigner(GaussianState::thermal(3.0)).unwrap();
        let g = WignerGrid::sample(&w, &GridSpec::square(2.0, 41));
        assert!(matches!(g.check_truncation(1e-12), Err(Error::Truncation { .. })));
        let g = WignerGrid::sample(&w, &GridSpec::square(30.0, 201));
        assert!(g.check_truncation(1e-12).is_ok());
    }

    #[test]
    fn policy_respects_fringe_guard() {
        let env = GaussianState::new(PhasePoint::new(0.0, 400.0), 0.04, 12.0).unwrap();
        let spec = GridPolicy::default().spec_for(&env, 3, Some(PhasePoint::new(40.0, 0.0)));
        assert!(spec.x.step <= std::f64::consts::PI / 320.0 + 1e-15);
        assert!(spec.p.count >= 513);
        assert_eq!(spec.frame_offset.p, 400.0);
    }
}

//! Truncated number-basis simulation of squeeze → tap → photon counting → QND →
//! homodyne, used to cross-check the phase-space results at small displacements.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::phase_space::special::{hermite_functions, GaussHermite};
use crate::phase_space::{GridSpec, WignerGrid};

const LEAKAGE_LIMIT: f64 = 1e-8;
const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Population of the top three levels of a truncated vector.
fn top_leakage(amps: &[Complex64]) -> f64 {
    amps.iter().rev().take(3).map(|c| c.norm_sqr()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FockVector {
    pub amplitudes: Vec<Complex64>,
}

impl FockVector {
    pub fn basis(n: usize, dim: usize) -> Self {
        let mut amplitudes = vec![C0; dim];
        amplitudes[n] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn mean_photons(&self) -> f64 {
        self.amplitudes.iter().enumerate().map(|(n, c)| n as f64 * c.norm_sqr()).sum::<f64>() / self.norm_sqr()
    }

    pub fn leakage(&self) -> f64 {
        top_leakage(&self.amplitudes) / self.norm_sqr()
    }
}

/// Two-mode amplitudes `psi[(i, j)]` for `|i⟩_a |j⟩_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoModeVector {
    pub amplitudes: DMatrix<Complex64>,
}

impl TwoModeVector {
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Mean photon number of the second mode.
    pub fn mean_photons_b(&self) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.amplitudes.ncols() {
            acc += j as f64 * self.amplitudes.column(j).iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        acc / self.norm_sqr()
    }
}

/// Weighted mixture of normalized pure states.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<(f64, FockVector)>,
}

impl Ensemble {
    pub fn density_matrix(&self) -> DensityMatrix {
        let dim = self.members.first().map_or(1, |(_, v)| v.dim());
        let mut rho = DMatrix::zeros(dim, dim);
        for (w, v) in &self.members {
            let col = DVector::from_column_slice(&v.amplitudes);
            rho += (col.clone() * col.adjoint()) * Complex64::new(*w, 0.0);
        }
        DensityMatrix { entries: rho }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub entries: DMatrix<Complex64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensityChecks {
    pub hermiticity: f64,
    pub trace_defect: f64,
    pub min_eigenvalue: f64,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn thermal(n_bar: f64, dim: usize) -> Self {
        let mut rho = DMatrix::zeros(dim, dim);
        for (n, w) in thermal_weights(n_bar, 0.0).into_iter().enumerate().take(dim) {
            rho[(n, n)] = Complex64::new(w, 0.0);
        }
        Self { entries: rho }
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn checks(&self) -> DensityChecks {
        let herm = (&self.entries - self.entries.adjoint()).camax();
        let eig = nalgebra::SymmetricEigen::new(self.entries.clone());
        let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        DensityChecks { hermiticity: herm, trace_defect: (self.trace() - 1.0).abs(), min_eigenvalue }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.checks();
        if c.hermiticity > 1e-12 || c.trace_defect > 1e-10 || c.min_eigenvalue < -1e-9 {
            return Err(Error::InvalidState(format!(
                "density matrix checks failed: hermiticity {:.2e}, trace defect {:.2e}, min eigenvalue {:.2e}",
                c.hermiticity, c.trace_defect, c.min_eigenvalue
            )));
        }
        Ok(())
    }

    pub fn mean_photons(&self) -> f64 {
        self.entries.diagonal().iter().enumerate().map(|(n, c)| n as f64 * c.re).sum()
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    /// Population of the top three levels.
    pub fn leakage(&self) -> f64 {
        let d = self.dim();
        (d.saturating_sub(3)..d).map(|n| self.entries[(n, n)].re).sum()
    }

    /// Wigner function at one point from the number-basis kernels
    /// `W_{n+k,n} = (-1)^n e^{-ikθ} ℓ_n^k(2ρ²) / π`.
    pub fn wigner(&self, x: f64, p: f64) -> f64 {
        let d = self.dim();
        let z = 2.0 * (x * x + p * p);
        let theta = p.atan2(x);
        let mut ell = vec![0.0; d];
        let mut total = 0.0;
        for k in 0..d {
            laguerre_functions(k, z, &mut ell[..d - k]);
            let mut acc = C0;
            for (n, l) in ell.iter().enumerate().take(d - k) {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                acc += self.entries[(n + k, n)] * (sign * l);
            }
            let phase = Complex64::from_polar(1.0, -(k as f64) * theta);
            let term = (acc * phase).re;
            total += if k == 0 { term } else { 2.0 * term };
        }
        total / PI
    }
}

/// Normalized Laguerre functions `ℓ_n^k(z) = sqrt(n!/(n+k)!) z^{k/2} e^{-z/2} L_n^k(z)`
/// for `n = 0..out.len()`, by their stable three-term recurrence.
pub fn laguerre_functions(k: usize, z: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let kf = k as f64;
    let ln0 = if z > 0.0 {
        0.5 * kf * z.ln()
    } else if k == 0 {
        0.0
    } else {
        f64::NEG_INFINITY
    } - 0.5 * z
        - 0.5 * crate::phase_space::special::ln_factorial(k);
    out[0] = ln0.exp();
    if out.len() > 1 {
        out[1] = (1.0 + kf - z) * out[0] / (1.0 + kf).sqrt();
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0 + kf - z) * out[n] - (nf * (nf + kf)).sqrt() * out[n - 1])
            / ((nf + 1.0) * (nf + kf + 1.0)).sqrt();
    }
}

/// Bose weights `n̄^n / (n̄+1)^{n+1}`, truncated once the cumulative weight reaches
/// `1 - tail` (all weights when `tail == 0` up to a hard cap).
pub fn thermal_weights(n_bar: f64, tail: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let q = n_bar / (n_bar + 1.0);
    let mut w = 1.0 / (n_bar + 1.0);
    let mut cum = 0.0;
    for _ in 0..10_000 {
        out.push(w);
        cum += w;
        if cum >= 1.0 - tail || w == 0.0 {
            break;
        }
        w *= q;
    }
    out
}

/// Squeezed vacuum `S(r)|0⟩`, amplitudes `c_{2n} = sech(r)^{1/2} (-tanh r)^n sqrt((2n)!)/(2^n n!)`.
/// Positive `r` squeezes x; negative `r` squeezes p.
pub fn squeezed_vacuum_fock(r: f64, dim: usize) -> Result<FockVector> {
    let mut amplitudes = vec![C0; dim];
    let t = -r.tanh();
    let mut c = (1.0 / r.cosh()).sqrt();
    for n in 0.. {
        if 2 * n >= dim {
            break;
        }
        amplitudes[2 * n] = Complex64::new(c, 0.0);
        // c_{2n+2}/c_{2n} = t sqrt((2n+1)(2n+2)) / (2(n+1))
        let nf = n as f64;
        c *= t * ((2.0 * nf + 1.0) * (2.0 * nf + 2.0)).sqrt() / (2.0 * (nf + 1.0));
    }
    let v = FockVector { amplitudes };
    let leak = top_leakage(&v.amplitudes) + (1.0 - v.norm_sqr()).max(0.0);
    if leak > LEAKAGE_LIMIT {
        return Err(Error::FockLeakage { leakage: leak, limit: LEAKAGE_LIMIT });
    }
    Ok(v)
}

/// Beam splitter with intensity transmittivity `t` acting on `state ⊗ |0⟩`.
///
/// Convention: the input mode maps to `sqrt(t) a_out† - sqrt(1-t) a_tap†`, matching
/// the phase-space tap transform `W_S(a q - b q') W_V(b q + a q')`.
/// Returns amplitudes indexed `(out, tap)`.
pub fn beamsplit_fock(state: &FockVector, t: f64) -> Result<TwoModeVector> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!("transmittivity {t} outside (0, 1]")));
    }
    let d = state.dim();
    let a = t.sqrt();
    let b = (1.0 - t).sqrt();
    let mut out = DMatrix::from_element(d, d, C0);
    let ln_fact: Vec<f64> = (0..=d).map(crate::phase_space::special::ln_factorial).collect();
    for (n, c) in state.amplitudes.iter().enumerate() {
        if *c == C0 {
            continue;
        }
        for j in 0..=n {
            // sqrt(binom(n, j)) a^{n-j} (-b)^j
            let mag_ln = 0.5 * (ln_fact[n] - ln_fact[j] - ln_fact[n - j]);
            let ab = if n - j > 0 { a.powi((n - j) as i32) } else { 1.0 } * if j > 0 { b.powi(j as i32) } else { 1.0 };
            let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
            out[(n - j, j)] += c * (sign * mag_ln.exp() * ab);
        }
    }
    Ok(TwoModeVector { amplitudes: out })
}

/// Photon-counting outcome `m` on the second mode with efficiency `eta`.
///
/// For `eta < 1` the remaining mode is mixed; it is returned as an ensemble over the
/// true tap photon number `k` with POVM weight `binom(k, m) eta^m (1-eta)^{k-m}`.
pub fn pnr_condition_fock(two_mode: &TwoModeVector, m: usize, eta: f64) -> Result<(Ensemble, f64)> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("detector efficiency {eta} outside [0, 1]")));
    }
    let psi = &two_mode.amplitudes;
    let d_tap = psi.ncols();
    let mut members = Vec::new();
    let mut prob = 0.0;
    for k in m..d_tap {
        let povm = crate::phase_space::special::binomial(k, m)
            * if m > 0 { eta.powi(m as i32) } else { 1.0 }
            * if k > m { (1.0 - eta).powi((k - m) as i32) } else { 1.0 };
        if povm == 0.0 {
            continue;
        }
        let col: Vec<Complex64> = psi.column(k).iter().copied().collect();
        let n2: f64 = col.iter().map(|c| c.norm_sqr()).sum();
        if n2 == 0.0 {
            continue;
        }
        let w = povm * n2;
        prob += w;
        let inv = 1.0 / n2.sqrt();
        members.push((w, FockVector { amplitudes: col.into_iter().map(|c| c * inv).collect() }));
    }
    if !(prob > 0.0) {
        return Err(Error::ImpossibleHeralding(format!("outcome m = {m} has zero probability")));
    }
    for (w, _) in &mut members {
        *w /= prob;
    }
    Ok((Ensemble { members }, prob))
}

/// Eigenbasis of the truncated position operator `x = (a + a†)/sqrt(2)`.
///
/// Its eigenvalues are the Gauss–Hermite nodes and the eigenvectors are Hermite
/// functions at those nodes, normalized by the Christoffel function.
#[derive(Clone, Debug)]
struct PositionBasis {
    nodes: Vec<f64>,
    /// `vecs[(n, j)] = ⟨n|x_j⟩`.
    vecs: DMatrix<f64>,
}

impl PositionBasis {
    fn new(dim: usize) -> Self {
        let gh = GaussHermite::new(dim);
        let mut vecs = DMatrix::zeros(dim, dim);
        let mut buf = vec![0.0; dim];
        for (j, &t) in gh.nodes.iter().enumerate() {
            hermite_functions(t, &mut buf);
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            for n in 0..dim {
                vecs[(n, j)] = buf[n] / norm;
            }
        }
        Self { nodes: gh.nodes, vecs }
    }
}

/// `exp(i χ x_L ⊗ x_M)` on truncated optical and mechanical spaces, diagonalized exactly
/// in the product eigenbasis of the truncated position operators.
#[derive(Clone, Debug)]
pub struct QndUnitary {
    chi: f64,
    optical: PositionBasis,
    mech: PositionBasis,
    /// `phase[(i, j)] = exp(i χ λ_i μ_j)`.
    phase: DMatrix<Complex64>,
}

impl QndUnitary {
    pub fn new(chi: f64, dim_optical: usize, dim_mech: usize) -> Result<Self> {
        if !(chi >= 0.0) {
            return Err(Error::InvalidParameter(format!("chi = {chi} must be >= 0")));
        }
        let optical = PositionBasis::new(dim_optical);
        let mech = PositionBasis::new(dim_mech);
        let phase = DMatrix::from_fn(dim_optical, dim_mech, |i, j| {
            Complex64::from_polar(1.0, chi * optical.nodes[i] * mech.nodes[j])
        });
        Ok(Self { chi, optical, mech, phase })
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    /// `U ψ` for amplitudes indexed `(optical, mechanical)`; `inverse` applies `U†`.
    pub fn apply(&self, psi: &DMatrix<Complex64>, inverse: bool) -> DMatrix<Complex64> {
        let vl = self.optical.vecs.map(|v| Complex64::new(v, 0.0));
        let vm = self.mech.vecs.map(|v| Complex64::new(v, 0.0));
        let mut t = vl.transpose() * psi * &vm;
        for (c, ph) in t.iter_mut().zip(self.phase.iter()) {
            *c *= if inverse { ph.conj() } else { *ph };
        }
        vl * t * vm.transpose()
    }

    /// Largest entry of `U†U - 1` over the product basis states `|i, j⟩` with `i, j < probe`.
    pub fn unitarity_defect(&self, probe: usize) -> f64 {
        let (dl, dm) = (self.optical.nodes.len(), self.mech.nodes.len());
        let mut worst = 0.0f64;
        for i in 0..probe.min(dl) {
            for j in 0..probe.min(dm) {
                let mut e = DMatrix::from_element(dl, dm, C0);
                e[(i, j)] = Complex64::new(1.0, 0.0);
                let back = self.apply(&self.apply(&e, false), true);
                worst = worst.max((back - e).camax());
            }
        }
        worst
    }
}

/// Matrix of the truncated `p = i(a† - a)/sqrt(2)`.
fn momentum_op(dim: usize) -> DMatrix<Complex64> {
    let mut m = DMatrix::from_element(dim, dim, C0);
    for n in 1..dim {
        let s = (n as f64 / 2.0).sqrt();
        m[(n, n - 1)] = Complex64::new(0.0, s);
        m[(n - 1, n)] = Complex64::new(0.0, -s);
    }
    m
}

fn position_op(dim: usize) -> DMatrix<Complex64> {
    let mut m = DMatrix::from_element(dim, dim, C0);
    for n in 1..dim {
        let s = Complex64::new((n as f64 / 2.0).sqrt(), 0.0);
        m[(n, n - 1)] = s;
        m[(n - 1, n)] = s;
    }
    m
}

/// Heisenberg-picture residuals `max |⟨a|U†p_L U - p_L - χ x_M|b⟩|` and
/// `max |⟨a|U†x_M U - x_M|b⟩|` over product basis states below levels `(hl, hm)`.
///
/// The momentum kick moves population upward, so the truncation must extend well past
/// the checked levels (about 4× at χ = 1).
pub fn heisenberg_residuals(u: &QndUnitary, hl: usize, hm: usize) -> (f64, f64) {
    let (dl, dm) = (u.optical.nodes.len(), u.mech.nodes.len());
    let (hl, hm) = (hl.min(dl), hm.min(dm));
    let pl = momentum_op(dl);
    let xm = position_op(dm);
    let sp = low_block_sandwich(&u.optical.vecs, &u.mech.vecs, &pl, |i, j| u.phase[(i, j)], hl, hm);
    let sx = low_block_sandwich(&u.mech.vecs, &u.optical.vecs, &xm, |j, i| u.phase[(i, j)], hm, hl);
    let mut worst_p = 0.0f64;
    let mut worst_x = 0.0f64;
    for a1 in 0..hl {
        for b1 in 0..hl {
            for a2 in 0..hm {
                for b2 in 0..hm {
                    let same_l = if a1 == b1 { 1.0 } else { 0.0 };
                    let same_m = if a2 == b2 { 1.0 } else { 0.0 };
                    let expect_p = pl[(a1, b1)] * same_m + xm[(a2, b2)] * (u.chi * same_l);
                    let expect_x = xm[(a2, b2)] * same_l;
                    worst_p = worst_p.max((sp[(a1 * hm + a2, b1 * hm + b2)] - expect_p).norm());
                    worst_x = worst_x.max((sx[(a2 * hl + a1, b2 * hl + b1)] - expect_x).norm());
                }
            }
        }
    }
    (worst_p, worst_x)
}

/// `⟨a|U†(O ⊗ 1)U|b⟩` for `a, b` below `(h_op, h_other)`, indexed `a_op * h_other + a_other`.
///
/// `U` is diagonal in the product eigenbasis, so the sandwich factorizes over the
/// eigenvalues of the untouched mode.
fn low_block_sandwich(
    v_op: &DMatrix<f64>,
    v_other: &DMatrix<f64>,
    op: &DMatrix<Complex64>,
    phase: impl Fn(usize, usize) -> Complex64,
    h_op: usize,
    h_other: usize,
) -> DMatrix<Complex64> {
    let (d_op, d_other) = (v_op.nrows(), v_other.nrows());
    let v_op_c = v_op.map(|v| Complex64::new(v, 0.0));
    let op_t = v_op_c.transpose() * op * &v_op_c;
    let n = h_op * h_other;
    let mut out = DMatrix::from_element(n, n, C0);
    for j in 0..d_other {
        let a = DMatrix::from_fn(h_op, d_op, |r, i| v_op_c[(r, i)] * phase(i, j));
        let block = a.conjugate() * &op_t * a.transpose();
        for a2 in 0..h_other {
            for b2 in 0..h_other {
                let w = v_other[(a2, j)] * v_other[(b2, j)];
                if w == 0.0 {
                    continue;
                }
                for a1 in 0..h_op {
                    for b1 in 0..h_op {
                        out[(a1 * h_other + a2, b1 * h_other + b2)] += block[(a1, b1)] * w;
                    }
                }
            }
        }
    }
    out
}

/// `⟨p|n⟩ = (-i)^n ψ_n(p)` for n < dim.
pub fn momentum_overlaps(p: f64, dim: usize) -> Vec<Complex64> {
    let mut psi = vec![0.0; dim];
    hermite_functions(p, &mut psi);
    let phases =
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, 1.0)];
    psi.iter().enumerate().map(|(n, v)| phases[n % 4] * *v).collect()
}

/// Optical homodyne of the p quadrature on a two-mode vector `(optical, mechanical)`.
///
/// With `window == None` the projector is the exact eigenfunction overlap; otherwise the
/// outcome is accepted over `[p - w, p + w]`, integrated on Gauss–Legendre-like midpoints.
/// Returns the unnormalized mechanical density matrix (trace = outcome density).
pub fn homodyne_condition_fock(two_mode: &TwoModeVector, p_tilde: f64, window: Option<f64>) -> Result<DensityMatrix> {
    let psi = &two_mode.amplitudes;
    let (dl, dm) = (psi.nrows(), psi.ncols());
    let points: Vec<(f64, f64)> = match window {
        None => vec![(p_tilde, 1.0)],
        Some(w) if w > 0.0 => {
            let n = 41;
            let h = 2.0 * w / n as f64;
            (0..n).map(|i| (p_tilde - w + (i as f64 + 0.5) * h, h / (2.0 * w))).collect()
        }
        Some(w) => return Err(Error::InvalidParameter(format!("homodyne window {w} must be > 0"))),
    };
    let mut rho = DMatrix::from_element(dm, dm, C0);
    for (p, wt) in points {
        let ov = momentum_overlaps(p, dl);
        let mut phi = DVector::from_element(dm, C0);
        for j in 0..dm {
            let mut acc = C0;
            for i in 0..dl {
                acc += ov[i] * psi[(i, j)];
            }
            phi[j] = acc;
        }
        rho += (phi.clone() * phi.adjoint()) * Complex64::new(wt, 0.0);
    }
    if !(rho.trace().re > 0.0) {
        return Err(Error::ImpossibleOutcome(format!("homodyne outcome {p_tilde} has zero density")));
    }
    Ok(DensityMatrix { entries: rho })
}

/// Settings for the full oracle pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleSettings {
    pub dim_optical: usize,
    pub dim_mech: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { dim_optical: 120, dim_mech: 160 }
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    /// Normalized conditional mechanical state.
    pub state: DensityMatrix,
    pub herald_probability: f64,
    pub outcome_density: f64,
}

/// Phase-squeeze, tap, count `m`, couple to a thermal mechanical mode, and condition on
/// the optical phase quadrature `p_tilde`. No back-action kick (`Ω = 0`).
#[allow(clippy::too_many_arguments)]
pub fn oracle_pipeline(
    r: f64,
    t: f64,
    eta: f64,
    m: usize,
    chi: f64,
    n_bar: f64,
    p_tilde: f64,
    settings: OracleSettings,
) -> Result<OracleResult> {
    if n_bar > 5.0 {
        log::warn!("Fock oracle run with n_bar = {n_bar} > 5; truncation may dominate");
    }
    let (dl, dm) = (settings.dim_optical, settings.dim_mech);
    let sq = squeezed_vacuum_fock(-r, dl)?;
    let split = beamsplit_fock(&sq, t)?;
    let (optical, herald_probability) = pnr_condition_fock(&split, m, eta)?;
    let weights = thermal_weights(n_bar, 1e-6);
    if weights.len() + 3 > dm {
        return Err(Error::FockLeakage { leakage: weights[dm.min(weights.len()) - 1], limit: LEAKAGE_LIMIT });
    }
    let u = QndUnitary::new(chi, dl, dm)?;
    let vl = &u.optical.vecs;
    let vm = &u.mech.vecs;
    // ⟨p̃| V_L: projection row in the optical position eigenbasis.
    let ov = momentum_overlaps(p_tilde, dl);
    let w_row: Vec<Complex64> = (0..dl).map(|i| (0..dl).map(|n| ov[n] * vl[(n, i)]).sum()).collect();

    let nw = weights.len();
    // Mechanical |n⟩ in the eigenbasis, as complex columns for the products below.
    let vm_c: DMatrix<Complex64> = vm.map(|v| Complex64::new(v, 0.0));
    let vm_low_t: DMatrix<Complex64> = vm_c.rows(0, nw).transpose();
    let mut rho = DMatrix::from_element(dm, dm, C0);
    for (pk, vk) in &optical.members {
        // a = V_Lᵀ ψ_k; h_j = Σ_i w_i a_i e^{iχ λ_i μ_j}
        let a: Vec<Complex64> = (0..dl).map(|i| (0..dl).map(|n| vl[(n, i)] * vk.amplitudes[n]).sum()).collect();
        let wa: Vec<Complex64> = a.iter().zip(&w_row).map(|(x, y)| x * y).collect();
        // Φ[:, n] = V_M (h ∘ V_M[n, :]) for every retained thermal level n.
        let mut scaled = vm_low_t.clone();
        for j in 0..dm {
            let hj: Complex64 = (0..dl).map(|i| wa[i] * u.phase[(i, j)]).sum();
            for n in 0..nw {
                scaled[(j, n)] *= hj;
            }
        }
        let mut phi = &vm_c * scaled;
        for (n, qn) in weights.iter().enumerate() {
            phi.column_mut(n).scale_mut((pk * qn).sqrt());
        }
        rho += &phi * phi.adjoint();
    }
    let tr = rho.trace().re;
    if !(tr > 0.0) {
        return Err(Error::ImpossibleOutcome(format!("homodyne outcome {p_tilde} has zero density")));
    }
    let weight_total: f64 = weights.iter().sum();
    let state = DensityMatrix { entries: rho / Complex64::new(tr, 0.0) };
    let leak = state.leakage();
    if leak > LEAKAGE_LIMIT {
        return Err(Error::FockLeakage { leakage: leak, limit: LEAKAGE_LIMIT });
    }
    Ok(OracleResult { state, herald_probability, outcome_density: tr / weight_total })
}

/// Sample a density matrix's Wigner function on a grid. The kernels are exact, so the
/// result is normalized whenever the trace is one and the window covers the state.
pub fn wigner_from_dm(dm: &DensityMatrix, spec: &GridSpec) -> WignerGrid {
    WignerGrid::from_fn(spec, |x, p| dm.wigner(x, p))
}

//! Special functions: associated Laguerre polynomials, Hermite functions and
//! Gauss–Hermite quadrature rules.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

/// Associated Laguerre polynomial `L_n^alpha(z)` by the three-term recurrence.
pub fn laguerre_assoc(n: usize, alpha: f64, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 + alpha - z;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - z) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `L_0^alpha(z) ..= L_n^alpha(z)` in one pass, written into `out` (length `n + 1`).
pub fn laguerre_assoc_all(alpha: f64, z: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() == 1 {
        return;
    }
    out[1] = 1.0 + alpha - z;
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0 + alpha - z) * out[k] - (kf + alpha) * out[k - 1]) / (kf + 1.0);
    }
}

/// `ln L_n^alpha(-y)` for `y >= 0` and `alpha > -1`.
///
/// With a non-positive argument every coefficient of the expansion is positive, so the
/// logarithm exists; the sum is accumulated relative to its leading power of `y`.
pub fn ln_laguerre_assoc_neg(n: usize, alpha: f64, y: f64) -> f64 {
    debug_assert!(y >= 0.0 && alpha > -1.0);
    if n == 0 {
        return 0.0;
    }
    if y < 1.0 {
        return laguerre_assoc(n, alpha, -y).ln();
    }
    // L_n^a(-y) = sum_j binom(n+a, n-j) y^j / j!; c_j = binom(n+a, n-j)/j! with c_n = 1/n!.
    // Walk down from j = n: c_{j-1}/c_j = j (a + j) / (n - j + 1).
    let ln_y = y.ln();
    let mut ratio_sum = 1.0;
    let mut term = 1.0;
    for j in (1..=n).rev() {
        let jf = j as f64;
        term *= jf * (alpha + jf) / ((n - j + 1) as f64) / y;
        ratio_sum += term;
    }
    let ln_cn = -ln_factorial(n);
    n as f64 * ln_y + ln_cn + ratio_sum.ln()
}

pub fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Orthonormal Hermite functions `psi_0(t) ..= psi_{n-1}(t)`, the position-space
/// number states `<t|j>` in the vacuum-variance-1/2 convention.
pub fn hermite_functions(t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI.powf(-0.25) * (-0.5 * t * t).exp();
    if out.len() == 1 {
        return;
    }
    out[1] = std::f64::consts::SQRT_2 * t * out[0];
    for j in 1..out.len() - 1 {
        let jf = j as f64;
        out[j + 1] = (2.0 / (jf + 1.0)).sqrt() * t * out[j] - (jf / (jf + 1.0)).sqrt() * out[j - 1];
    }
}

/// Gauss–Hermite rule for `∫ e^{-t²} f(t) dt`.
///
/// `scaled_weights[i] = weights[i] · exp(t_i²)` is computed directly from the
/// Christoffel function so it stays accurate at the outermost nodes, where the plain
/// weights underflow relative precision. Use it when the integrand already carries its
/// own Gaussian factor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scaled_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            let off = ((i + 1) as f64 / 2.0).sqrt();
            jacobi[(i, i + 1)] = off;
            jacobi[(i + 1, i)] = off;
        }
        let mut guess: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        guess.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut psi = vec![0.0; n + 1];
        let mut nodes = Vec::with_capacity(n);
        for &g in &guess {
            // Newton on psi_n; psi_n' = sqrt(2n) psi_{n-1} - t psi_n.
            let mut t = g;
            for _ in 0..8 {
                hermite_functions(t, &mut psi);
                let d = (2.0 * n as f64).sqrt() * psi[n - 1] - t * psi[n];
                if d == 0.0 {
                    break;
                }
                let step = psi[n] / d;
                t -= step;
                if step.abs() < 1e-15 * (1.0 + t.abs()) {
                    break;
                }
            }
            nodes.push(t);
        }
        // Enforce exact mirror symmetry so paired sums are sign-symmetric bitwise.
        for i in 0..n / 2 {
            let s = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -s;
            nodes[n - 1 - i] = s;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }

        let mut scaled_weights = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut buf = vec![0.0; n];
        for &t in &nodes {
            hermite_functions(t, &mut buf);
            let christoffel: f64 = buf.iter().map(|v| v * v).sum();
            let sw = 1.0 / christoffel;
            scaled_weights.push(sw);
            weights.push(sw * (-t * t).exp());
        }
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let s = 0.5 * (scaled_weights[i] + scaled_weights[j]);
            scaled_weights[i] = s;
            scaled_weights[j] = s;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        Self { nodes, weights, scaled_weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫ f(x) dx` over the real line with nodes `x = center + sqrt(2 var) t`.
    ///
    /// `f` must include its own decay; the rule is exact when `f` is a polynomial times
    /// the Gaussian `exp(-(x - center)² / (2 var))`. Mirror-image nodes are summed in pairs,
    /// so an `f` even about `center` is integrated identically under reflection.
    pub fn integrate_real_line(&self, center: f64, var: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let scale = (2.0 * var).sqrt();
        let n = self.nodes.len();
        let mut acc = 0.0;
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let a = f(center + scale * self.nodes[i]);
            let b = f(center + scale * self.nodes[j]);
            acc += self.scaled_weights[i] * (a + b);
        }
        if n % 2 == 1 {
            acc += self.scaled_weights[n / 2] * f(center);
        }
        acc * scale
    }

    /// Expectation of `f` under `N(mean, var)`.
    pub fn expectation(&self, mean: f64, var: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let scale = (2.0 * var).sqrt();
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mean + scale * t);
        }
        acc / PI.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laguerre_low_orders() {
        for z in [-3.0, 0.0, 0.7, 12.0] {
            assert_eq!(laguerre_assoc(0, -0.5, z), 1.0);
            assert!((laguerre_assoc(1, -0.5, z) - (0.5 - z)).abs() < 1e-15);
        }
        // (1/2) z² - (3/2) z + 3/8 at z = -3
        assert!((laguerre_assoc(2, -0.5, -3.0) - 9.375).abs() < 1e-12);
    }

    #[test]
    fn laguerre_all_matches_single() {
        let mut buf = [0.0; 8];
        laguerre_assoc_all(1.3, 2.2, &mut buf);
        for (n, v) in buf.iter().enumerate() {
            assert!((v - laguerre_assoc(n, 1.3, 2.2)).abs() < 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn ln_laguerre_negative_argument() {
        for n in 0..6 {
            for y in [0.0, 0.3, 4.0, 40.0, 300.0] {
                let direct = laguerre_assoc(n, -0.5, -y).ln();
                let logged = ln_laguerre_assoc_neg(n, -0.5, y);
                assert!((direct - logged).abs() < 1e-12 * direct.abs().max(1.0), "n={n} y={y}");
            }
        }
        // Far beyond f64 range for the direct value.
        assert!(ln_laguerre_assoc_neg(5, -0.5, 1e80).is_finite());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(3, 0), 1.0);
        assert_eq!(binomial(3, 4), 0.0);
    }

    #[test]
    fn hermite_functions_orthonormal() {
        let gh = GaussHermite::new(60);
        let mut buf = vec![0.0; 12];
        let mut gram = vec![0.0; 144];
        for (t, sw) in gh.nodes.iter().zip(&gh.scaled_weights) {
            hermite_functions(*t, &mut buf);
            for i in 0..12 {
                for j in 0..12 {
                    gram[i * 12 + j] += sw * buf[i] * buf[j];
                }
            }
        }
        for i in 0..12 {
            for j in 0..12 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i * 12 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        for n in [1, 2, 5, 21, 64, 129] {
            let gh = GaussHermite::new(n);
            let total: f64 = gh.weights.iter().sum();
            assert!((total - PI.sqrt()).abs() < 1e-13, "n={n}");
            assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
        }
        let gh = GaussHermite::new(10);
        let m4 = gh.expectation(0.0, 1.0, |x| x.powi(4));
        assert!((m4 - 3.0).abs() < 1e-12);
        let m2 = gh.expectation(1.5, 2.0, |x| x * x);
        assert!((m2 - (2.0 + 2.25)).abs() < 1e-12);
    }

    #[test]
    fn large_rule_integrates_offset_gaussian() {
        let gh = GaussHermite::new(129);
        // Integrand narrower than the node scale and off-center.
        let v = gh.integrate_real_line(0.0, 10.0, |x| (-(x - 1.3f64).powi(2) / (2.0 * 1.5)).exp());
        let exact = (2.0 * PI * 1.5).sqrt();
        assert!((v - exact).abs() < 1e-12 * exact);
    }
}

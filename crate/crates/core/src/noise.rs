//! Noise variance as the minimiser of the dominant risk term.
//!
//! With ψ_k = γ̂_k + σ² the dominant term F is a quadratic in σ²,
//! F = B·σ⁴ − 2A·σ² + const, so σ̃² = A/B. Writing m = n − p − 1, g the spike
//! estimates padded with zeros and Δ_kb = (g_k − g_b)/(l_k − l_b):
//!
//! ```text
//! B = m/(n²p) · [(m−1) Σ 1/l² − (Σ 1/l)²]
//! A = m/(np) Σ 1/l − m(m−1)/(n²p) Σ g_k/l_k² + m/(n²p) (Σ g_k/l_k)(Σ 1/l)
//!     − 2m/(n²p) Σ_{k≠b} Δ_kb/l_k − 1/(n²p) Σ_{k≠b≠e} (Δ_ke − Δ_be)/(l_k − l_b)
//! ```
//!
//! Δ vanishes on tail pairs, so every sum is evaluated in O(ρ̂·p).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sum, CompensatedSum};
use crate::spectra::SpectralData;
use crate::ure;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSolution {
    pub a: f64,
    pub b: f64,
    pub sigma2_tilde: f64,
}

impl NoiseSolution {
    /// Set when σ̃² < 0; the value is reported unclamped.
    pub fn is_negative(&self) -> bool {
        self.sigma2_tilde < 0.0
    }
}

pub fn minimize_noise(spec: &SpectralData, gamma_hat: &[f64], rho_hat: usize) -> Result<NoiseSolution> {
    check_inputs(spec, gamma_hat, rho_hat)?;
    noise_solution(spec.eigenvalues(), spec.n(), gamma_hat)
}

fn check_inputs(spec: &SpectralData, gamma_hat: &[f64], rho_hat: usize) -> Result<()> {
    let p = spec.p();
    if rho_hat >= p {
        return Err(Error::RankOutOfRange { rank: rho_hat, p });
    }
    if gamma_hat.len() != rho_hat {
        return Err(Error::Shape(format!("{} spike estimates for rank {}", gamma_hat.len(), rho_hat)));
    }
    // Without spikes A and B involve no eigenvalue gaps, so ties are harmless.
    if rho_hat == 0 {
        return Ok(());
    }
    spec.ensure_generic()
}

/// Quadratic coefficients of F in σ² for fixed spike estimates `g` (rank = `g.len()`).
pub(crate) fn noise_solution(l: &[f64], n: usize, g: &[f64]) -> Result<NoiseSolution> {
    let p = l.len();
    let r = g.len();
    if r >= p {
        return Err(Error::RankOutOfRange { rank: r, p });
    }
    let nf = n as f64;
    let pf = p as f64;
    let m = nf - pf - 1.0;
    let n2p = nf * nf * pf;

    let s1 = sum(l.iter().map(|v| 1.0 / v));
    let s2 = sum(l.iter().map(|v| 1.0 / (v * v)));
    let b = m / n2p * ((m - 1.0) * s2 - s1 * s1);

    let sg2 = sum((0..r).map(|k| g[k] / (l[k] * l[k])));
    let sg1 = sum((0..r).map(|k| g[k] / l[k]));
    let (cross, triple) = spike_sums(l, g);
    let a = m / (nf * pf) * s1 - m * (m - 1.0) / n2p * sg2 + m / n2p * sg1 * s1 - 2.0 * m / n2p * cross - triple / n2p;

    let scale = (m * (m - 1.0)).abs() / n2p * s2;
    if !(b.abs() >= 1e-14 * scale) || !b.is_finite() {
        return Err(Error::IllPosedDenominator(b));
    }
    let sigma2_tilde = a / b;
    if !sigma2_tilde.is_finite() {
        return Err(Error::NonFinite("noise estimate".into()));
    }
    Ok(NoiseSolution { a, b, sigma2_tilde })
}

/// Σ_{k≠b} Δ_kb/l_k and Σ_{k≠b≠e} (Δ_ke − Δ_be)/(l_k − l_b), split into spike (S) and tail (T) blocks.
fn spike_sums(l: &[f64], g: &[f64]) -> (f64, f64) {
    let p = l.len();
    let r = g.len();
    if r == 0 {
        return (0.0, 0.0);
    }
    let delta = |k: usize, b: usize| -> f64 {
        let gk = if k < r { g[k] } else { 0.0 };
        let gb = if b < r { g[b] } else { 0.0 };
        (gk - gb) / (l[k] - l[b])
    };

    // Row sums R_k over all partners.
    let mut row = vec![0.0; p];
    for (k, slot) in row.iter_mut().enumerate().take(r) {
        let mut acc = CompensatedSum::new();
        for b in 0..p {
            if b != k {
                acc.add(delta(k, b));
            }
        }
        *slot = acc.value();
    }
    for (c, rc) in row.iter_mut().enumerate().skip(r) {
        *rc = sum((0..r).map(|e| delta(e, c)));
    }

    let mut cross = CompensatedSum::new();
    for k in 0..r {
        for b in 0..r {
            if b != k {
                cross.add(delta(k, b) / l[k]);
            }
        }
        for c in r..p {
            cross.add(g[k] / (l[k] - l[c]) * (1.0 / l[k] + 1.0 / l[c]));
        }
    }

    let mut triple = CompensatedSum::new();
    for k in 0..r {
        for b in 0..r {
            if b != k {
                triple.add((row[k] - row[b]) / (l[k] - l[b]));
            }
        }
        for c in r..p {
            triple.add(2.0 * (row[k] - row[c]) / (l[k] - l[c]));
        }
    }
    // Tail-tail pairs: Σ_{c≠d} (R_c − R_d)/(l_c − l_d) = Σ_e g_e [(Σ_c u_ec)² − Σ_c u_ec²], u_ec = 1/(l_e − l_c).
    for e in 0..r {
        let mut s = CompensatedSum::new();
        let mut s2 = CompensatedSum::new();
        for c in r..p {
            let u = 1.0 / (l[e] - l[c]);
            s.add(u);
            s2.add(u * u);
        }
        let s = s.value();
        triple.add(g[e] * (s * s - s2.value()));
    }
    (cross.value(), triple.value())
}

/// ∂F/∂σ² at `sigma2`, holding the spectrum and γ̂ fixed, by central difference on F.
pub fn stationarity_residual(spec: &SpectralData, gamma_hat: &[f64], rho_hat: usize, sigma2: f64) -> Result<f64> {
    check_inputs(spec, gamma_hat, rho_hat)?;
    let l = spec.eigenvalues();
    let n = spec.n();
    let p = spec.p();
    let h = 1e-3 * sigma2.abs().max(sum(l.iter().copied()) / p as f64);
    let f_at = |s: f64| -> Result<f64> {
        let est = ure::EigenvalueEstimate { gammas: gamma_hat.to_vec(), sigma2: s };
        ure::f_from_psi(l, n, &est.psi(p))
    };
    Ok((f_at(sigma2 + h)? - f_at(sigma2 - h)?) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_spectrum_closed_form() {
        // Tiny spread keeps the spectrum generic while matching the tied limit.
        let l = [1.0 + 1e-7, 1.0 - 1e-7];
        let spec = SpectralData::from_eigenvalues(l.to_vec(), 10).unwrap();
        let sol = minimize_noise(&spec, &[], 0).unwrap();
        assert!((sol.a - 0.7).abs() < 1e-9, "{}", sol.a);
        assert!((sol.b - 0.28).abs() < 1e-9, "{}", sol.b);
        assert!((sol.sigma2_tilde - 2.5).abs() < 1e-9);
    }

    #[test]
    fn exact_constant_spectrum_via_raw_path() {
        let sol = noise_solution(&[1.0, 1.0], 10, &[]).unwrap();
        assert!((sol.a - 0.7).abs() < 1e-15);
        assert!((sol.b - 0.28).abs() < 1e-15);
        assert!((sol.sigma2_tilde - 2.5).abs() < 1e-14);
    }

    #[test]
    fn boundary_sample_size_is_ill_posed() {
        assert!(matches!(noise_solution(&[1.0, 1.0], 6, &[]), Err(Error::IllPosedDenominator(_))));
    }

    #[test]
    fn rank_must_leave_a_tail() {
        let spec = SpectralData::from_eigenvalues(vec![3.0, 1.0], 10).unwrap();
        assert!(matches!(minimize_noise(&spec, &[1.0, 0.5], 2), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(minimize_noise(&spec, &[1.0], 0), Err(Error::Shape(_))));
    }

    #[test]
    fn residual_vanishes_at_minimiser_and_is_affine() {
        let l = [7.0, 4.5, 2.2, 1.3, 1.1, 0.9, 0.6];
        let spec = SpectralData::from_eigenvalues(l.to_vec(), 40).unwrap();
        let g = [5.0, 3.0];
        let sol = minimize_noise(&spec, &g, 2).unwrap();
        let at = stationarity_residual(&spec, &g, 2, sol.sigma2_tilde).unwrap();
        assert!(at.abs() <= 1e-8 * sol.b * sol.sigma2_tilde.abs().max(1.0), "{at}");
        let up = stationarity_residual(&spec, &g, 2, sol.sigma2_tilde + 1.0).unwrap();
        assert!((up - 2.0 * sol.b).abs() <= 1e-6 * sol.b);
        let r1 = stationarity_residual(&spec, &g, 2, 0.3).unwrap();
        let r2 = stationarity_residual(&spec, &g, 2, 1.7).unwrap();
        let mid = stationarity_residual(&spec, &g, 2, 1.0).unwrap();
        assert!((r1 + r2 - 2.0 * mid).abs() <= 1e-10 * (r1.abs() + r2.abs()) + 1e-12);
    }
}

//! Closed-form large-(n, p) limits for the spiked model with p/n → c ∈ (0, 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub c: f64,
    pub sigma2: f64,
    pub gammas: Vec<f64>,
}

impl RegimeParams {
    pub fn new(c: f64, sigma2: f64, gammas: Vec<f64>) -> Result<Self> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Domain(format!("aspect ratio c must lie in (0, 1), got {c}")));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
        }
        if gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Domain("spike strengths must be positive".into()));
        }
        Ok(Self { c, sigma2, gammas })
    }

    /// √c·σ², the detection threshold for a spike.
    pub fn critical_gamma(&self) -> f64 {
        self.c.sqrt() * self.sigma2
    }

    pub fn is_supercritical(&self) -> bool {
        self.gammas.iter().all(|g| *g > self.critical_gamma())
    }

    /// Upper edge (1+√c)²σ² of the noise bulk.
    pub fn bulk_edge(&self) -> f64 {
        (1.0 + self.c.sqrt()).powi(2) * self.sigma2
    }
}

/// Almost-sure limit of the sample eigenvalue attached to spike γ.
pub fn eigenvalue_limit(gamma_k: f64, params: &RegimeParams) -> Result<f64> {
    if !(gamma_k > 0.0) {
        return Err(Error::Domain(format!("spike strength must be positive, got {gamma_k}")));
    }
    let s2 = params.sigma2;
    if gamma_k > params.critical_gamma() {
        Ok((gamma_k + s2) * (gamma_k + params.c * s2) / gamma_k)
    } else {
        Ok(params.bulk_edge())
    }
}

/// Limit of (p−ρ)⁻¹ Σ_{c>ρ} l_c^{−m}: 1/((1−c)^{2m−1} σ^{2m}).
pub fn mp_inverse_moment(m: i32, params: &RegimeParams) -> Result<f64> {
    if m < 1 {
        return Err(Error::Domain(format!("moment order must be at least 1, got {m}")));
    }
    Ok(1.0 / ((1.0 - params.c).powi(2 * m - 1) * params.sigma2.powi(m)))
}

/// Limits of the normalised trailing sums attached to a supercritical spike.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StieltjesLimits {
    /// (p−ρ)⁻¹ Σ l_c/(l_k − l_c) → σ²/γ.
    pub ratio: f64,
    /// (p−ρ)⁻¹ Σ 1/(l_k − l_c) → 1/(γ + cσ²).
    pub inverse_gap: f64,
    /// (p−ρ)⁻¹ Σ 1/(l_c(l_k − l_c)) → γ/((1−c)σ²(γ + cσ²)²).
    pub weighted: f64,
}

pub fn stieltjes_limits(gamma_k: f64, params: &RegimeParams) -> Result<StieltjesLimits> {
    if !(gamma_k > params.critical_gamma()) {
        return Err(Error::Domain(format!(
            "spike {gamma_k} is not above the critical value {}",
            params.critical_gamma()
        )));
    }
    let s2 = params.sigma2;
    let c = params.c;
    let shifted = gamma_k + c * s2;
    Ok(StieltjesLimits {
        ratio: s2 / gamma_k,
        inverse_gap: 1.0 / shifted,
        weighted: gamma_k / ((1.0 - c) * s2 * shifted * shifted),
    })
}

/// Centres of the Gaussian bounds bracketing n(σ̃² − σ²), and their shared variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltConstants {
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub variance: f64,
}

/// `gamma_bar` holds the almost-sure limits of the spike estimates (γ itself for consistent ones).
pub fn clt_constants(params: &RegimeParams, gamma_bar: &[f64]) -> Result<CltConstants> {
    if gamma_bar.len() != params.gammas.len() {
        return Err(Error::Domain(format!(
            "{} spike limits for {} spikes",
            gamma_bar.len(),
            params.gammas.len()
        )));
    }
    if !params.is_supercritical() {
        return Err(Error::Domain("CLT constants need every spike above the critical value".into()));
    }
    let c = params.c;
    let s2 = params.sigma2;
    let s4 = s2 * s2;
    let s6 = s4 * s2;
    let rho = params.gammas.len() as f64;
    let omc2 = (1.0 - c).powi(2);
    let omsc2 = (1.0 - c.sqrt()).powi(2);

    let mut shared = 0.0;
    let mut plus_only = 0.0;
    let mut minus_only = 0.0;
    for (&g, &gb) in params.gammas.iter().zip(gamma_bar) {
        let a = g + s2;
        let b = g + c * s2;
        shared += omc2 / c * g * g * gb * s4 / (a * a * b * b) + g * gb * s2 / (a * b) - 2.0 * g * gb * s2 / (b * b);
        plus_only -= omc2 / c * s6 * g * g / (a * a * b * b);
        minus_only += (1.0 + c) / c * s4 * g / (a * b) - 3.0 * c * gb * s4 / (b * b);
    }
    let lead = (2.0 * c * rho - 1.0) * s2 / omc2;
    let mu_plus = lead + (2.0 - c) * (1.0 + c) * rho * s2 / omsc2 + plus_only + shared;
    let mu_minus = lead - omc2 * rho * s2 / (c * omsc2) + minus_only + shared;
    let variance = 2.0 * c * (1.0 + c).powi(2) * s4 / (1.0 - c).powi(4);
    Ok(CltConstants { mu_minus, mu_plus, variance })
}

/// Asymptotic total-variation bound between nearby spiked laws: √(1 − exp(−cM²/2)) at r = 1, 0 for r > 1.
pub fn tv_bound(c: f64, m: f64, r: usize) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(format!("aspect ratio c must lie in (0, 1), got {c}")));
    }
    if !(m > 0.0) || r == 0 {
        return Err(Error::Domain("radius M must be positive and r at least 1".into()));
    }
    if r > 1 {
        return Ok(0.0);
    }
    Ok((1.0 - (-c * m * m / 2.0).exp()).sqrt())
}

/// M_ε = √(−(2/c)·log(1 − (1−4ε)²)) for ε ∈ (0, 1/4).
pub fn minimax_m(c: f64, epsilon: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(format!("aspect ratio c must lie in (0, 1), got {c}")));
    }
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1/4), got {epsilon}")));
    }
    let q = 1.0 - 4.0 * epsilon;
    Ok((-(2.0 / c) * (-q * q).ln_1p()).sqrt())
}

/// Marčenko-Pastur density with ratio c and scale σ².
pub fn mp_density(t: f64, c: f64, sigma2: f64) -> f64 {
    let lo = sigma2 * (1.0 - c.sqrt()).powi(2);
    let hi = sigma2 * (1.0 + c.sqrt()).powi(2);
    if t <= lo || t >= hi {
        return 0.0;
    }
    ((hi - t) * (t - lo)).sqrt() / (2.0 * std::f64::consts::PI * c * sigma2 * t)
}

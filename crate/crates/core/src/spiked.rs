//! Spiked covariance estimator with data-driven rank.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{self, NoiseSolution};
use crate::numeric::{sum, CompensatedSum};
use crate::spectra::SpectralData;
use crate::ure::{self, EigenvalueEstimate, EstimatorProfile, UreValue, DEFAULT_FD_STEP};

/// Σ̂ = O·diag(γ̂, 0)·Oᵀ + σ̂²I.
#[derive(Clone, Debug)]
pub struct SpikedEstimate {
    pub gammas_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub basis: DMatrix<f64>,
    pub rho_hat: usize,
    pub n: usize,
    pub p: usize,
}

impl SpikedEstimate {
    /// Eigenvalues of Σ̂ in basis order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.p)
            .map(|k| self.gammas_hat.get(k).copied().unwrap_or(0.0) + self.sigma2_hat)
            .collect()
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.p, self.p) * self.sigma2_hat;
        for (k, g) in self.gammas_hat.iter().enumerate() {
            let o = self.basis.column(k);
            m.ger(*g, &o, &o, 1.0);
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCandidate {
    pub rank: usize,
    /// (1+√(p/n))²·mean(l_{r+1..p})/l_{r+1}; absent at r = p.
    pub threshold_statistic: Option<f64>,
    pub threshold_ok: bool,
    pub sigma2: Option<f64>,
    pub ure: Option<UreValue>,
    pub ure_ok: bool,
    pub admissible: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub selected: usize,
    /// (p+1)/n, the admissible magnitude of F_r + G_r.
    pub ure_bound: f64,
    pub candidates: Vec<RankCandidate>,
}

/// γ̃_k = (Σ_{c>r} l_c) / Σ_{c>r} l_c/(l_k − l_c), k = 1..r.
pub fn estimate_gammas(spec: &SpectralData, r: usize) -> Result<Vec<f64>> {
    gammas_from_eigenvalues(spec.eigenvalues(), r)
}

pub(crate) fn gammas_from_eigenvalues(l: &[f64], r: usize) -> Result<Vec<f64>> {
    let p = l.len();
    if r >= p {
        return Err(Error::RankOutOfRange { rank: r, p });
    }
    let tail = sum(l[r..].iter().copied());
    (0..r)
        .map(|k| {
            let mut denom = CompensatedSum::new();
            for c in r..p {
                let gap = l[k] - l[c];
                if !(gap > 0.0) {
                    return Err(Error::NearDegenerate { index: k, gap });
                }
                denom.add(l[c] / gap);
            }
            let g = tail / denom.value();
            if g.is_finite() {
                Ok(g)
            } else {
                Err(Error::NonFinite(format!("spike estimate {k}")))
            }
        })
        .collect()
}

/// Rank-r estimate (γ̃, σ̃²_r) as a function of the eigenvalues.
pub(crate) fn fixed_rank_estimate(l: &[f64], n: usize, r: usize) -> Result<(EigenvalueEstimate, NoiseSolution)> {
    let gammas = gammas_from_eigenvalues(l, r)?;
    let sol = noise::noise_solution(l, n, &gammas)?;
    Ok((EigenvalueEstimate { gammas, sigma2: sol.sigma2_tilde }, sol))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikedEstimator {
    pub fd_step: f64,
}

impl Default for SpikedEstimator {
    fn default() -> Self {
        Self { fd_step: DEFAULT_FD_STEP }
    }
}

impl SpikedEstimator {
    /// The rank-r estimate Σ̃_r; r = p gives S.
    pub fn fixed_rank(&self, spec: &SpectralData, r: usize) -> Result<SpikedEstimate> {
        let p = spec.p();
        if r > p {
            return Err(Error::RankOutOfRange { rank: r, p });
        }
        let (gammas_hat, sigma2_hat) = if r == p {
            (spec.eigenvalues().to_vec(), 0.0)
        } else {
            let (est, _) = fixed_rank_estimate(spec.eigenvalues(), spec.n(), r)?;
            (est.gammas, est.sigma2)
        };
        Ok(SpikedEstimate {
            gammas_hat,
            sigma2_hat,
            basis: spec.eigenvectors().clone(),
            rho_hat: r,
            n: spec.n(),
            p,
        })
    }

    /// Finite-difference profile of the rank-r estimator; r = p gives the profile of S.
    pub fn profile(&self, spec: &SpectralData, r: usize) -> Result<EstimatorProfile> {
        let p = spec.p();
        if r == p {
            return Ok(EstimatorProfile::sample(spec.eigenvalues()));
        }
        let n = spec.n();
        ure::profile_finite_difference(|l: &[f64]| fixed_rank_estimate(l, n, r).map(|(e, _)| e), spec, self.fd_step)
    }

    /// Smallest r passing the eigenvalue threshold and |F_r + G_r| ≤ (p+1)/n; r = p by convention.
    pub fn select_rank(&self, spec: &SpectralData) -> RankDiagnostics {
        let p = spec.p();
        let n = spec.n();
        let l = spec.eigenvalues();
        let bound = (p as f64 + 1.0) / n as f64;
        let inflation = (1.0 + (p as f64 / n as f64).sqrt()).powi(2);
        let mut candidates = Vec::new();
        for r in 0..p {
            let mean = sum(l[r..].iter().copied()) / (p - r) as f64;
            let stat = inflation * mean / l[r];
            let mut cand = RankCandidate {
                rank: r,
                threshold_statistic: Some(stat),
                threshold_ok: stat >= 1.0,
                sigma2: None,
                ure: None,
                ure_ok: false,
                admissible: false,
                note: None,
            };
            if cand.threshold_ok {
                match self.candidate_ure(spec, r) {
                    Ok((sigma2, value)) => {
                        cand.sigma2 = Some(sigma2);
                        cand.ure = value;
                        cand.ure_ok = value.is_some_and(|u| u.total.abs() <= bound);
                        if value.is_none() {
                            cand.note = Some(format!("noise estimate {sigma2} is not positive"));
                        }
                        cand.admissible = cand.ure_ok;
                    }
                    Err(e) => cand.note = Some(e.to_string()),
                }
            }
            let done = cand.admissible;
            candidates.push(cand);
            if done {
                return RankDiagnostics { selected: r, ure_bound: bound, candidates };
            }
        }
        let ure = ure::evaluate(spec, &EstimatorProfile::sample(l)).ok();
        candidates.push(RankCandidate {
            rank: p,
            threshold_statistic: None,
            threshold_ok: true,
            sigma2: Some(0.0),
            ure,
            ure_ok: ure.is_some_and(|u| u.total.abs() <= bound),
            admissible: true,
            note: Some("r = p is admissible by convention; the estimate is S".into()),
        });
        RankDiagnostics { selected: p, ure_bound: bound, candidates }
    }

    fn candidate_ure(&self, spec: &SpectralData, r: usize) -> Result<(f64, Option<UreValue>)> {
        let (est, _) = fixed_rank_estimate(spec.eigenvalues(), spec.n(), r)?;
        if !(est.sigma2.is_finite() && est.sigma2 > 0.0) {
            return Ok((est.sigma2, None));
        }
        let profile = self.profile(spec, r)?;
        Ok((est.sigma2, Some(ure::evaluate(spec, &profile)?)))
    }

    /// Σ̃ = Σ̃_ρ̃, with Σ̃_p = S.
    pub fn assemble(&self, spec: &SpectralData) -> Result<(SpikedEstimate, RankDiagnostics)> {
        let diagnostics = self.select_rank(spec);
        let estimate = self.fixed_rank(spec, diagnostics.selected)?;
        Ok((estimate, diagnostics))
    }

    /// Σ̃ as a matrix; S itself when ρ̃ = p.
    pub fn estimate_matrix(&self, spec: &SpectralData) -> Result<(DMatrix<f64>, SpikedEstimate, RankDiagnostics)> {
        let (estimate, diagnostics) = self.assemble(spec)?;
        let matrix = if estimate.rho_hat == spec.p() {
            spec.matrix().clone()
        } else {
            estimate.materialize()
        };
        Ok((matrix, estimate, diagnostics))
    }
}

pub fn select_rank(spec: &SpectralData) -> RankDiagnostics {
    SpikedEstimator::default().select_rank(spec)
}

pub fn assemble(spec: &SpectralData) -> Result<(SpikedEstimate, RankDiagnostics)> {
    SpikedEstimator::default().assemble(spec)
}

/// Spike estimate for unit noise from a sample eigenvalue above the bulk edge (1+√c)².
pub fn donoho_gavish_gamma(l_k: f64, c: f64) -> Result<f64> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::Domain(format!("aspect ratio must be nonnegative, got {c}")));
    }
    if !(l_k > (1.0 + c.sqrt()).powi(2)) {
        return Err(Error::BelowBulk(l_k));
    }
    let d = l_k - 1.0;
    Ok((d + c * l_k / d) * (1.0 - c / (d * d)) / (1.0 + c / d))
}

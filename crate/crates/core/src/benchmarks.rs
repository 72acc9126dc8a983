//! Competitor estimators: linear shrinkage towards a scaled identity and
//! Stein's isotonized eigenvalue estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::gram;
use crate::numeric::sum;
use crate::spectra::SpectralData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkMethod {
    LedoitWolf,
    SteinIsotonized,
}

#[derive(Clone, Debug)]
pub struct BenchmarkEstimate {
    pub matrix: DMatrix<f64>,
    pub method: BenchmarkMethod,
    /// Weight on μI for linear shrinkage.
    pub shrinkage: Option<f64>,
    /// Eigenvalues raised to the positivity floor.
    pub floored: usize,
}

/// Ledoit-Wolf shrinkage for zero-mean rows of `x`:
/// μ = tr(S)/p, d² = ‖S − μI‖²/p, b̄² = Σ_i ‖x_i x_iᵀ − S‖²/(n²p), b² = min(b̄², d²),
/// Σ̂ = (b²/d²)·μI + (1 − b²/d²)·S.
pub fn ledoit_wolf(x: &DMatrix<f64>) -> Result<BenchmarkEstimate> {
    let n = x.nrows();
    let p = x.ncols();
    if n < 2 {
        return Err(Error::DegenerateSample { n, p });
    }
    if p == 0 {
        return Err(Error::Shape("data matrix has no columns".into()));
    }
    let s = gram(x);
    let nf = n as f64;
    let pf = p as f64;
    let mu = s.trace() / pf;
    let mut centred = s.clone();
    for i in 0..p {
        centred[(i, i)] -= mu;
    }
    let d2 = centred.norm_squared() / pf;
    if !(d2 > 0.0) {
        return Ok(BenchmarkEstimate {
            matrix: DMatrix::identity(p, p) * mu,
            method: BenchmarkMethod::LedoitWolf,
            shrinkage: Some(1.0),
            floored: 0,
        });
    }
    let fourth = sum(x.row_iter().map(|row| row.norm_squared().powi(2)));
    let bbar2 = (fourth - nf * s.norm_squared()) / (nf * nf * pf);
    let b2 = bbar2.max(0.0).min(d2);
    let w = b2 / d2;
    let mut matrix = s * (1.0 - w);
    for i in 0..p {
        matrix[(i, i)] += w * mu;
    }
    Ok(BenchmarkEstimate { matrix, method: BenchmarkMethod::LedoitWolf, shrinkage: Some(w), floored: 0 })
}

/// Numerators n·l_k and denominators n − p + 1 + 2 l_k Σ_{b≠k} 1/(l_k − l_b) of the raw Stein eigenvalues.
fn stein_parts(spec: &SpectralData) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.ensure_generic()?;
    let l = spec.eigenvalues();
    let p = l.len();
    let nf = spec.n() as f64;
    let den = (0..p)
        .map(|k| {
            let s = sum((0..p).filter(|&b| b != k).map(|b| 1.0 / (l[k] - l[b])));
            nf - p as f64 + 1.0 + 2.0 * l[k] * s
        })
        .collect();
    Ok((l.iter().map(|v| nf * v).collect(), den))
}

/// Raw Stein eigenvalues φ_k = n·l_k / (n − p + 1 + 2 l_k Σ_{b≠k} 1/(l_k − l_b)).
pub fn stein_raw(spec: &SpectralData) -> Result<Vec<f64>> {
    let (num, den) = stein_parts(spec)?;
    Ok(num.iter().zip(&den).map(|(a, d)| a / d).collect())
}

/// Stein's estimator with Lin-Perlman pooling.
///
/// Numerators and denominators are pooled over adjacent indices, first until every
/// pooled denominator is positive, then by weighted PAVA on the ratios with the
/// denominators as weights. The denominators sum to n·p, so the first pass ends.
/// Values below 1e−8·l_p are floored and counted.
pub fn stein_isotonized(spec: &SpectralData) -> Result<BenchmarkEstimate> {
    let (num, den) = stein_parts(spec)?;
    // Blocks of (numerator, denominator, length).
    let mut blocks: Vec<(f64, f64, usize)> = num.iter().zip(&den).map(|(&a, &d)| (a, d, 1)).collect();
    while let Some(i) = blocks.iter().position(|b| !(b.1 > 0.0)) {
        let j = if i + 1 < blocks.len() { i + 1 } else { i - 1 };
        let (lo, hi) = (i.min(j), i.max(j));
        let merged = (blocks[lo].0 + blocks[hi].0, blocks[lo].1 + blocks[hi].1, blocks[lo].2 + blocks[hi].2);
        blocks[lo] = merged;
        blocks.remove(hi);
    }
    let ratios: Vec<f64> = blocks.iter().map(|b| b.0 / b.1).collect();
    let weights: Vec<f64> = blocks.iter().map(|b| b.1).collect();
    let pooled = pava_decreasing(&ratios, &weights);
    let mut values: Vec<f64> = blocks.iter().zip(&pooled).flat_map(|(b, &v)| std::iter::repeat(v).take(b.2)).collect();
    let floor = 1e-8 * spec.eigenvalues()[spec.p() - 1];
    let mut floored = 0;
    for v in values.iter_mut() {
        if !(*v >= floor) {
            *v = floor;
            floored += 1;
        }
    }
    Ok(BenchmarkEstimate {
        matrix: spec.reassemble(&values),
        method: BenchmarkMethod::SteinIsotonized,
        shrinkage: None,
        floored,
    })
}

/// Weighted least-squares fit of a nonincreasing sequence (pool adjacent violators).
pub fn pava_decreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len(), "values and weights differ in length");
    // Blocks of (weight, weighted sum, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((w, w * v, 1));
        while blocks.len() > 1 {
            let (w2, s2, n2) = blocks[blocks.len() - 1];
            let (w1, s1, n1) = blocks[blocks.len() - 2];
            if s1 / w1 < s2 / w2 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (w1 + w2, s1 + s2, n1 + n2);
            } else {
                break;
            }
        }
    }
    blocks
        .into_iter()
        .flat_map(|(w, s, len)| std::iter::repeat(s / w).take(len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pava_identity_on_monotone_input() {
        let v = [5.0, 4.0, 4.0, 1.0];
        assert_eq!(pava_decreasing(&v, &[1.0; 4]), v.to_vec());
    }

    #[test]
    fn pava_pools_violators() {
        let fit = pava_decreasing(&[3.0, 1.0, 2.0, 0.5], &[1.0; 4]);
        assert_eq!(fit, vec![3.0, 1.5, 1.5, 0.5]);
        let fit = pava_decreasing(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]);
        assert!(fit.iter().all(|v| (v - 2.25).abs() < 1e-15));
    }

    #[test]
    fn stein_single_eigenvalue_is_unchanged() {
        let spec = SpectralData::from_eigenvalues(vec![2.7], 9).unwrap();
        let est = stein_isotonized(&spec).unwrap();
        assert!((est.matrix[(0, 0)] - 2.7).abs() < 1e-15);
    }

    #[test]
    fn ledoit_wolf_keeps_scalar_sample_covariance() {
        // Orthogonal rows scaled so XᵀX/n = 2I.
        let x = DMatrix::from_row_slice(4, 2, &[2.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 2.0]);
        let est = ledoit_wolf(&x).unwrap();
        assert!((est.matrix.clone() - DMatrix::<f64>::identity(2, 2) * 2.0).amax() < 1e-15);
        assert!(ledoit_wolf(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).is_err());
    }
}

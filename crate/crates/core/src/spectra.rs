//! Ordered spectral decomposition of a sample covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative gap below which two eigenvalues are treated as tied.
pub const GENERICITY_TOLERANCE: f64 = 1e-10;

/// Relative asymmetry accepted by [`decompose`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearDegeneracy {
    /// Zero-based index k such that l_k − l_{k+1} is below tolerance.
    pub index: usize,
    pub gap: f64,
}

/// Descending eigenvalues l₁ ≥ … ≥ l_p > 0 and matching eigenvectors of S.
#[derive(Clone, Debug)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    matrix: DMatrix<f64>,
    n: usize,
    near_degenerate: Option<NearDegeneracy>,
}

pub fn decompose(s: &DMatrix<f64>, n: usize) -> Result<SpectralData> {
    let p = s.nrows();
    if p == 0 || s.ncols() != p {
        return Err(Error::Shape(format!("expected a non-empty square matrix, got {}x{}", s.nrows(), s.ncols())));
    }
    if n < p {
        return Err(Error::DegenerateSample { n, p });
    }
    let scale = s.amax();
    let asym = (s - s.transpose()).amax();
    if !scale.is_finite() || asym > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    canonical_signs(&mut eigenvectors);
    SpectralData::build(eigenvalues, eigenvectors, s.clone(), n)
}

/// Flips each column so its largest-magnitude entry is positive.
fn canonical_signs(o: &mut DMatrix<f64>) {
    for mut col in o.column_iter_mut() {
        let (imax, _) = col.iter().enumerate().fold((0, 0.0), |(bi, bv), (i, v)| {
            if v.abs() > bv {
                (i, v.abs())
            } else {
                (bi, bv)
            }
        });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
}

impl SpectralData {
    fn build(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>, matrix: DMatrix<f64>, n: usize) -> Result<Self> {
        for (index, &value) in eigenvalues.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::DegenerateSpectrum { index, value });
            }
        }
        let tol = GENERICITY_TOLERANCE * eigenvalues[0];
        let near_degenerate = eigenvalues
            .windows(2)
            .enumerate()
            .map(|(index, w)| NearDegeneracy { index, gap: w[0] - w[1] })
            .find(|d| d.gap < tol);
        Ok(Self { eigenvalues, eigenvectors, matrix, n, near_degenerate })
    }

    /// Spectral data with the given eigenvalues (sorted descending internally) and basis.
    pub fn from_parts(mut eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>, n: usize) -> Result<Self> {
        let p = eigenvalues.len();
        if p == 0 || eigenvectors.nrows() != p || eigenvectors.ncols() != p {
            return Err(Error::Shape(format!(
                "{} eigenvalues with a {}x{} basis",
                p,
                eigenvectors.nrows(),
                eigenvectors.ncols()
            )));
        }
        if n < p {
            return Err(Error::DegenerateSample { n, p });
        }
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
        let sorted: Vec<f64> = order.iter().map(|&i| eigenvalues[i]).collect();
        let mut basis = DMatrix::zeros(p, p);
        for (dst, &src) in order.iter().enumerate() {
            basis.set_column(dst, &eigenvectors.column(src));
        }
        eigenvalues = sorted;
        let matrix = reconstruct(&eigenvalues, &basis);
        Self::build(eigenvalues, basis, matrix, n)
    }

    /// Spectral data in the canonical basis, S = diag(l).
    pub fn from_eigenvalues(eigenvalues: Vec<f64>, n: usize) -> Result<Self> {
        let p = eigenvalues.len();
        Self::from_parts(eigenvalues, DMatrix::identity(p, p), n)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// The decomposed matrix S.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.p() as f64 / self.n as f64
    }

    pub fn near_degenerate(&self) -> Option<NearDegeneracy> {
        self.near_degenerate
    }

    pub fn ensure_generic(&self) -> Result<()> {
        match self.near_degenerate {
            Some(d) => Err(Error::NearDegenerate { index: d.index, gap: d.gap }),
            None => Ok(()),
        }
    }

    /// Mean of l_{r+1}, …, l_p.
    pub fn trailing_mean(&self, r: usize) -> Result<f64> {
        let p = self.p();
        if r >= p {
            return Err(Error::RankOutOfRange { rank: r, p });
        }
        Ok(crate::numeric::sum(self.eigenvalues[r..].iter().copied()) / (p - r) as f64)
    }

    /// O·diag(d)·Oᵀ on this basis.
    pub fn reassemble(&self, d: &[f64]) -> DMatrix<f64> {
        reconstruct(d, &self.eigenvectors)
    }
}

pub(crate) fn reconstruct(d: &[f64], o: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = o.clone();
    for (j, v) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*v);
    }
    let mut m = scaled * o.transpose();
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovarianceModel, SampleSpec, SpikedModel};

    #[test]
    fn identity_is_flagged_near_degenerate() {
        let spec = decompose(&DMatrix::identity(3, 3), 10).unwrap();
        assert_eq!(spec.eigenvalues(), &[1.0, 1.0, 1.0]);
        assert!(spec.near_degenerate().is_some());
        let o = spec.eigenvectors();
        assert!((o.transpose() * o - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let s = DMatrix::from_diagonal(&vec![1.0, 4.0].into());
        let spec = decompose(&s, 10).unwrap();
        assert_eq!(spec.eigenvalues(), &[4.0, 1.0]);
        let o = spec.eigenvectors();
        assert!((o[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((o[(0, 1)].abs() - 1.0).abs() < 1e-14);
        assert!(spec.near_degenerate().is_none());
    }

    #[test]
    fn wishart_reconstruction() {
        let model: CovarianceModel = SpikedModel::new(vec![5.0, 2.0], 1.0, 30).unwrap().into();
        let s = model.sample_covariance(&SampleSpec::new(80, 30, 3).unwrap()).unwrap();
        let spec = decompose(&s, 80).unwrap();
        let back = spec.reassemble(spec.eigenvalues());
        assert!((back - &s).amax() <= 1e-8 * s.amax());
        let o = spec.eigenvectors();
        assert!((o.transpose() * o - DMatrix::<f64>::identity(30, 30)).amax() <= 1e-8);
        assert!(spec.eigenvalues().windows(2).all(|w| w[0] > w[1]));
        for col in o.column_iter() {
            let big = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn rejects_asymmetric_and_singular() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(decompose(&s, 5), Err(Error::NotSymmetric(_))));
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(decompose(&s, 5), Err(Error::DegenerateSpectrum { .. })));
        assert!(matches!(decompose(&DMatrix::identity(3, 3), 2), Err(Error::DegenerateSample { .. })));
    }

    #[test]
    fn trailing_means() {
        let spec = SpectralData::from_eigenvalues(vec![4.0, 2.0, 1.0], 10).unwrap();
        assert_eq!(spec.trailing_mean(1).unwrap(), 1.5);
        assert!((spec.trailing_mean(0).unwrap() - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(spec.trailing_mean(2).unwrap(), 1.0);
        assert!(spec.trailing_mean(3).is_err());
    }

    #[test]
    fn materialized_spiked_model_recovers_eigenvalues() {
        let model: CovarianceModel = SpikedModel::new(vec![5.0, 4.0, 3.0, 2.0], 1.0, 8).unwrap().into();
        let spec = decompose(&model.materialize().unwrap(), 8).unwrap();
        let expected = [6.0, 5.0, 4.0, 3.0, 1.0, 1.0, 1.0, 1.0];
        for (a, b) in spec.eigenvalues().iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

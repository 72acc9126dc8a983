//! Covariance truths and Gaussian sample generation.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Σ = diag(γ₁, …, γ_ρ, 0, …, 0) + σ²I_p.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikedModel {
    gammas: Vec<f64>,
    sigma2: f64,
    p: usize,
}

impl SpikedModel {
    pub fn new(gammas: Vec<f64>, sigma2: f64, p: usize) -> Result<Self> {
        let model = Self { gammas, sigma2, p };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidModel("dimension p must be positive".into()));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::InvalidModel(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.gammas.len() > self.p {
            return Err(Error::InvalidModel(format!(
                "{} spikes exceed dimension {}",
                self.gammas.len(),
                self.p
            )));
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidModel("spike strengths must be positive".into()));
        }
        if self.gammas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidModel("spike strengths must be strictly decreasing".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rank(&self) -> usize {
        self.gammas.len()
    }

    pub fn true_noise(&self) -> f64 {
        self.sigma2
    }

    pub fn true_spikes(&self) -> &[f64] {
        &self.gammas
    }

    /// Population eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.p)
            .map(|k| self.gammas.get(k).copied().unwrap_or(0.0) + self.sigma2)
            .collect()
    }
}

/// Σᵢⱼ = κ^|i−j|.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    kappa: f64,
    p: usize,
}

impl ArModel {
    pub fn new(kappa: f64, p: usize) -> Result<Self> {
        let model = Self { kappa, p };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidModel("dimension p must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::InvalidModel(format!("kappa must lie in [0, 1), got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceModel {
    Spiked(SpikedModel),
    Ar(ArModel),
}

impl From<SpikedModel> for CovarianceModel {
    fn from(m: SpikedModel) -> Self {
        CovarianceModel::Spiked(m)
    }
}

impl From<ArModel> for CovarianceModel {
    fn from(m: ArModel) -> Self {
        CovarianceModel::Ar(m)
    }
}

impl CovarianceModel {
    pub fn p(&self) -> usize {
        match self {
            CovarianceModel::Spiked(m) => m.p(),
            CovarianceModel::Ar(m) => m.p(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceModel::Spiked(m) => m.validate(),
            CovarianceModel::Ar(m) => m.validate(),
        }
    }

    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        self.validate()?;
        Ok(match self {
            CovarianceModel::Spiked(m) => DMatrix::from_diagonal(&m.eigenvalues().into()),
            CovarianceModel::Ar(m) => {
                DMatrix::from_fn(m.p, m.p, |i, j| m.kappa.powi(i.abs_diff(j) as i32))
            }
        })
    }

    /// Precomputes the square-root factor used for sampling.
    pub fn sampler(&self) -> Result<GaussianSampler> {
        self.validate()?;
        let root = match self {
            CovarianceModel::Spiked(m) => Root::Diagonal(m.eigenvalues().iter().map(|v| v.sqrt()).collect()),
            CovarianceModel::Ar(_) => {
                let chol = Cholesky::new(self.materialize()?).ok_or(Error::SingularTruth)?;
                Root::Lower(chol.unpack())
            }
        };
        Ok(GaussianSampler { root })
    }

    /// S = XᵀX/n for X with i.i.d. N(0, Σ) rows, drawn from `seed`.
    pub fn sample_covariance(&self, spec: &SampleSpec) -> Result<DMatrix<f64>> {
        spec.validate()?;
        if spec.p != self.p() {
            return Err(Error::Shape(format!("sample spec p = {} but model p = {}", spec.p, self.p())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let x = self.sampler()?.sample(spec.n, &mut rng);
        Ok(gram(&x))
    }
}

#[derive(Clone, Debug)]
enum Root {
    Diagonal(Vec<f64>),
    Lower(DMatrix<f64>),
}

/// Draws rows x = Σ^{1/2} z.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    root: Root,
}

impl GaussianSampler {
    pub fn p(&self) -> usize {
        match &self.root {
            Root::Diagonal(d) => d.len(),
            Root::Lower(l) => l.nrows(),
        }
    }

    /// n×p data matrix. Normals are drawn row by row, so the stream layout is fixed.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.p();
        let mut z = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            for j in 0..p {
                z[(i, j)] = rng.sample(StandardNormal);
            }
        }
        match &self.root {
            Root::Diagonal(d) => {
                for (j, s) in d.iter().enumerate() {
                    z.column_mut(j).scale_mut(*s);
                }
                z
            }
            Root::Lower(l) => z * l.transpose(),
        }
    }
}

/// XᵀX/n, symmetrized exactly.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut s = x.tr_mul(x);
    s /= n;
    let p = s.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(n: usize, p: usize, seed: u64) -> Result<Self> {
        let spec = Self { n, p, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidModel("dimension p must be positive".into()));
        }
        if self.n < self.p {
            return Err(Error::DegenerateSample { n: self.n, p: self.p });
        }
        Ok(())
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.p as f64 / self.n as f64
    }
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiked_without_spikes_is_identity() {
        let m: CovarianceModel = SpikedModel::new(vec![], 1.0, 3).unwrap().into();
        assert_eq!(m.materialize().unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn spiked_materializes_to_diagonal() {
        let m: CovarianceModel = SpikedModel::new(vec![5.0, 4.0, 3.0, 2.0], 1.0, 6).unwrap().into();
        let expected = DMatrix::from_diagonal(&vec![6.0, 5.0, 4.0, 3.0, 1.0, 1.0].into());
        assert_eq!(m.materialize().unwrap(), expected);
    }

    #[test]
    fn ar_materializes_powers() {
        let m: CovarianceModel = ArModel::new(0.5, 3).unwrap().into();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        assert_eq!(m.materialize().unwrap(), expected);
    }

    #[test]
    fn accessors() {
        let m = SpikedModel::new(vec![5.0, 4.0, 3.0, 2.0], 1.0, 500).unwrap();
        assert_eq!(m.true_noise(), 1.0);
        let m = SpikedModel::new(vec![], 2.0, 10).unwrap();
        assert!(m.true_spikes().is_empty());
        let m = SpikedModel::new(vec![0.3], 1.0, 100).unwrap();
        assert_eq!(m.true_spikes(), &[0.3]);
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(SpikedModel::new(vec![], 1.0, 0).is_err());
        assert!(SpikedModel::new(vec![1.0, 2.0], 1.0, 5).is_err());
        assert!(SpikedModel::new(vec![1.0], 0.0, 5).is_err());
        assert!(SpikedModel::new(vec![3.0, 2.0, 1.0], 1.0, 2).is_err());
        assert!(ArModel::new(1.0, 4).is_err());
        assert!(ArModel::new(0.2, 0).is_err());
    }

    #[test]
    fn sample_spec_rejects_n_below_p() {
        assert!(matches!(SampleSpec::new(3, 4, 0), Err(Error::DegenerateSample { n: 3, p: 4 })));
    }

    #[test]
    fn sample_covariance_is_deterministic_and_symmetric() {
        let m: CovarianceModel = ArModel::new(0.7, 6).unwrap().into();
        let spec = SampleSpec::new(20, 6, 42).unwrap();
        let a = m.sample_covariance(&spec).unwrap();
        let b = m.sample_covariance(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, a.transpose());
        assert!(a.clone().symmetric_eigenvalues().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn large_sample_covariance_is_close_to_truth() {
        let m: CovarianceModel = SpikedModel::new(vec![], 1.0, 2).unwrap().into();
        let s = m.sample_covariance(&SampleSpec::new(10_000, 2, 7).unwrap()).unwrap();
        assert!((s - DMatrix::<f64>::identity(2, 2)).norm() < 0.1);
    }

    #[test]
    fn ar_cholesky_exists_across_kappa() {
        for kappa in [0.0, 0.3, 0.9, 0.95, 0.999] {
            let m: CovarianceModel = ArModel::new(kappa, 50).unwrap().into();
            assert!(m.sampler().is_ok(), "kappa = {kappa}");
        }
    }

    #[test]
    fn streams_differ() {
        let a: f64 = stream_rng(1, 0).sample(StandardNormal);
        let b: f64 = stream_rng(1, 1).sample(StandardNormal);
        assert_ne!(a, b);
    }
}

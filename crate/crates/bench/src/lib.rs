//! Fixtures shared by the criterion benches.

use spiked_noise::harness::par_replicates;
use spiked_noise::model::gram;
use spiked_noise::{decompose, CovarianceModel, DMatrix, SpectralData, SpikedModel};

/// One draw of X (n × p) from the spiked model γ = (5, 4, 3, 2), σ² = 1.
pub fn spiked_draw(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let model: CovarianceModel = SpikedModel::new(vec![5.0, 4.0, 3.0, 2.0], 1.0, p).unwrap().into();
    let sampler = model.sampler().unwrap();
    par_replicates(seed, 0, 1, 1, |_, rng| sampler.sample(n, rng)).unwrap().remove(0)
}

pub fn spiked_spectrum(n: usize, p: usize, seed: u64) -> SpectralData {
    decompose(&gram(&spiked_draw(n, p, seed)), n).unwrap()
}

//! Monte Carlo invariants at desk scale.

use spiked_noise::benchmarks::ledoit_wolf;
use spiked_noise::harness::{self, par_replicates, Dims, ModelFamily, UreTarget};
use spiked_noise::model::gram;
use spiked_noise::{
    decompose, ArModel, CovarianceModel, DMatrix, EstimatorKind, ExperimentConfig, LossKind, SampleSpec, SpikedEstimator,
    SpikedModel,
};

fn spiked(gammas: &[f64], p: usize) -> CovarianceModel {
    SpikedModel::new(gammas.to_vec(), 1.0, p).unwrap().into()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn sample_spectra_are_distinct() {
    let model = spiked(&[4.0, 3.0, 2.0, 1.0], 10);
    let mut min_gap = f64::INFINITY;
    for seed in 0..1000 {
        let s = model.sample_covariance(&SampleSpec::new(40, 10, seed).unwrap()).unwrap();
        let spec = decompose(&s, 40).unwrap();
        spec.ensure_generic().unwrap();
        let l = spec.eigenvalues();
        min_gap = l.windows(2).map(|w| w[0] - w[1]).fold(min_gap, f64::min);
    }
    assert!(min_gap > 0.0, "{min_gap}");
}

#[test]
fn ure_is_unbiased_when_rank_does_not_depend_on_the_sample() {
    for p in [5, 10] {
        let model = spiked(&[4.0, 3.0, 2.0, 1.0], p);
        for target in [UreTarget::Sample, UreTarget::FixedRank(4), UreTarget::FixedRank(1), UreTarget::HeldOut] {
            let check = harness::verify_ure(&model, 4 * p, 2000, 100 + p as u64, 1, target).unwrap();
            assert!(check.z.abs() <= 3.0, "p={p} {target:?}: z={}", check.z);
            assert_eq!(check.included + check.excluded, 2000);
        }
    }
}

#[test]
fn mean_sample_covariance_converges_at_root_r() {
    let model: CovarianceModel = ArModel::new(0.5, 5).unwrap().into();
    let truth = model.materialize().unwrap();
    let sampler = model.sampler().unwrap();
    let distance = |replicates: usize| {
        let draws = par_replicates(21, 0, replicates, 1, |_, rng| gram(&sampler.sample(10, rng))).unwrap();
        let mean = draws.iter().fold(DMatrix::zeros(5, 5), |acc, s| acc + s) / replicates as f64;
        (mean - &truth).norm()
    };
    let (coarse, fine) = (distance(100), distance(6400));
    assert!(fine < coarse);
    // √64 = 8; allow a wide band for the randomness of a single norm.
    let ratio = coarse / fine;
    assert!((2.0..32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn noise_error_halves_when_n_doubles() {
    let est = SpikedEstimator::default();
    let median_error = |n: usize, reps: usize| {
        let p = n / 2;
        let sampler = spiked(&[5.0, 4.0, 3.0, 2.0], p).sampler().unwrap();
        let errs = par_replicates(31, 0, reps, 0, |_, rng| {
            let spec = decompose(&gram(&sampler.sample(n, rng)), n).unwrap();
            (est.assemble(&spec).unwrap().0.sigma2_hat - 1.0).abs()
        })
        .unwrap();
        median(errs)
    };
    let ratio = median_error(1000, 200) / median_error(500, 200);
    assert!((0.35..=0.65).contains(&ratio), "ratio {ratio}");
}

#[test]
fn threshold_admits_true_rank_at_every_n() {
    let freq = |n: usize, reps: usize| {
        let p = n / 2;
        let sampler = spiked(&[5.0, 4.0, 3.0, 2.0], p).sampler().unwrap();
        let hits = par_replicates(41, 0, reps, 0, |_, rng| {
            let spec = decompose(&gram(&sampler.sample(n, rng)), n).unwrap();
            let l = spec.eigenvalues();
            let edge = (1.0 + (p as f64 / n as f64).sqrt()).powi(2);
            edge * spec.trailing_mean(4).unwrap() / l[4] >= 1.0
        })
        .unwrap();
        hits.iter().filter(|h| **h).count() as f64 / reps as f64
    };
    // l_5 fluctuates around the bulk edge on the n^(-2/3) scale, so the
    // frequency settles near a constant rather than climbing to 1.
    let f = [freq(400, 100), freq(1000, 50), freq(2000, 20)];
    eprintln!("threshold admission frequencies {f:?}");
    assert!(f.iter().all(|x| *x >= 0.75), "{f:?}");
}

#[test]
fn ledoit_wolf_shrinks_hard_when_p_exceeds_n() {
    let sampler = spiked(&[], 100).sampler().unwrap();
    let weights = par_replicates(51, 0, 10, 1, |_, rng| ledoit_wolf(&sampler.sample(50, rng)).unwrap().shrinkage.unwrap()).unwrap();
    assert!(weights.iter().all(|w| *w > 0.5), "{weights:?}");
}

#[test]
fn ledoit_wolf_approaches_sample_as_n_grows() {
    let sampler: CovarianceModel = ArModel::new(0.5, 10).unwrap().into();
    let sampler = sampler.sampler().unwrap();
    let mean_weight = |n: usize| {
        let w = par_replicates(61, 0, 10, 1, |_, rng| ledoit_wolf(&sampler.sample(n, rng)).unwrap().shrinkage.unwrap()).unwrap();
        w.iter().sum::<f64>() / w.len() as f64
    };
    let w = [mean_weight(100), mean_weight(1000), mean_weight(10000)];
    assert!(w[0] > w[1] && w[1] > w[2] && w[2] < 0.05, "{w:?}");
}

#[test]
fn stein_beats_sample_in_haff_risk_under_spikes() {
    let config = ExperimentConfig {
        model: ModelFamily::Spiked { gammas: vec![4.0, 3.0, 2.0, 1.0], sigma2: 1.0 },
        dims: vec![Dims { n: 100, p: 50 }],
        replicates: 100,
        estimators: vec![EstimatorKind::Sample, EstimatorKind::Stein],
        losses: vec![LossKind::Haff],
        seed: 71,
        threads: 1,
    };
    let report = harness::run_risk_experiment(&config).unwrap();
    let (s, stein) = (report.cells[0].risk.unwrap(), report.cells[1].risk.unwrap());
    assert!(stein < s, "{stein} vs {s}");
}

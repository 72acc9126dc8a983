//! Monte Carlo experiments: estimator risks, unbiasedness checks and identity checks.
//!
//! Replicate `i` of cell `j` draws from stream `(j << 32) | i` of the generator
//! keyed by the base seed. Replicates run on a dedicated rayon pool and are
//! reduced in index order, so results do not depend on the thread count.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks;
use crate::error::{Error, Result};
use crate::model::{gram, stream_rng, ArModel, CovarianceModel, SpikedModel};
use crate::numeric::{mean_se, sum};
use crate::spectra::{decompose, SpectralData};
use crate::spiked::SpikedEstimator;
use crate::ure::{self, EstimatorProfile, Truth};

pub const SCHEMA_VERSION: u32 = 1;

/// Dimension-free description of the truth; instantiated per (n, p) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFamily {
    Spiked { gammas: Vec<f64>, sigma2: f64 },
    Ar { kappa: f64 },
}

impl ModelFamily {
    pub fn at_dim(&self, p: usize) -> Result<CovarianceModel> {
        Ok(match self {
            ModelFamily::Spiked { gammas, sigma2 } => SpikedModel::new(gammas.clone(), *sigma2, p)?.into(),
            ModelFamily::Ar { kappa } => ArModel::new(*kappa, p)?.into(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Sample,
    Spiked,
    LedoitWolf,
    Stein,
    Truth,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Sample,
        EstimatorKind::Spiked,
        EstimatorKind::LedoitWolf,
        EstimatorKind::Stein,
        EstimatorKind::Truth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Sample => "sample",
            EstimatorKind::Spiked => "spiked",
            EstimatorKind::LedoitWolf => "ledoit-wolf",
            EstimatorKind::Stein => "stein",
            EstimatorKind::Truth => "truth",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (expected sample, spiked, ledoit-wolf, stein or truth)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Haff,
    Frobenius,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Haff => "haff",
            LossKind::Frobenius => "frobenius",
        }
    }

    pub fn evaluate(self, truth: &Truth, estimate: &DMatrix<f64>) -> Result<f64> {
        match self {
            LossKind::Haff => truth.haff_loss(estimate),
            LossKind::Frobenius => truth.frobenius_loss(estimate),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haff" => Ok(LossKind::Haff),
            "frobenius" => Ok(LossKind::Frobenius),
            _ => Err(Error::Config(format!("unknown loss '{s}' (expected haff or frobenius)"))),
        }
    }
}

fn default_replicates() -> usize {
    100
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Sample, EstimatorKind::Spiked, EstimatorKind::LedoitWolf, EstimatorKind::Stein]
}

fn default_losses() -> Vec<LossKind> {
    vec![LossKind::Haff, LossKind::Frobenius]
}

fn default_threads() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelFamily,
    pub dims: Vec<Dims>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.replicates == 0 {
            problems.push("replicates: must be at least 1".to_string());
        }
        if self.dims.is_empty() {
            problems.push("dims: at least one (n, p) pair is required".to_string());
        }
        for (i, d) in self.dims.iter().enumerate() {
            if d.p == 0 {
                problems.push(format!("dims[{i}].p: must be positive"));
            }
            if d.n < d.p {
                problems.push(format!("dims[{i}]: n = {} is smaller than p = {}", d.n, d.p));
            }
            if let Err(e) = self.model.at_dim(d.p.max(1)) {
                problems.push(format!("model (at dims[{i}]): {e}"));
            }
        }
        if self.dims.len() > u32::MAX as usize || self.replicates > u32::MAX as usize {
            problems.push("dims/replicates: too many for the stream layout".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCell {
    pub method: EstimatorKind,
    pub loss: LossKind,
    pub n: usize,
    pub p: usize,
    pub c: f64,
    /// Mean loss over included replicates; absent when all were excluded.
    pub risk: Option<f64>,
    pub se: Option<f64>,
    pub replicates: usize,
    pub excluded: usize,
    /// Risk(S)/Risk(method) − 1.
    pub gain: Option<f64>,
    /// Distinct failure messages among excluded replicates.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub cells: Vec<RiskCell>,
}

/// Runs `f` for replicates 0..count on `threads` workers; output is in replicate order.
pub fn par_replicates<T, F>(seed: u64, stream_base: u64, count: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, stream_base + i as u64);
                f(i, &mut rng)
            })
            .collect()
    }))
}

fn cell_stream(cell: usize) -> u64 {
    (cell as u64) << 32
}

type Outcome = std::result::Result<f64, String>;

fn estimate(kind: EstimatorKind, x: &DMatrix<f64>, spec: &std::result::Result<SpectralData, String>, truth: &Truth) -> std::result::Result<DMatrix<f64>, String> {
    let spec = || spec.as_ref().map_err(Clone::clone);
    match kind {
        EstimatorKind::Truth => Ok(truth.matrix().clone()),
        EstimatorKind::Sample => Ok(spec()?.matrix().clone()),
        EstimatorKind::Spiked => SpikedEstimator::default()
            .estimate_matrix(spec()?)
            .map(|(m, _, _)| m)
            .map_err(|e| e.to_string()),
        EstimatorKind::LedoitWolf => benchmarks::ledoit_wolf(x).map(|e| e.matrix).map_err(|e| e.to_string()),
        EstimatorKind::Stein => benchmarks::stein_isotonized(spec()?).map(|e| e.matrix).map_err(|e| e.to_string()),
    }
}

pub fn run_risk_experiment(config: &ExperimentConfig) -> Result<RiskReport> {
    config.validate()?;
    let mut cells = Vec::new();
    for (ci, dims) in config.dims.iter().enumerate() {
        let model = config.model.at_dim(dims.p)?;
        let truth = Truth::new(model.materialize()?)?;
        let sampler = model.sampler()?;
        let n = dims.n;
        let outcomes: Vec<Vec<Vec<Outcome>>> = par_replicates(config.seed, cell_stream(ci), config.replicates, config.threads, |_, rng| {
            let x = sampler.sample(n, rng);
            let spec = decompose(&gram(&x), n).map_err(|e| e.to_string());
            config
                .estimators
                .iter()
                .map(|&kind| match estimate(kind, &x, &spec, &truth) {
                    Ok(m) => config
                        .losses
                        .iter()
                        .map(|&loss| loss.evaluate(&truth, &m).map_err(|e| e.to_string()))
                        .collect(),
                    Err(msg) => vec![Err(msg); config.losses.len()],
                })
                .collect()
        })?;

        let first = cells.len();
        for (ei, &method) in config.estimators.iter().enumerate() {
            for (li, &loss) in config.losses.iter().enumerate() {
                let mut values = Vec::with_capacity(outcomes.len());
                let mut failures: Vec<String> = Vec::new();
                for rep in &outcomes {
                    match &rep[ei][li] {
                        Ok(v) if v.is_finite() => values.push(*v),
                        Ok(v) => push_unique(&mut failures, format!("non-finite loss {v}")),
                        Err(msg) => push_unique(&mut failures, msg.clone()),
                    }
                }
                let (risk, se) = if values.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_se(&values);
                    (Some(m), Some(s))
                };
                cells.push(RiskCell {
                    method,
                    loss,
                    n,
                    p: dims.p,
                    c: dims.p as f64 / n as f64,
                    risk,
                    se,
                    replicates: values.len(),
                    excluded: outcomes.len() - values.len(),
                    gain: None,
                    failures,
                });
            }
        }
        let block = &mut cells[first..];
        for li in 0..config.losses.len() {
            let base = config
                .estimators
                .iter()
                .position(|&e| e == EstimatorKind::Sample)
                .and_then(|ei| block[ei * config.losses.len() + li].risk);
            if let Some(base) = base {
                for ei in 0..config.estimators.len() {
                    let cell = &mut block[ei * config.losses.len() + li];
                    cell.gain = cell.risk.map(|r| base / r - 1.0);
                }
            }
        }
    }
    Ok(RiskReport { schema_version: SCHEMA_VERSION, config: config.clone(), cells })
}

fn push_unique(list: &mut Vec<String>, msg: String) {
    if !list.contains(&msg) {
        list.push(msg);
    }
}

pub const CSV_HEADER: [&str; 8] = ["method", "loss", "n", "p", "risk", "se", "gain", "excluded"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(report: &RiskReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for c in &report.cells {
        w.write_record([
            c.method.name().to_string(),
            c.loss.name().to_string(),
            c.n.to_string(),
            c.p.to_string(),
            opt(c.risk),
            opt(c.se),
            opt(c.gain),
            c.excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(report: &RiskReport, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<RiskReport> {
    let report: RiskReport = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!("unsupported schema_version {}", report.schema_version)));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes `risk.csv` and `risk.json` into `dir`, creating it if needed.
pub fn emit(report: &RiskReport, dir: &Path) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir)?;
    let files = EmittedFiles { csv: dir.join("risk.csv"), json: dir.join("risk.json") };
    write_csv(report, std::io::BufWriter::new(std::fs::File::create(&files.csv)?))?;
    let mut json = std::io::BufWriter::new(std::fs::File::create(&files.json)?);
    write_json(report, &mut json)?;
    json.write_all(b"\n")?;
    json.flush()?;
    Ok(files)
}

/// Which estimator the unbiasedness check is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UreTarget {
    /// Σ̃ with its rank selected on the same data.
    Selected,
    /// Σ̃_r with r selected on an independent draw of the same size.
    HeldOut,
    /// Σ̃_r for a fixed r.
    FixedRank(usize),
    /// S.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UreCheck {
    pub ure_mean: f64,
    pub ure_se: f64,
    pub loss_mean: f64,
    pub loss_se: f64,
    /// (mean F+G − mean loss)/√(SE² + SE²).
    pub z: f64,
    pub included: usize,
    pub excluded: usize,
}

/// Compares the Monte Carlo mean of F + G with that of the Haff loss on the same draws.
pub fn verify_ure(model: &CovarianceModel, n: usize, replicates: usize, seed: u64, threads: usize, target: UreTarget) -> Result<UreCheck> {
    let p = model.p();
    ure::require_ure_regime(n, p)?;
    if replicates < 2 {
        return Err(Error::Config("replicates: at least 2 are needed for a standard error".into()));
    }
    let truth = Truth::new(model.materialize()?)?;
    let sampler = model.sampler()?;
    let est = SpikedEstimator::default();
    let pairs = par_replicates(seed, 0, replicates, threads, |_, rng| -> Result<(f64, f64)> {
        let spec = decompose(&gram(&sampler.sample(n, rng)), n)?;
        let (matrix, value) = match target {
            UreTarget::Sample => (spec.matrix().clone(), ure::evaluate(&spec, &EstimatorProfile::sample(spec.eigenvalues()))?),
            UreTarget::FixedRank(r) => fixed_rank_pair(&est, &spec, r)?,
            UreTarget::HeldOut => {
                let other = decompose(&gram(&sampler.sample(n, rng)), n)?;
                fixed_rank_pair(&est, &spec, est.select_rank(&other).selected)?
            }
            UreTarget::Selected => {
                let (m, fit, diag) = est.estimate_matrix(&spec)?;
                let value = match diag.candidates.last().and_then(|c| c.ure) {
                    Some(v) => v,
                    None => ure::evaluate(&spec, &est.profile(&spec, fit.rho_hat)?)?,
                };
                (m, value)
            }
        };
        Ok((value.total, truth.haff_loss(&matrix)?))
    })?;
    let ok: Vec<(f64, f64)> = pairs.iter().filter_map(|r| r.as_ref().ok()).copied().collect();
    if ok.len() < 2 {
        let first = pairs.into_iter().find_map(|r| r.err());
        return Err(first.unwrap_or_else(|| Error::Config("too few successful replicates".into())));
    }
    let ures: Vec<f64> = ok.iter().map(|v| v.0).collect();
    let losses: Vec<f64> = ok.iter().map(|v| v.1).collect();
    let (ure_mean, ure_se) = mean_se(&ures);
    let (loss_mean, loss_se) = mean_se(&losses);
    Ok(UreCheck {
        ure_mean,
        ure_se,
        loss_mean,
        loss_se,
        z: (ure_mean - loss_mean) / (ure_se * ure_se + loss_se * loss_se).sqrt(),
        included: ok.len(),
        excluded: replicates - ok.len(),
    })
}

fn fixed_rank_pair(est: &SpikedEstimator, spec: &SpectralData, r: usize) -> Result<(DMatrix<f64>, ure::UreValue)> {
    let fit = est.fixed_rank(spec, r)?;
    let value = ure::evaluate(spec, &est.profile(spec, r)?)?;
    let m = if r == spec.p() { spec.matrix().clone() } else { fit.materialize() };
    Ok((m, value))
}

/// Built-in ψ families with closed-form derivatives, ψ_k = f(l_k).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiFamily {
    /// ψ_k = l_k.
    Identity,
    /// ψ_k = l_k².
    Square,
    /// ψ_k = 1.
    Constant,
}

impl FromStr for PsiFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l" | "identity" => Ok(PsiFamily::Identity),
            "l2" | "square" => Ok(PsiFamily::Square),
            "1" | "constant" => Ok(PsiFamily::Constant),
            _ => Err(Error::Config(format!("unknown psi family '{s}' (expected l, l2 or 1)"))),
        }
    }
}

impl PsiFamily {
    fn f(self, l: f64) -> f64 {
        match self {
            PsiFamily::Identity => l,
            PsiFamily::Square => l * l,
            PsiFamily::Constant => 1.0,
        }
    }

    fn df(self, l: f64) -> f64 {
        match self {
            PsiFamily::Identity => 1.0,
            PsiFamily::Square => 2.0 * l,
            PsiFamily::Constant => 0.0,
        }
    }

    fn d2f(self) -> f64 {
        match self {
            PsiFamily::Square => 2.0,
            _ => 0.0,
        }
    }

    /// (f(a) − f(b))/(a − b).
    fn divided(self, a: f64, b: f64) -> f64 {
        match self {
            PsiFamily::Identity => 1.0,
            PsiFamily::Square => a + b,
            PsiFamily::Constant => 0.0,
        }
    }

    /// ∂/∂a of (f(a) − f(b))/(a − b).
    fn divided_da(self) -> f64 {
        match self {
            PsiFamily::Square => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs_mean: f64,
    pub lhs_se: f64,
    pub rhs_mean: f64,
    pub rhs_se: f64,
    /// Paired z-score of the mean difference.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinHaffReport {
    pub family: PsiFamily,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    /// E tr(Σ⁻¹OΨOᵀ) against its eigenvalue-only expression.
    pub first_order: IdentityCheck,
    /// E tr[(Σ⁻¹OΨOᵀ)²] against the same expression applied to ψ*.
    pub second_order: IdentityCheck,
}

/// Σ (n−p−1)/n ψ_k/l_k + (2/n) Σ dψ_k + (1/n) Σ_{k≠b} (ψ_k − ψ_b)/(l_k − l_b).
fn identity_rhs(l: &[f64], n: usize, psi: &[f64], dpsi: &[f64]) -> f64 {
    let p = l.len();
    let nf = n as f64;
    let m = nf - p as f64 - 1.0;
    let mut pairs = 0.0;
    let mut terms = Vec::with_capacity(p);
    for k in 0..p {
        for b in 0..p {
            if b != k {
                pairs += (psi[k] - psi[b]) / (l[k] - l[b]);
            }
        }
        terms.push(m / nf * psi[k] / l[k] + 2.0 / nf * dpsi[k]);
    }
    sum(terms) + pairs / nf
}

fn stein_haff_sides(family: PsiFamily, spec: &SpectralData, truth: &Truth) -> Result<[f64; 4]> {
    let l = spec.eigenvalues();
    let p = l.len();
    let nf = spec.n() as f64;
    let m = nf - p as f64 - 1.0;
    let psi: Vec<f64> = l.iter().map(|&v| family.f(v)).collect();
    let dpsi: Vec<f64> = l.iter().map(|&v| family.df(v)).collect();

    let x = truth.solve(&spec.reassemble(&psi))?;
    let lhs1 = x.trace();
    let lhs2 = (x.transpose().component_mul(&x)).sum();
    let rhs1 = identity_rhs(l, spec.n(), &psi, &dpsi);

    let mut star = vec![0.0; p];
    let mut dstar = vec![0.0; p];
    for k in 0..p {
        let (f, df) = (psi[k], dpsi[k]);
        let dsum: f64 = (0..p).filter(|&b| b != k).map(|b| family.divided(l[k], l[b])).sum();
        let ddsum = (p - 1) as f64 * family.divided_da();
        star[k] = m / nf * f * f / l[k] + 4.0 / nf * f * df + 2.0 / nf * f * dsum;
        dstar[k] = m / nf * (2.0 * f * df / l[k] - f * f / (l[k] * l[k]))
            + 4.0 / nf * (df * df + f * family.d2f())
            + 2.0 / nf * (df * dsum + f * ddsum);
    }
    let rhs2 = identity_rhs(l, spec.n(), &star, &dstar);
    Ok([lhs1, rhs1, lhs2, rhs2])
}

fn identity_check(lhs: &[f64], rhs: &[f64]) -> IdentityCheck {
    let (lhs_mean, lhs_se) = mean_se(lhs);
    let (rhs_mean, rhs_se) = mean_se(rhs);
    let diff: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let (d, dse) = mean_se(&diff);
    let z = if dse > 0.0 {
        d / dse
    } else if d.abs() <= 1e-12 * lhs_mean.abs().max(1.0) {
        0.0
    } else {
        d.signum() * f64::INFINITY
    };
    IdentityCheck { lhs_mean, lhs_se, rhs_mean, rhs_se, z }
}

/// Monte Carlo check of the first- and second-order Stein-Haff identities for a ψ family.
pub fn verify_stein_haff(family: PsiFamily, n: usize, truth: &CovarianceModel, replicates: usize, seed: u64, threads: usize) -> Result<SteinHaffReport> {
    let p = truth.p();
    if n < p {
        return Err(Error::DegenerateSample { n, p });
    }
    if replicates < 2 {
        return Err(Error::Config("replicates: at least 2 are needed for a standard error".into()));
    }
    let t = Truth::new(truth.materialize()?)?;
    let sampler = truth.sampler()?;
    let sides = par_replicates(seed, 0, replicates, threads, |_, rng| {
        let spec = decompose(&gram(&sampler.sample(n, rng)), n)?;
        stein_haff_sides(family, &spec, &t)
    })?;
    let sides: Vec<[f64; 4]> = sides.into_iter().collect::<Result<_>>()?;
    let col = |j: usize| sides.iter().map(|s| s[j]).collect::<Vec<f64>>();
    Ok(SteinHaffReport {
        family,
        n,
        p,
        replicates,
        first_order: identity_check(&col(0), &col(1)),
        second_order: identity_check(&col(2), &col(3)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelFamily::Spiked { gammas: vec![4.0, 2.0], sigma2: 1.0 },
            dims: vec![Dims { n: 40, p: 10 }],
            replicates: 8,
            estimators: vec![EstimatorKind::Sample, EstimatorKind::Spiked, EstimatorKind::Truth],
            losses: vec![LossKind::Haff, LossKind::Frobenius],
            seed: 11,
            threads: 1,
        }
    }

    #[test]
    fn truth_oracle_has_zero_risk() {
        let report = run_risk_experiment(&small_config()).unwrap();
        for cell in report.cells.iter().filter(|c| c.method == EstimatorKind::Truth) {
            assert_eq!(cell.risk, Some(0.0));
            assert_eq!(cell.excluded, 0);
        }
    }

    #[test]
    fn exclusions_account_for_all_replicates() {
        let report = run_risk_experiment(&small_config()).unwrap();
        for cell in &report.cells {
            assert_eq!(cell.replicates + cell.excluded, 8);
        }
    }

    #[test]
    fn gain_is_zero_for_sample() {
        let report = run_risk_experiment(&small_config()).unwrap();
        for cell in report.cells.iter().filter(|c| c.method == EstimatorKind::Sample) {
            assert_eq!(cell.gain, Some(0.0));
        }
    }

    #[test]
    fn config_reports_every_bad_field() {
        let mut cfg = small_config();
        cfg.replicates = 0;
        cfg.dims.push(Dims { n: 3, p: 5 });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("replicates"), "{err}");
        assert!(err.contains("dims[1]"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            seed = 3
            replicates = 5
            estimators = ["sample", "ledoit-wolf"]
            losses = ["frobenius"]
            [model]
            kind = "ar"
            kappa = 0.5
            [[dims]]
            n = 20
            p = 10
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.model, ModelFamily::Ar { kappa: 0.5 });
        assert_eq!(cfg.estimators, vec![EstimatorKind::Sample, EstimatorKind::LedoitWolf]);
        assert_eq!(cfg.threads, 1);
        assert!(ExperimentConfig::from_toml_str("replicates = 5").is_err());
        assert!(ExperimentConfig::from_toml_str(&text.replace("frobenius", "l1")).is_err());
    }

    #[test]
    fn psi_family_names() {
        assert_eq!("l2".parse::<PsiFamily>().unwrap(), PsiFamily::Square);
        assert!(matches!("l3".parse::<PsiFamily>(), Err(Error::Config(_))));
    }

    #[test]
    fn identity_family_first_order_is_exactly_p() {
        let truth: CovarianceModel = SpikedModel::new(vec![], 1.0, 5).unwrap().into();
        let t = Truth::new(truth.materialize().unwrap()).unwrap();
        let spec = SpectralData::from_eigenvalues(vec![3.0, 2.0, 1.5, 1.0, 0.5], 20).unwrap();
        let s = stein_haff_sides(PsiFamily::Identity, &spec, &t).unwrap();
        assert!((s[1] - 5.0).abs() < 1e-13);
    }
}

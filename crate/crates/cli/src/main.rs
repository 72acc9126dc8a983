use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use spiked_noise::asymptotics::{self, RegimeParams};
use spiked_noise::harness::{self, EstimatorKind, LossKind, PsiFamily, UreTarget};
use spiked_noise::model::gram;
use spiked_noise::{benchmarks, decompose, CovarianceModel, ExperimentConfig, SpikedEstimator, SpikedModel};

/// Tolerance on |z| used by the verification subcommands.
const Z_TOLERANCE: f64 = 3.0;

#[derive(Parser, Debug)]
#[command(name = "spiked-noise", version, about = "Noise and spiked covariance estimation in high dimensions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the covariance of a data matrix (rows are observations).
    Estimate(EstimateArgs),
    /// Run a Monte Carlo risk experiment from a config file.
    Simulate(SimulateArgs),
    /// Check that F + G is unbiased for the Haff risk.
    VerifyUre(VerifyUreArgs),
    /// Check the first- and second-order Stein-Haff identities.
    VerifySteinHaff(VerifySteinHaffArgs),
    /// Print closed-form limits for a spike.
    Asymptotics(AsymptoticsArgs),
}

#[derive(Args, Debug)]
struct Parallelism {
    /// Base seed for the random streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 uses every core).
    #[arg(long, env = "SPIKED_NOISE_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Delimited text file, comma or whitespace separated.
    input: PathBuf,
    /// Skip the first line of the input.
    #[arg(long)]
    header: bool,
    #[arg(long, default_value = "spiked", value_parser = parse_estimator)]
    estimator: EstimatorKind,
    /// Directory for estimate.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config thread count.
    #[arg(long, env = "SPIKED_NOISE_THREADS")]
    threads: Option<usize>,
    /// Overrides the config replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Restricts the estimators (repeatable).
    #[arg(long, value_parser = parse_estimator)]
    estimator: Vec<EstimatorKind>,
    /// Restricts the losses (repeatable).
    #[arg(long, value_parser = parse_loss)]
    loss: Vec<LossKind>,
}

#[derive(Args, Debug)]
struct VerifyUreArgs {
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    replicates: usize,
    /// Spike strengths of the truth.
    #[arg(long, value_delimiter = ',', default_value = "4,3,2,1")]
    gammas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// `selected`, `held-out` (rank chosen on an independent draw), `sample`, or a fixed rank.
    #[arg(long, default_value = "selected", value_parser = parse_target)]
    rank: UreTarget,
    #[command(flatten)]
    par: Parallelism,
}

#[derive(Args, Debug)]
struct VerifySteinHaffArgs {
    /// ψ family: l, l2 or 1.
    #[arg(long, default_value = "l2", value_parser = parse_psi)]
    psi: PsiFamily,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    replicates: usize,
    /// Spike strengths of the truth (none by default, so Σ = σ²I).
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[command(flatten)]
    par: Parallelism,
}

#[derive(Args, Debug)]
struct AsymptoticsArgs {
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: spiked_noise::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: spiked_noise::Error| e.to_string())
}

fn parse_psi(s: &str) -> Result<PsiFamily, String> {
    s.parse().map_err(|e: spiked_noise::Error| e.to_string())
}

fn parse_target(s: &str) -> Result<UreTarget, String> {
    match s {
        "selected" => Ok(UreTarget::Selected),
        "held-out" => Ok(UreTarget::HeldOut),
        "sample" => Ok(UreTarget::Sample),
        r => r
            .parse()
            .map(UreTarget::FixedRank)
            .map_err(|_| format!("expected selected, held-out, sample or a rank, got '{r}'")),
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<spiked_noise::Error> for Failure {
    fn from(e: spiked_noise::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Numerical(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<spiked_noise::Error>() {
            Some(inner) if !inner.is_validation() => Failure::Numerical(e),
            _ => Failure::Validation(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Estimate(args) => estimate(args),
        Command::Simulate(args) => simulate(args),
        Command::VerifyUre(args) => verify_ure(args),
        Command::VerifySteinHaff(args) => verify_stein_haff(args),
        Command::Asymptotics(args) => print_asymptotics(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_matrix(path: &Path, header: bool) -> anyhow::Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(usize::from(header)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|tok| !tok.is_empty())
            .map(|tok| tok.parse::<f64>().with_context(|| format!("line {}: '{tok}' is not a number", i + 1)))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!("line {}: expected {} columns, found {}", i + 1, first.len(), row.len());
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        bail!("{} contains no data", path.display());
    }
    let (n, p) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(n, p, rows.into_iter().flatten()))
}

#[derive(Serialize)]
struct EstimateOutput {
    method: EstimatorKind,
    n: usize,
    p: usize,
    rho_tilde: Option<usize>,
    sigma2_tilde: Option<f64>,
    gammas: Option<Vec<f64>>,
    shrinkage: Option<f64>,
    diagnostics: Option<spiked_noise::RankDiagnostics>,
    matrix: Vec<Vec<f64>>,
}

fn estimate(args: EstimateArgs) -> Outcome {
    let x = read_matrix(&args.input, args.header).map_err(Failure::Validation)?;
    let (n, p) = (x.nrows(), x.ncols());
    if n < p {
        return Err(spiked_noise::Error::DegenerateSample { n, p }.into());
    }
    let mut out = EstimateOutput {
        method: args.estimator,
        n,
        p,
        rho_tilde: None,
        sigma2_tilde: None,
        gammas: None,
        shrinkage: None,
        diagnostics: None,
        matrix: Vec::new(),
    };
    let matrix = match args.estimator {
        EstimatorKind::Spiked => {
            let spec = decompose(&gram(&x), n)?;
            let (m, fit, diag) = SpikedEstimator::default().estimate_matrix(&spec)?;
            out.rho_tilde = Some(fit.rho_hat);
            out.sigma2_tilde = Some(fit.sigma2_hat);
            out.gammas = Some(fit.gammas_hat);
            out.diagnostics = Some(diag);
            m
        }
        EstimatorKind::Sample => gram(&x),
        EstimatorKind::LedoitWolf => {
            let est = benchmarks::ledoit_wolf(&x)?;
            out.shrinkage = est.shrinkage;
            est.matrix
        }
        EstimatorKind::Stein => benchmarks::stein_isotonized(&decompose(&gram(&x), n)?)?.matrix,
        EstimatorKind::Truth => {
            return Err(Failure::Validation(anyhow::anyhow!("the truth oracle needs a known covariance; use simulate")));
        }
    };
    out.matrix = matrix.row_iter().map(|r| r.iter().copied().collect()).collect();

    println!("method      = {}", out.method);
    println!("n, p        = {n}, {p}");
    if let Some(r) = out.rho_tilde {
        println!("rho_tilde   = {r}");
    }
    if let Some(s) = out.sigma2_tilde {
        println!("sigma2_tilde = {s}");
    }
    if let Some(g) = &out.gammas {
        let shown: Vec<String> = g.iter().take(10).map(|v| format!("{v:.6}")).collect();
        println!("gammas      = [{}]{}", shown.join(", "), if g.len() > 10 { " ..." } else { "" });
    }
    if let Some(w) = out.shrinkage {
        println!("shrinkage   = {w}");
    }
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Validation(e.into()))?;
        let path = dir.join("estimate.json");
        let file = std::fs::File::create(&path).map_err(|e| Failure::Validation(e.into()))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &out).map_err(|e| Failure::Validation(e.into()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Outcome {
    let mut config = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))
        .map_err(Failure::Validation)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if !args.estimator.is_empty() {
        config.estimators = args.estimator;
    }
    if !args.loss.is_empty() {
        config.losses = args.loss;
    }
    config.validate()?;
    let report = harness::run_risk_experiment(&config)?;
    let files = harness::emit(&report, &args.out)?;
    println!("{:<12} {:<10} {:>6} {:>6} {:>14} {:>12} {:>10} {:>4}", "method", "loss", "n", "p", "risk", "se", "gain", "excl");
    for c in &report.cells {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<12} {:<10} {:>6} {:>6} {:>14} {:>12} {:>10} {:>4}",
            c.method.name(),
            c.loss.name(),
            c.n,
            c.p,
            f(c.risk),
            f(c.se),
            f(c.gain),
            c.excluded
        );
    }
    println!("wrote {} and {}", files.csv.display(), files.json.display());
    Ok(())
}

fn verify_ure(args: VerifyUreArgs) -> Outcome {
    let model: CovarianceModel = SpikedModel::new(args.gammas, args.sigma2, args.p)?.into();
    let check = harness::verify_ure(&model, args.n, args.replicates, args.par.seed, args.par.threads, args.rank)?;
    println!("mean F+G    = {:.6} (se {:.6})", check.ure_mean, check.ure_se);
    println!("mean loss   = {:.6} (se {:.6})", check.loss_mean, check.loss_se);
    println!("z           = {:.3}  ({} included, {} excluded)", check.z, check.included, check.excluded);
    if check.z.abs() > Z_TOLERANCE {
        return Err(Failure::Numerical(anyhow::anyhow!("|z| = {:.3} exceeds {Z_TOLERANCE}", check.z.abs())));
    }
    Ok(())
}

fn verify_stein_haff(args: VerifySteinHaffArgs) -> Outcome {
    let model: CovarianceModel = SpikedModel::new(args.gammas, args.sigma2, args.p)?.into();
    let report = harness::verify_stein_haff(args.psi, args.n, &model, args.replicates, args.par.seed, args.par.threads)?;
    let mut worst: f64 = 0.0;
    for (name, c) in [("first order", report.first_order), ("second order", report.second_order)] {
        println!(
            "{name:<13} lhs {:.6} (se {:.6})  rhs {:.6} (se {:.6})  z {:.3}",
            c.lhs_mean, c.lhs_se, c.rhs_mean, c.rhs_se, c.z
        );
        worst = worst.max(c.z.abs());
    }
    if worst > Z_TOLERANCE {
        return Err(Failure::Numerical(anyhow::anyhow!("|z| = {worst:.3} exceeds {Z_TOLERANCE}")));
    }
    Ok(())
}

fn print_asymptotics(args: AsymptoticsArgs) -> Outcome {
    let params = RegimeParams::new(args.c, args.sigma2, vec![args.gamma])?;
    let limit = asymptotics::eigenvalue_limit(args.gamma, &params)?;
    println!("eigenvalue limit          = {limit:.6}");
    println!("bulk edge                 = {:.6}", params.bulk_edge());
    println!("inverse moment m=1        = {:.6}", asymptotics::mp_inverse_moment(1, &params)?);
    println!("inverse moment m=2        = {:.6}", asymptotics::mp_inverse_moment(2, &params)?);
    if params.is_supercritical() {
        let s = asymptotics::stieltjes_limits(args.gamma, &params)?;
        println!("mean l_c/(l_k - l_c)      = {:.6}", s.ratio);
        println!("mean 1/(l_k - l_c)        = {:.6}", s.inverse_gap);
        println!("mean 1/(l_c (l_k - l_c))  = {:.6}", s.weighted);
        let k = asymptotics::clt_constants(&params, &[args.gamma])?;
        println!("clt mean band             = [{:.6}, {:.6}]", k.mu_minus, k.mu_plus);
        println!("clt variance              = {:.6}", k.variance);
    } else {
        println!("spike is below the critical value {:.6}", params.critical_gamma());
    }
    Ok(())
}

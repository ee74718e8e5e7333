//! `edg`: reconstruct point sets from partial squared distances and run the
//! accompanying experiments.
//!
//! Exit codes: 0 success, 1 solver did not converge (or a check failed),
//! 2 invalid configuration, 3 I/O or parse error, 4 divergence.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edg_core::coherence::{
    coherence_exact_with_limit, coherence_simplified_with_limit, detect_rank, sample_complexity,
    DEFAULT_COHERENCE_LIMIT,
};
use edg_core::experiments::{
    run_phase_diagram, run_table, write_timings_csv, write_trials_csv, Dataset, ExperimentSpec,
};
use edg_core::geometry::{center_gram_from_points, distance_matrix_from_points, procrustes_align, PointCloud};
use edg_core::io::{read_observations_file, write_matrix, write_points};
use edg_core::sampling::{corrupt, derive_noise_model, observe, sample_pairs, ClampPolicy};
use edg_core::solver::{observations_for_rate, reconstruct, Lambda, SolverConfig};
use edg_core::{verify, EdgError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "edg", version, about = "Euclidean distance geometry by low-rank Gram completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct one point set from sampled or given squared distances.
    Solve(SolveArgs),
    /// Relative Gram error statistics over sampling rates.
    Table(TableArgs),
    /// Success probability over a (rate, rank) grid.
    PhaseDiagram(PhaseArgs),
    /// Coherence of a point set and the resulting measurement bound.
    Coherence(CoherenceArgs),
    /// Check the basis identities and solver gradients.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Point CSV (one point per row).
    #[arg(long, conflicts_with = "generator")]
    input: Option<PathBuf>,
    /// Built-in generator: sphere:n, gaussian:n[:d].
    #[arg(long)]
    generator: Option<String>,
}

impl SourceArgs {
    fn dataset(&self) -> Result<Dataset, EdgError> {
        match (&self.input, &self.generator) {
            (Some(path), _) => Ok(Dataset::File(path.clone())),
            (None, Some(g)) => g.parse(),
            (None, None) => Err(EdgError::InvalidParameter("give --input or --generator".into())),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Clamp {
    Clamp,
    Redraw,
    Keep,
}

impl From<Clamp> for ClampPolicy {
    fn from(c: Clamp) -> Self {
        match c {
            Clamp::Clamp => ClampPolicy::Clamp,
            Clamp::Redraw => ClampPolicy::Redraw,
            Clamp::Keep => ClampPolicy::Keep,
        }
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Factor width.
    #[arg(long, default_value_t = 10)]
    q: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Outer iterations.
    #[arg(long = "max-iter", default_value_t = 100)]
    max_iter: usize,
    /// Barzilai-Borwein steps per outer iteration.
    #[arg(long = "bb-inner", default_value_t = 20)]
    bb_inner: usize,
    /// Penalty weight for noisy data: a number or "auto" (100 times the sampling rate).
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Add noise with mean 3σ and deviation σ, σ the smallest positive observation.
    #[arg(long)]
    noisy: bool,
    /// What to do with squared distances that turn negative under noise.
    #[arg(long, value_enum, default_value_t = Clamp::Clamp)]
    clamp: Clamp,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, EdgError> {
        let lambda = if self.lambda == "auto" {
            Lambda::Auto
        } else {
            let v: f64 = self
                .lambda
                .parse()
                .map_err(|_| EdgError::InvalidParameter(format!("--lambda must be a number or auto, got {}", self.lambda)))?;
            Lambda::Fixed(v)
        };
        let cfg = SolverConfig {
            q: self.q,
            tol: self.tol,
            max_outer: self.max_iter,
            bb_inner: self.bb_inner,
            lambda,
            seed: self.seed,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Observation CSV with rows i,j,d2 (1-based); no ground truth.
    #[arg(long, conflicts_with_all = ["input", "generator", "rate"])]
    obs: Option<PathBuf>,
    /// Point count for --obs when larger than the largest index.
    #[arg(long, requires = "obs")]
    n: Option<usize>,
    /// Fraction of the n(n-1)/2 pairs to observe.
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    /// Embedding dimension; defaults to the input dimension, or 3 with --obs.
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the recovered Gram matrix.
    #[arg(long)]
    write_gram: bool,
    #[arg(long = "output-dir", default_value = "edg-out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Relative Gram error below which a trial counts as a success.
    #[arg(long = "success-tol", default_value_t = 1e-5)]
    success_tol: f64,
    #[arg(long = "output-dir", default_value = "edg-out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated sampling rates.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.03, 0.05])]
    rates: Vec<f64>,
    #[command(flatten)]
    sweep: SweepArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct PhaseArgs {
    /// Generator fixing the point count, e.g. gaussian:300.
    #[arg(long, default_value = "gaussian:300")]
    generator: String,
    #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.05, 0.1, 0.2])]
    rates: Vec<f64>,
    /// Comma-separated point dimensions.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 5, 10])]
    ranks: Vec<usize>,
    #[command(flatten)]
    sweep: SweepArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct CoherenceArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Rank of the tangent space; defaults to the generator dimension or the
    /// largest eigenvalue gap.
    #[arg(long)]
    rank: Option<usize>,
    /// Confidence exponent of the measurement bound (must exceed 1).
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Use the cheaper sufficient conditions.
    #[arg(long)]
    simplified: bool,
    /// Largest n accepted.
    #[arg(long, default_value_t = DEFAULT_COHERENCE_LIMIT)]
    limit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write coherence.json here.
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest n for the basis identities (from 3).
    #[arg(long = "max-n", default_value_t = 12)]
    max_n: usize,
    /// Random matrices per n for the norm bounds.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(err: &EdgError) -> u8 {
    match err {
        EdgError::Io(_) | EdgError::Parse { .. } => 3,
        EdgError::Divergence { .. } => 4,
        _ => 2,
    }
}

fn check_rate(rate: f64) -> Result<(), EdgError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(EdgError::InvalidParameter(format!("--rate must lie in (0, 1], got {rate}")));
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, EdgError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), EdgError> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<ExitCode, EdgError> {
    let mut cfg = args.solver.config()?;
    let (obs, truth, source) = match &args.obs {
        Some(path) => (read_observations_file(path, args.n)?, None, path.display().to_string()),
        None => {
            check_rate(args.rate)?;
            let dataset = args.source.dataset()?;
            let points = dataset.points(args.solver.seed)?;
            let n = points.n();
            let m = observations_for_rate(n, args.rate);
            let pairs = sample_pairs(n, m, false, args.solver.seed)?;
            let obs = observe(&distance_matrix_from_points(&points), pairs, false)?;
            (obs, Some(points), dataset.to_string())
        }
    };
    let mut noise = None;
    let obs = if args.solver.noisy {
        let mut model = derive_noise_model(&obs)?;
        model.clamp = args.solver.clamp.into();
        noise = Some(model);
        corrupt(&obs, &model, args.solver.seed)?
    } else {
        obs
    };
    if obs.n() < 3 {
        return Err(EdgError::TooFewPoints(obs.n()));
    }
    cfg.q = cfg.q.min(obs.n());
    let dim = args
        .dim
        .or(truth.as_ref().map(PointCloud::dim))
        .unwrap_or(3)
        .min(obs.n());
    let truth_gram = truth.as_ref().map(center_gram_from_points);
    let rec = reconstruct(&obs, &cfg, dim, args.solver.noisy, truth_gram.as_ref())?;
    let rmsd = match &truth {
        Some(points) if points.dim() == dim => Some(procrustes_align(&rec.points, points)?.rmsd),
        _ => None,
    };

    write_points(create(&args.output_dir, "points.csv")?, &rec.points)?;
    if args.write_gram {
        write_matrix(create(&args.output_dir, "gram.csv")?, rec.gram.values())?;
    }
    let report = json!({
        "command": "solve",
        "source": source,
        "n": obs.n(),
        "observations": obs.len(),
        "sampling_rate": obs.sampling_rate(),
        "dimension": dim,
        "noisy": args.solver.noisy,
        "noise_model": noise,
        "lambda": args.solver.noisy.then(|| cfg.lambda.resolve(&obs)),
        "config": cfg,
        "rmsd": rmsd,
        "report": rec.report,
    });
    write_json(&args.output_dir, "report.json", &report)?;

    let r = &rec.report;
    print!(
        "{} after {} outer iterations ({:.3} s)",
        if r.converged { "converged" } else { "not converged" },
        r.iterations,
        r.wall_time
    );
    if let Some(e) = r.relative_error {
        print!(", relative Gram error {e:.3e}");
    }
    if let Some(d) = rmsd {
        print!(", rmsd {d:.3e}");
    }
    println!();
    println!("wrote {}", args.output_dir.display());
    Ok(if r.converged { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn spec_from(dataset: Dataset, rates: &[f64], sweep: &SweepArgs, solver: &SolverArgs) -> Result<ExperimentSpec, EdgError> {
    let mut spec = ExperimentSpec::new(dataset);
    spec.rates = rates.to_vec();
    spec.trials = sweep.trials;
    spec.threads = sweep.threads;
    spec.success_tol = sweep.success_tol;
    spec.noisy = solver.noisy;
    spec.clamp = solver.clamp.into();
    spec.solver = solver.config()?;
    spec.seed = solver.seed;
    Ok(spec)
}

fn table(args: &TableArgs) -> Result<ExitCode, EdgError> {
    let spec = spec_from(args.source.dataset()?, &args.rates, &args.sweep, &args.solver)?;
    let out = run_table(&spec)?;
    let dir = &args.sweep.output_dir;
    out.write_csv(create(dir, "table.csv")?)?;
    let config = out.config_json();
    write_trials_csv(create(dir, "table_trials.csv")?, &config, &out.trials)?;
    write_timings_csv(create(dir, "table_timing.csv")?, &config, &out.trials)?;
    println!("{:>8}  {:>11}  {:>11}  {:>11}  failures", "rate", "mean", "median", "stddev");
    for r in &out.rows {
        println!(
            "{:>8}  {:>11.3e}  {:>11.3e}  {:>11.3e}  {}",
            r.rate, r.mean, r.median, r.stddev, r.failures
        );
    }
    println!("wrote {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn phase_diagram(args: &PhaseArgs) -> Result<ExitCode, EdgError> {
    let mut spec = spec_from(args.generator.parse()?, &args.rates, &args.sweep, &args.solver)?;
    spec.ranks = args.ranks.clone();
    let out = run_phase_diagram(&spec)?;
    let dir = &args.sweep.output_dir;
    out.write_csv(create(dir, "phase_diagram.csv")?)?;
    out.write_gnuplot(create(dir, "phase_diagram.dat")?)?;
    let config = out.config_json();
    write_trials_csv(create(dir, "phase_trials.csv")?, &config, &out.trials)?;
    write_timings_csv(create(dir, "phase_timing.csv")?, &config, &out.trials)?;
    print!("{:>8}", "rate");
    for r in &spec.ranks {
        print!("  {:>7}", format!("r={r}"));
    }
    println!();
    for rate in &spec.rates {
        print!("{rate:>8}");
        for &rank in &spec.ranks {
            print!("  {:>7.2}", out.probability(*rate, rank).unwrap_or(f64::NAN));
        }
        println!();
    }
    println!("wrote {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn coherence(args: &CoherenceArgs) -> Result<ExitCode, EdgError> {
    let dataset = args.source.dataset()?;
    let points = dataset.points(args.seed)?;
    let gram = center_gram_from_points(&points);
    let rank = match (args.rank, &dataset) {
        (Some(r), _) => r,
        (None, Dataset::Sphere { .. } | Dataset::Gaussian { .. }) => points.dim(),
        (None, Dataset::File(_)) => detect_rank(&gram)?,
    };
    let report = if args.simplified {
        coherence_simplified_with_limit(&gram, rank, args.limit)?
    } else {
        coherence_exact_with_limit(&gram, rank, args.limit)?
    };
    let m = sample_complexity(report.n, report.r, report.nu, args.beta)?;
    let value = json!({
        "source": dataset.to_string(),
        "seed": args.seed,
        "mode": if args.simplified { "simplified" } else { "exact" },
        "coherence": report,
        "beta": args.beta,
        "sample_complexity": m,
        "pairs": report.n * (report.n - 1) / 2,
    });
    println!("{}", serde_json::to_string_pretty(&value).expect("json value serializes"));
    if let Some(dir) = &args.output_dir {
        write_json(dir, "coherence.json", &value)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(args: &VerifyArgs) -> Result<ExitCode, EdgError> {
    if args.max_n < 3 {
        return Err(EdgError::InvalidParameter("--max-n must be at least 3".into()));
    }
    let checks = verify::run_all(3..=args.max_n, args.samples, args.seed)?;
    let mut failed = 0;
    for c in &checks {
        if !c.passed {
            failed += 1;
        }
        println!(
            "{}  n={:<3} {:<54} deviation {:.2e} (tolerance {:.0e})",
            if c.passed { "ok  " } else { "FAIL" },
            c.n,
            c.name,
            c.deviation,
            c.tolerance
        );
    }
    println!("{} checks, {} failed", checks.len(), failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Table(a) => table(a),
        Command::PhaseDiagram(a) => phase_diagram(a),
        Command::Coherence(a) => coherence(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Batch experiments: error tables over sampling rates and success-probability
//! grids over (rate, rank).
//!
//! Every trial derives its own seed from the base seed, so results do not
//! depend on the number of worker threads or on scheduling order. Output rows
//! are ordered rate-major, rank-minor, trial-minor.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::pair_count;
use crate::error::{EdgError, Result};
use crate::geometry::{center_gram_from_points, distance_matrix_from_points, mds_embed_factor, procrustes_align, PointCloud};
use crate::io::read_points_file;
use crate::sampling::{corrupt, derive_noise_model, observe, sample_pairs, seeded_rng, streams, ClampPolicy};
use crate::solver::{factor_relative_error, observations_for_rate, solve_exact, solve_noisy, SolverConfig};

/// `n` points drawn uniformly from the unit sphere in `R³`.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, n: usize) -> PointCloud {
    let mut coords = DMatrix::zeros(n, 3);
    for i in 0..n {
        loop {
            let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for k in 0..3 {
                    coords[(i, k)] = v[k] / norm;
                }
                break;
            }
        }
    }
    PointCloud::new(coords).expect("sphere points are finite")
}

/// `n` points with i.i.d. standard normal coordinates in `R^d`.
pub fn gaussian_cloud<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> PointCloud {
    PointCloud::new(DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))).expect("finite")
}

/// Where the ground-truth points come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Dataset {
    /// `sphere:n`
    Sphere { n: usize },
    /// `gaussian:n:d`, or `gaussian:n` with `d = 3`
    Gaussian { n: usize, d: usize },
    /// `file:path` (or a bare path) to a point CSV
    File(PathBuf),
}

impl Dataset {
    /// Points for this dataset; generators draw from the `POINTS` stream of
    /// `seed`.
    pub fn points(&self, seed: u64) -> Result<PointCloud> {
        let mut rng = seeded_rng(seed, streams::POINTS);
        match self {
            Dataset::Sphere { n } => Ok(unit_sphere(&mut rng, *n)),
            Dataset::Gaussian { n, d } => Ok(gaussian_cloud(&mut rng, *n, *d)),
            Dataset::File(path) => read_points_file(path),
        }
    }

    /// Point count for generators; `None` for files.
    pub fn size(&self) -> Option<usize> {
        match self {
            Dataset::Sphere { n } | Dataset::Gaussian { n, .. } => Some(*n),
            Dataset::File(_) => None,
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dataset::Sphere { n } => write!(f, "sphere:{n}"),
            Dataset::Gaussian { n, d } => write!(f, "gaussian:{n}:{d}"),
            Dataset::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

impl FromStr for Dataset {
    type Err = EdgError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || EdgError::InvalidParameter(format!("unrecognized dataset {s:?}; use sphere:n, gaussian:n[:d] or file:path"));
        let count = |t: &str, min: usize| -> Result<usize> {
            match t.parse::<usize>() {
                Ok(v) if v >= min => Ok(v),
                _ => Err(bad()),
            }
        };
        let parts: Vec<&str> = s.splitn(2, ':').collect();
        match parts.as_slice() {
            ["sphere", rest] => Ok(Dataset::Sphere { n: count(rest, 3)? }),
            ["gaussian", rest] => match rest.split(':').collect::<Vec<_>>().as_slice() {
                [n] => Ok(Dataset::Gaussian { n: count(n, 3)?, d: 3 }),
                [n, d] => Ok(Dataset::Gaussian { n: count(n, 3)?, d: count(d, 1)? }),
                _ => Err(bad()),
            },
            ["file", path] if !path.is_empty() => Ok(Dataset::File(PathBuf::from(path))),
            [path] if !path.is_empty() && !["sphere", "gaussian", "file"].contains(path) => {
                Ok(Dataset::File(PathBuf::from(path)))
            }
            _ => Err(bad()),
        }
    }
}

impl From<Dataset> for String {
    fn from(d: Dataset) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for Dataset {
    type Error = EdgError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// SplitMix64 finalizer, used to derive independent per-trial seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` one at a time with [`mix`].
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ p))
}

/// How per-trial seeds are derived; embedded in every output.
pub const SEED_SCHEME: &str = "table: trial seed = derive_seed(seed, [trial]), points from seed; \
phase diagram: trial seed = derive_seed(seed, [rank, trial]), points from the trial seed; \
derive_seed folds splitmix64; streams points=1 pairs=2 noise=3 init=4";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: Dataset,
    pub rates: Vec<f64>,
    /// Point dimensions for the phase diagram; ignored by tables.
    pub ranks: Vec<usize>,
    pub trials: usize,
    pub noisy: bool,
    pub clamp: ClampPolicy,
    pub solver: SolverConfig,
    pub seed: u64,
    /// A trial succeeds when its relative Gram error is below this.
    pub success_tol: f64,
    /// Worker threads (0 = all cores). Does not change any result.
    #[serde(skip)]
    pub threads: usize,
}

impl ExperimentSpec {
    pub fn new(dataset: Dataset) -> Self {
        Self {
            dataset,
            rates: vec![0.05],
            ranks: vec![3],
            trials: 10,
            noisy: false,
            clamp: ClampPolicy::default(),
            solver: SolverConfig::default(),
            seed: 0,
            success_tol: 1e-5,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EdgError::InvalidParameter(msg));
        if self.rates.is_empty() {
            return bad("at least one rate is required".into());
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return bad(format!("rates must lie in (0, 1], got {r}"));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.success_tol > 0.0) {
            return bad(format!("success tolerance must be positive, got {}", self.success_tol));
        }
        self.solver.validate()
    }

    /// The resolved configuration as one JSON line.
    pub fn config_json(&self, extra: serde_json::Value) -> String {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        v["seed_scheme"] = SEED_SCHEME.into();
        if let (Some(map), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
            map.extend(more);
        }
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub rate: f64,
    /// Point dimension of the ground truth.
    pub rank: usize,
    pub trial: usize,
    pub seed: u64,
    /// Number of observed pairs.
    pub observations: usize,
    /// `NaN` when the trial failed.
    pub relative_error: f64,
    pub rmsd: f64,
    pub iterations: usize,
    pub converged: bool,
    pub success: bool,
    /// `σ` of the derived noise model (`μ = 3σ`), when noise was added.
    pub noise_sigma: Option<f64>,
    pub wall_time: f64,
    pub error: Option<String>,
}

struct Task {
    rate: f64,
    rank: usize,
    trial: usize,
    seed: u64,
}

fn run_trial(points: &PointCloud, task: &Task, spec: &ExperimentSpec) -> TrialResult {
    let mut result = TrialResult {
        rate: task.rate,
        rank: task.rank,
        trial: task.trial,
        seed: task.seed,
        observations: 0,
        relative_error: f64::NAN,
        rmsd: f64::NAN,
        iterations: 0,
        converged: false,
        success: false,
        noise_sigma: None,
        wall_time: 0.0,
        error: None,
    };
    if let Err(e) = trial_body(points, task, spec, &mut result) {
        result.error = Some(e.to_string());
    }
    result
}

fn trial_body(points: &PointCloud, task: &Task, spec: &ExperimentSpec, out: &mut TrialResult) -> Result<()> {
    let n = points.n();
    let m = observations_for_rate(n, task.rate).min(pair_count(n));
    out.observations = m;
    let d = distance_matrix_from_points(points);
    let truth = center_gram_from_points(points);
    let pairs = sample_pairs(n, m, false, task.seed)?;
    let mut obs = observe(&d, pairs, false)?;
    if spec.noisy {
        let mut model = derive_noise_model(&obs)?;
        model.clamp = spec.clamp;
        out.noise_sigma = Some(model.sigma);
        obs = corrupt(&obs, &model, task.seed)?;
    }
    let cfg = SolverConfig {
        seed: task.seed,
        ..spec.solver
    };
    let (factor, report) = if spec.noisy {
        solve_noisy(&obs, &cfg)?
    } else {
        solve_exact(&obs, &cfg)?
    };
    out.iterations = report.iterations;
    out.converged = report.converged;
    out.wall_time = report.wall_time;
    out.relative_error = factor_relative_error(&factor, &truth)?;
    out.success = out.relative_error < spec.success_tol;
    let embedded = mds_embed_factor(&factor.to_matrix(), points.dim().min(n))?;
    out.rmsd = procrustes_align(&embedded, points)?.rmsd;
    Ok(())
}

#[cfg(feature = "parallel")]
fn run_all<T: Sync, F: Fn(&T) -> TrialResult + Sync>(tasks: &[T], threads: usize, f: F) -> Result<Vec<TrialResult>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EdgError::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| tasks.par_iter().map(&f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_all<T, F: Fn(&T) -> TrialResult>(tasks: &[T], _threads: usize, f: F) -> Result<Vec<TrialResult>> {
    Ok(tasks.iter().map(f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub rate: f64,
    pub trials: usize,
    /// Trials that returned an error; excluded from the statistics.
    pub failures: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

#[derive(Debug, Clone)]
pub struct TableOutput {
    pub spec: ExperimentSpec,
    pub n: usize,
    pub trials: Vec<TrialResult>,
    pub rows: Vec<TableRow>,
}

/// Median of a nonempty slice, averaging the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn summarize(errors: &[f64]) -> (f64, f64, f64) {
    if errors.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let k = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / k;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / k;
    (mean, median(errors), var.sqrt())
}

/// Relative Gram error statistics per sampling rate on one fixed dataset.
pub fn run_table(spec: &ExperimentSpec) -> Result<TableOutput> {
    spec.validate()?;
    let points = spec.dataset.points(spec.seed)?;
    let n = points.n();
    if n < 3 {
        return Err(EdgError::TooFewPoints(n));
    }
    let rank = points.dim();
    let mut tasks = Vec::new();
    for &rate in &spec.rates {
        for trial in 0..spec.trials {
            let seed = derive_seed(spec.seed, &[trial as u64]);
            tasks.push(Task { rate, rank, trial, seed });
        }
    }
    let trials = run_all(&tasks, spec.threads, |t| run_trial(&points, t, spec))?;
    let rows = spec
        .rates
        .iter()
        .enumerate()
        .map(|(k, &rate)| {
            let block = &trials[k * spec.trials..(k + 1) * spec.trials];
            let errors: Vec<f64> = block.iter().filter(|t| t.error.is_none()).map(|t| t.relative_error).collect();
            let (mean, median, stddev) = summarize(&errors);
            TableRow {
                dataset: spec.dataset.to_string(),
                rate,
                trials: spec.trials,
                failures: spec.trials - errors.len(),
                mean,
                median,
                stddev,
            }
        })
        .collect();
    Ok(TableOutput {
        spec: spec.clone(),
        n,
        trials,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub rate: f64,
    pub rank: usize,
    pub trials: usize,
    pub successes: usize,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseOutput {
    pub spec: ExperimentSpec,
    pub n: usize,
    pub trials: Vec<TrialResult>,
    pub cells: Vec<PhaseCell>,
}

/// Success probability per (rate, rank) cell on fresh Gaussian clouds.
///
/// Each (rank, trial) draws its own cloud of `n` points in `R^rank`, shared
/// across rates.
pub fn run_phase_diagram(spec: &ExperimentSpec) -> Result<PhaseOutput> {
    spec.validate()?;
    let n = match spec.dataset {
        Dataset::Gaussian { n, .. } => n,
        _ => {
            return Err(EdgError::InvalidParameter(
                "the phase diagram draws gaussian clouds; use gaussian:n".into(),
            ))
        }
    };
    if spec.ranks.is_empty() {
        return Err(EdgError::InvalidParameter("at least one rank is required".into()));
    }
    if let Some(&r) = spec.ranks.iter().find(|&&r| r == 0 || r >= n) {
        return Err(EdgError::InvalidParameter(format!("rank {r} must lie in [1, {})", n)));
    }
    let mut tasks = Vec::new();
    for &rate in &spec.rates {
        for &rank in &spec.ranks {
            for trial in 0..spec.trials {
                let seed = derive_seed(spec.seed, &[rank as u64, trial as u64]);
                tasks.push(Task { rate, rank, trial, seed });
            }
        }
    }
    let trials = run_all(&tasks, spec.threads, |t| {
        let points = gaussian_cloud(&mut seeded_rng(t.seed, streams::POINTS), n, t.rank);
        run_trial(&points, t, spec)
    })?;
    let cells = trials
        .chunks(spec.trials)
        .map(|block| {
            let successes = block.iter().filter(|t| t.success).count();
            PhaseCell {
                rate: block[0].rate,
                rank: block[0].rank,
                trials: block.len(),
                successes,
                probability: successes as f64 / block.len() as f64,
            }
        })
        .collect();
    Ok(PhaseOutput {
        spec: spec.clone(),
        n,
        trials,
        cells,
    })
}

/// Shortest decimal that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer<W: Write>(output: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(output)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn record<W: Write, I, T>(w: &mut csv::Writer<W>, fields: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(fields).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => EdgError::Io(e),
        other => EdgError::Io(std::io::Error::other(format!("{other:?}"))),
    })
}

fn config_comment<W: Write>(output: &mut W, json: &str) -> Result<()> {
    writeln!(output, "# config: {json}")?;
    Ok(())
}

/// Per-trial rows. Wall times are left out so that the file is reproducible
/// byte for byte; see [`write_timings_csv`].
pub fn write_trials_csv<W: Write>(mut output: W, config: &str, trials: &[TrialResult]) -> Result<()> {
    config_comment(&mut output, config)?;
    let mut w = csv_writer(output);
    record(
        &mut w,
        [
            "rate", "rank", "trial", "seed", "observations", "relative_error", "rmsd", "iterations",
            "converged", "success", "noise_sigma", "error",
        ],
    )?;
    for t in trials {
        record(
            &mut w,
            [
                num(t.rate),
                t.rank.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
                t.observations.to_string(),
                num(t.relative_error),
                num(t.rmsd),
                t.iterations.to_string(),
                t.converged.to_string(),
                t.success.to_string(),
                t.noise_sigma.map(num).unwrap_or_default(),
                t.error.clone().unwrap_or_default(),
            ],
        )?;
    }
    finish(w)
}

pub fn write_timings_csv<W: Write>(mut output: W, config: &str, trials: &[TrialResult]) -> Result<()> {
    config_comment(&mut output, config)?;
    let mut w = csv_writer(output);
    record(&mut w, ["rate", "rank", "trial", "wall_time"])?;
    for t in trials {
        record(&mut w, [num(t.rate), t.rank.to_string(), t.trial.to_string(), num(t.wall_time)])?;
    }
    finish(w)
}

impl TableOutput {
    pub fn config_json(&self) -> String {
        self.spec.config_json(serde_json::json!({ "command": "table", "n": self.n }))
    }

    pub fn write_csv<W: Write>(&self, mut output: W) -> Result<()> {
        config_comment(&mut output, &self.config_json())?;
        let mut w = csv_writer(output);
        record(&mut w, ["dataset", "rate", "trials", "failures", "mean", "median", "stddev"])?;
        for r in &self.rows {
            record(
                &mut w,
                [
                    r.dataset.clone(),
                    num(r.rate),
                    r.trials.to_string(),
                    r.failures.to_string(),
                    num(r.mean),
                    num(r.median),
                    num(r.stddev),
                ],
            )?;
        }
        finish(w)
    }
}

impl PhaseOutput {
    pub fn config_json(&self) -> String {
        self.spec.config_json(serde_json::json!({ "command": "phase-diagram", "n": self.n }))
    }

    pub fn write_csv<W: Write>(&self, mut output: W) -> Result<()> {
        config_comment(&mut output, &self.config_json())?;
        let mut w = csv_writer(output);
        record(&mut w, ["rate", "rank", "trials", "successes", "probability"])?;
        for c in &self.cells {
            record(
                &mut w,
                [
                    num(c.rate),
                    c.rank.to_string(),
                    c.trials.to_string(),
                    c.successes.to_string(),
                    num(c.probability),
                ],
            )?;
        }
        finish(w)
    }

    /// `rate rank probability` triples, one block per rate separated by blank
    /// lines, as expected by gnuplot's `splot ... with pm3d`.
    pub fn write_gnuplot<W: Write>(&self, mut output: W) -> Result<()> {
        writeln!(output, "# config: {}", self.config_json())?;
        writeln!(output, "# rate rank probability")?;
        let mut last = None;
        for c in &self.cells {
            if last.is_some_and(|r| r != c.rate) {
                writeln!(output)?;
            }
            writeln!(output, "{} {} {}", num(c.rate), c.rank, num(c.probability))?;
            last = Some(c.rate);
        }
        Ok(())
    }

    /// Success probability at `(rate, rank)`.
    pub fn probability(&self, rate: f64, rank: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.rate == rate && c.rank == rank)
            .map(|c| c.probability)
    }
}

/// Number of strict decreases along `values`.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_parsing() {
        assert_eq!("sphere:1002".parse::<Dataset>().unwrap(), Dataset::Sphere { n: 1002 });
        assert_eq!("gaussian:20:3".parse::<Dataset>().unwrap(), Dataset::Gaussian { n: 20, d: 3 });
        assert_eq!("gaussian:300".parse::<Dataset>().unwrap(), Dataset::Gaussian { n: 300, d: 3 });
        assert_eq!("file:a/b.csv".parse::<Dataset>().unwrap(), Dataset::File("a/b.csv".into()));
        assert_eq!("pts.csv".parse::<Dataset>().unwrap(), Dataset::File("pts.csv".into()));
        for bad in ["sphere", "sphere:x", "sphere:2", "gaussian:10:0", "gaussian:1:2:3", "file:", ""] {
            assert!(bad.parse::<Dataset>().is_err(), "{bad}");
        }
        for d in [Dataset::Sphere { n: 5 }, Dataset::Gaussian { n: 7, d: 2 }] {
            assert_eq!(d.to_string().parse::<Dataset>().unwrap(), d);
        }
    }

    #[test]
    fn sphere_points_are_unit() {
        let pts = Dataset::Sphere { n: 200 }.points(3).unwrap();
        for i in 0..pts.n() {
            let r2: f64 = pts.point(i).iter().map(|x| x * x).sum();
            assert!((r2 - 1.0).abs() < 1e-12);
        }
        assert_eq!(pts.coords(), Dataset::Sphere { n: 200 }.points(3).unwrap().coords());
    }

    #[test]
    fn sphere_squared_distances_are_uniform_on_zero_four() {
        // for uniform points on the unit sphere, |x − y|² is uniform on [0, 4]
        let pts = Dataset::Sphere { n: 400 }.points(8).unwrap();
        let d = distance_matrix_from_points(&pts);
        let mut bins = [0usize; 4];
        let mut total = 0;
        for i in 0..400 {
            for j in i + 1..400 {
                bins[(d.get(i, j).min(3.999_999) as usize).min(3)] += 1;
                total += 1;
            }
        }
        for b in bins {
            assert!((b as f64 / total as f64 - 0.25).abs() < 0.02, "{bins:?}");
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for r in 0..20 {
            for t in 0..50 {
                assert!(seen.insert(derive_seed(7, &[r, t])));
            }
        }
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::new(Dataset::Gaussian { n: 10, d: 2 });
        assert!(spec.validate().is_ok());
        spec.rates = vec![1.5];
        assert!(spec.validate().is_err());
        spec.rates = vec![0.0];
        assert!(spec.validate().is_err());
        spec.rates = vec![0.5];
        spec.trials = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn small_table() {
        let mut spec = ExperimentSpec::new(Dataset::Gaussian { n: 20, d: 2 });
        spec.rates = vec![0.5, 1.0];
        spec.trials = 1;
        spec.threads = 1;
        let out = run_table(&spec).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows.iter().all(|r| r.stddev == 0.0 && r.failures == 0));
        let full = &out.trials[1];
        assert!(full.relative_error < 1e-5 && full.rmsd < 1e-4, "{full:?}");
        assert_eq!(full.observations, 190);

        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config: {"));
        assert_eq!(lines.next().unwrap(), "dataset,rate,trials,failures,mean,median,stddev");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn phase_rank_validation() {
        let mut spec = ExperimentSpec::new(Dataset::Gaussian { n: 10, d: 2 });
        spec.ranks = vec![10];
        assert!(run_phase_diagram(&spec).is_err());
        spec.dataset = Dataset::Sphere { n: 10 };
        spec.ranks = vec![2];
        assert!(run_phase_diagram(&spec).is_err());
    }

    #[test]
    fn phase_output_layout() {
        let mut spec = ExperimentSpec::new(Dataset::Gaussian { n: 15, d: 2 });
        spec.rates = vec![0.3, 1.0];
        spec.ranks = vec![1, 2];
        spec.trials = 2;
        let out = run_phase_diagram(&spec).unwrap();
        let order: Vec<_> = out.trials.iter().map(|t| (t.rate, t.rank, t.trial)).collect();
        let mut sorted = order.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        assert_eq!(order, sorted);
        assert_eq!(out.probability(1.0, 1), Some(1.0));
        assert_eq!(out.probability(1.0, 2), Some(1.0));

        let mut buf = Vec::new();
        out.write_gnuplot(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.is_empty()).count(), 1);
    }

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[0.0, 0.5, 0.4, 1.0]), 1);
        assert_eq!(inversions(&[0.0, 0.0, 1.0]), 0);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}

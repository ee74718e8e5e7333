//! Trace minimization over a Gram factor `P` (n×q).
//!
//! Exact observations use an augmented Lagrangian
//! `Tr(PPᵀ) + (r/2)‖A(PPᵀ) − b + Λ‖²` with the multiplier update
//! `Λ ← Λ + A(PPᵀ) − b`; noisy observations minimize the penalized objective
//! `Tr(PPᵀ) + (λ/2)‖A(PPᵀ) − b‖²`. Both inner problems are solved with
//! Barzilai-Borwein gradient steps. `P` is never centered during the solve;
//! [`recover_gram`] applies `J = I − 11ᵀ/n` at the end.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{a_of_factor_rows, a_star_times_rows, pair_count, IndexPair, ObservationSet};
use crate::error::{EdgError, Result};
use crate::geometry::{mds_embed_factor, relative_gram_error, GramMatrix, PointCloud};
use crate::linalg::center_columns;
use crate::sampling::{seeded_rng, streams};

/// An n×q factor, stored row-major so each point's row is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct GramFactor {
    n: usize,
    q: usize,
    data: Vec<f64>,
}

impl GramFactor {
    pub fn from_row_major(n: usize, q: usize, data: Vec<f64>) -> Result<Self> {
        if q == 0 || n == 0 {
            return Err(EdgError::Shape(format!("factor must be at least 1x1, got {n}x{q}")));
        }
        if data.len() != n * q {
            return Err(EdgError::Shape(format!(
                "factor data has {} entries, expected {}",
                data.len(),
                n * q
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(EdgError::NonFinite { row: k / q, col: k % q });
        }
        Ok(Self { n, q, data })
    }

    pub fn from_matrix(p: &DMatrix<f64>) -> Result<Self> {
        Self::from_row_major(p.nrows(), p.ncols(), p.transpose().as_slice().to_vec())
    }

    /// Entries i.i.d. uniform on `[0, scale)`.
    pub fn random_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize, q: usize, scale: f64) -> Self {
        let data = (0..n * q).map(|_| scale * rng.random::<f64>()).collect();
        Self { n, q, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.q, &self.data)
    }
}

/// Penalty weight for the noisy objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lambda {
    /// `λ = 100 γ` with `γ = m / L`.
    Auto,
    Fixed(f64),
}

impl Lambda {
    pub fn resolve(&self, obs: &ObservationSet) -> f64 {
        match *self {
            Lambda::Auto => 100.0 * obs.sampling_rate(),
            Lambda::Fixed(v) => v,
        }
    }
}

/// When the outer loop stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingPolicy {
    /// Relative change of the total energy below `tol`, and for exact data
    /// also `√(2n)·‖A(PPᵀ) − b‖ < tol·‖b‖`. When every pair is observed the
    /// left side bounds the relative Gram error.
    #[default]
    Reconciled,
    /// Relative change of the total energy below `tol` only.
    RelativeEnergy,
    /// Absolute thresholds `E_feas < tol` and `E_total < tol` (for noisy data
    /// only the total).
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Factor width.
    pub q: usize,
    /// Augmented Lagrangian penalty `r`.
    pub penalty: f64,
    pub lambda: Lambda,
    pub tol: f64,
    pub max_outer: usize,
    /// BB steps per outer iteration.
    pub bb_inner: usize,
    pub seed: u64,
    /// `P⁰` entries are uniform on `[0, init_scale)`.
    pub init_scale: f64,
    pub stopping: StoppingPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            q: 10,
            penalty: 1.0,
            lambda: Lambda::Auto,
            tol: 1e-5,
            max_outer: 100,
            bb_inner: 20,
            seed: 0,
            init_scale: 1.0,
            stopping: StoppingPolicy::Reconciled,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EdgError::InvalidParameter(msg));
        if self.q == 0 {
            return bad("q must be positive".into());
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return bad(format!("penalty must be positive, got {}", self.penalty));
        }
        if let Lambda::Fixed(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        if self.max_outer == 0 || self.bb_inner == 0 {
            return bad("iteration counts must be positive".into());
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be positive, got {}", self.init_scale));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub total: f64,
    /// `(r/2)‖A(PPᵀ) − b‖²` (with `λ` in place of `r` for noisy data).
    pub feasibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub energies: Vec<EnergyRecord>,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

/// Objective and gradient over a flat parameter vector.
pub trait Objective {
    /// Returns the objective at `x` and writes the gradient into `grad`.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct BbOptions {
    pub max_iters: usize,
    /// Stop once `‖g‖ < grad_tol · max(1, ‖x‖)`.
    pub grad_tol: f64,
}

#[derive(Debug, Clone)]
pub struct BbOutcome {
    pub factor: GramFactor,
    pub iterations: usize,
    pub value: f64,
}

const BB_MIN_STEP: f64 = 1e-10;
const BB_MAX_STEP: f64 = 1e6;
const BB_FALLBACK_STEP: f64 = 1e-4;
/// Nonmonotone acceptance: a step must improve on the worst of the last
/// `BB_MEMORY` values by `BB_SUFFICIENT·α·‖g‖²`, otherwise it is halved.
const BB_MEMORY: usize = 10;
const BB_SUFFICIENT: f64 = 1e-4;
const BB_MAX_BACKTRACKS: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Barzilai-Borwein descent with the `⟨s,s⟩/⟨s,y⟩` step.
///
/// The first step is `1/‖g₀‖`; a nonpositive curvature estimate falls back
/// to `1e-4`; steps are clamped to `[1e-10, 1e6]`. A step that fails the
/// nonmonotone acceptance test is halved, which keeps the first few outer
/// iterations from overshooting on the quartic objective.
pub fn bb_descent<O: Objective + ?Sized>(
    objective: &mut O,
    p0: GramFactor,
    opts: BbOptions,
) -> Result<BbOutcome> {
    let GramFactor { n, q, data: mut x } = p0;
    let len = x.len();
    let mut g = vec![0.0; len];
    let mut value = objective.value_and_gradient(&x, &mut g);
    if !value.is_finite() {
        return Err(EdgError::Divergence {
            iteration: 0,
            reason: "objective is not finite at the starting point".into(),
        });
    }
    let converged = |x: &[f64], g: &[f64]| {
        dot(g, g).sqrt() < opts.grad_tol * dot(x, x).sqrt().max(1.0)
    };

    let mut iterations = 0;
    if !converged(&x, &g) {
        let mut step = (1.0 / dot(&g, &g).sqrt()).clamp(BB_MIN_STEP, BB_MAX_STEP);
        let mut x_new = vec![0.0; len];
        let mut g_new = vec![0.0; len];
        let mut recent = std::collections::VecDeque::with_capacity(BB_MEMORY);
        recent.push_back(value);
        while iterations < opts.max_iters {
            let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let g2 = dot(&g, &g);
            let mut trial = step;
            let mut new_value;
            let mut backtracks = 0;
            loop {
                for k in 0..len {
                    x_new[k] = x[k] - trial * g[k];
                }
                new_value = objective.value_and_gradient(&x_new, &mut g_new);
                let accepted = new_value.is_finite() && new_value <= reference - BB_SUFFICIENT * trial * g2;
                if accepted || backtracks == BB_MAX_BACKTRACKS || trial <= BB_MIN_STEP {
                    break;
                }
                trial = (0.5 * trial).max(BB_MIN_STEP);
                backtracks += 1;
            }
            iterations += 1;
            if !new_value.is_finite() {
                return Err(EdgError::Divergence {
                    iteration: iterations,
                    reason: format!("non-finite objective after BB step of length {trial:e}"),
                });
            }
            let mut ss = 0.0;
            let mut sy = 0.0;
            for k in 0..len {
                let s = x_new[k] - x[k];
                ss += s * s;
                sy += s * (g_new[k] - g[k]);
            }
            step = if sy > 0.0 { ss / sy } else { BB_FALLBACK_STEP };
            step = step.clamp(BB_MIN_STEP, BB_MAX_STEP);
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut g, &mut g_new);
            value = new_value;
            if recent.len() == BB_MEMORY {
                recent.pop_front();
            }
            recent.push_back(value);
            if converged(&x, &g) {
                break;
            }
        }
    }
    Ok(BbOutcome {
        factor: GramFactor { n, q, data: x },
        iterations,
        value,
    })
}

/// `‖P‖² + (w/2)‖A(PPᵀ) − b + shift‖²` over row-major `P`.
pub struct FactorObjective<'a> {
    pairs: &'a [IndexPair],
    target: Vec<f64>,
    weight: f64,
    q: usize,
    residual: Vec<f64>,
}

impl<'a> FactorObjective<'a> {
    /// With `shift = Λ` this is the augmented Lagrangian; with no shift it is
    /// the penalized least-squares objective.
    pub fn new(obs: &'a ObservationSet, shift: Option<&[f64]>, weight: f64, q: usize) -> Self {
        let target = match shift {
            Some(s) => obs.values().iter().zip(s).map(|(b, l)| b - l).collect(),
            None => obs.values().to_vec(),
        };
        Self {
            pairs: obs.pairs(),
            target,
            weight,
            q,
            residual: vec![0.0; obs.len()],
        }
    }
}

impl Objective for FactorObjective<'_> {
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        a_of_factor_rows(self.pairs, x, self.q, &mut self.residual);
        for (r, t) in self.residual.iter_mut().zip(&self.target) {
            *r -= t;
        }
        let misfit = dot(&self.residual, &self.residual);
        for r in self.residual.iter_mut() {
            *r *= 2.0 * self.weight;
        }
        a_star_times_rows(self.pairs, &self.residual, x, self.q, grad);
        for (gk, xk) in grad.iter_mut().zip(x) {
            *gk += 2.0 * xk;
        }
        dot(x, x) + 0.5 * self.weight * misfit
    }
}

struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

fn check_observations(obs: &ObservationSet) -> Result<()> {
    if obs.is_empty() {
        return Err(EdgError::InvalidParameter("no observations".into()));
    }
    if obs.n() < 2 {
        return Err(EdgError::TooFewPoints(obs.n()));
    }
    Ok(())
}

fn initial_factor(obs: &ObservationSet, cfg: &SolverConfig) -> GramFactor {
    let mut rng = seeded_rng(cfg.seed, streams::INIT);
    GramFactor::random_uniform(&mut rng, obs.n(), cfg.q, cfg.init_scale)
}

fn relative_change(current: f64, previous: f64) -> f64 {
    if current == 0.0 {
        if previous == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((current - previous) / current).abs()
    }
}

fn divergence_guard(iteration: usize, total: f64, first_total: f64) -> Result<()> {
    if !total.is_finite() {
        return Err(EdgError::Divergence {
            iteration,
            reason: "total energy is not finite".into(),
        });
    }
    if first_total > 0.0 && total > 1e6 * first_total {
        return Err(EdgError::Divergence {
            iteration,
            reason: format!("total energy {total:e} exceeds 1e6 times its first value {first_total:e}"),
        });
    }
    Ok(())
}

/// Augmented Lagrangian solve for exact observations.
pub fn solve_exact(obs: &ObservationSet, cfg: &SolverConfig) -> Result<(GramFactor, SolveReport)> {
    cfg.validate()?;
    check_observations(obs)?;
    let clock = Stopwatch::start();
    let m = obs.len();
    let r = cfg.penalty;
    let b = obs.values();
    let b_norm = dot(b, b).sqrt();
    let bb = BbOptions {
        max_iters: cfg.bb_inner,
        grad_tol: cfg.tol,
    };

    let mut p = initial_factor(obs, cfg);
    let mut multiplier = vec![0.0; m];
    let mut measured = vec![0.0; m];
    let mut energies = Vec::new();
    let mut previous_total = 0.0;
    let mut converged = false;

    for k in 1..=cfg.max_outer {
        let mut objective = FactorObjective::new(obs, Some(&multiplier), r, cfg.q);
        p = bb_descent(&mut objective, p, bb)
            .map_err(|e| relabel_divergence(e, k))?
            .factor;

        a_of_factor_rows(obs.pairs(), p.as_slice(), cfg.q, &mut measured);
        let mut misfit = 0.0;
        let mut shifted = 0.0;
        for ((lam, &a), &bk) in multiplier.iter_mut().zip(&measured).zip(b) {
            let res = a - bk;
            *lam += res;
            misfit += res * res;
            shifted += (res + *lam).powi(2);
        }
        let feasibility = 0.5 * r * misfit;
        let total = dot(p.as_slice(), p.as_slice()) + 0.5 * r * shifted;
        energies.push(EnergyRecord { total, feasibility });
        divergence_guard(k, total, energies[0].total)?;

        let rel = relative_change(total, previous_total);
        previous_total = total;
        converged = match cfg.stopping {
            StoppingPolicy::Reconciled => rel < cfg.tol && (2.0 * obs.n() as f64 * misfit).sqrt() < cfg.tol * b_norm,
            StoppingPolicy::RelativeEnergy => rel < cfg.tol,
            StoppingPolicy::Absolute => feasibility < cfg.tol && total < cfg.tol,
        };
        if converged {
            break;
        }
    }

    Ok((
        p,
        SolveReport {
            iterations: energies.len(),
            converged,
            energies,
            wall_time: clock.seconds(),
            relative_error: None,
        },
    ))
}

/// Penalized least-squares solve for noisy observations.
pub fn solve_noisy(obs: &ObservationSet, cfg: &SolverConfig) -> Result<(GramFactor, SolveReport)> {
    cfg.validate()?;
    check_observations(obs)?;
    let clock = Stopwatch::start();
    let lambda = cfg.lambda.resolve(obs);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(EdgError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let bb = BbOptions {
        max_iters: cfg.bb_inner,
        grad_tol: cfg.tol,
    };

    let mut p = initial_factor(obs, cfg);
    let mut measured = vec![0.0; obs.len()];
    let mut energies = Vec::new();
    let mut previous_total = 0.0;
    let mut converged = false;

    for k in 1..=cfg.max_outer {
        let mut objective = FactorObjective::new(obs, None, lambda, cfg.q);
        p = bb_descent(&mut objective, p, bb)
            .map_err(|e| relabel_divergence(e, k))?
            .factor;

        a_of_factor_rows(obs.pairs(), p.as_slice(), cfg.q, &mut measured);
        let misfit: f64 = measured
            .iter()
            .zip(obs.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let feasibility = 0.5 * lambda * misfit;
        let total = dot(p.as_slice(), p.as_slice()) + feasibility;
        energies.push(EnergyRecord { total, feasibility });
        divergence_guard(k, total, energies[0].total)?;

        let rel = relative_change(total, previous_total);
        previous_total = total;
        converged = match cfg.stopping {
            StoppingPolicy::Reconciled | StoppingPolicy::RelativeEnergy => rel < cfg.tol,
            StoppingPolicy::Absolute => total < cfg.tol,
        };
        if converged {
            break;
        }
    }

    Ok((
        p,
        SolveReport {
            iterations: energies.len(),
            converged,
            energies,
            wall_time: clock.seconds(),
            relative_error: None,
        },
    ))
}

fn relabel_divergence(err: EdgError, outer: usize) -> EdgError {
    match err {
        EdgError::Divergence { reason, iteration } => EdgError::Divergence {
            iteration: outer,
            reason: format!("inner BB step {iteration}: {reason}"),
        },
        other => other,
    }
}

/// `J (PPᵀ) J`.
pub fn recover_gram(p: &GramFactor) -> GramMatrix {
    let centered = center_columns(&p.to_matrix());
    GramMatrix::symmetrized(&centered * centered.transpose())
}

/// Relative Gram error of the factor against `truth` without forming `JPPᵀJ`.
///
/// Uses `‖X − M‖² = ‖BᵀB‖² − 2 tr(Bᵀ M B) + ‖M‖²` with `B = JP`.
pub fn factor_relative_error(p: &GramFactor, truth: &GramMatrix) -> Result<f64> {
    if p.n() != truth.n() {
        return Err(EdgError::Shape(format!(
            "factor has {} rows, reference is {}x{}",
            p.n(),
            truth.n(),
            truth.n()
        )));
    }
    let m = truth.values();
    let m_norm2 = m.norm_squared();
    if m_norm2 == 0.0 {
        return Err(EdgError::ZeroReference);
    }
    let b = center_columns(&p.to_matrix());
    let btb = b.transpose() * &b;
    let mb = m * &b;
    let cross: f64 = b.iter().zip(mb.iter()).map(|(x, y)| x * y).sum();
    let err2 = (btb.norm_squared() - 2.0 * cross + m_norm2).max(0.0);
    Ok((err2 / m_norm2).sqrt())
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub points: PointCloud,
    pub gram: GramMatrix,
    pub factor: GramFactor,
    pub report: SolveReport,
}

/// Solve, recover the centered Gram matrix, and embed it in `d` dimensions.
///
/// With `truth` given, the report carries the relative Gram error.
pub fn reconstruct(
    obs: &ObservationSet,
    cfg: &SolverConfig,
    d: usize,
    noisy: bool,
    truth: Option<&GramMatrix>,
) -> Result<Reconstruction> {
    if d == 0 || d > obs.n() {
        return Err(EdgError::DimensionTooLarge { d, n: obs.n() });
    }
    let (factor, mut report) = if noisy {
        solve_noisy(obs, cfg)?
    } else {
        solve_exact(obs, cfg)?
    };
    let gram = recover_gram(&factor);
    if let Some(m) = truth {
        report.relative_error = Some(relative_gram_error(&gram, m)?);
    }
    let points = mds_embed_factor(&factor.to_matrix(), d)?;
    Ok(Reconstruction {
        points,
        gram,
        factor,
        report,
    })
}

/// Sampling rate `m / L` to observation count, at least one.
pub fn observations_for_rate(n: usize, rate: f64) -> usize {
    ((rate * pair_count(n) as f64).round() as usize).max(1)
}

//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: reconstruct a random planar point set from a fraction
//! of its squared distances, estimate a small success-probability grid, and
//! measure the coherence of a random Gram matrix.

use edg_core::coherence::{coherence_exact, sample_complexity};
use edg_core::experiments::{gaussian_cloud, run_phase_diagram, Dataset, ExperimentSpec};
use edg_core::geometry::{center_gram_from_points, distance_matrix_from_points, procrustes_align, PointCloud};
use edg_core::sampling::{corrupt, derive_noise_model, observe, sample_pairs, seeded_rng, streams};
use edg_core::solver::{observations_for_rate, reconstruct, SolverConfig};
use wasm_bindgen::prelude::*;

/// Largest point count the page accepts; keeps each call interactive.
pub const MAX_POINTS: usize = 400;

fn js_err(e: edg_core::EdgError) -> JsError {
    JsError::new(&e.to_string())
}

fn flatten(points: &PointCloud) -> Vec<f64> {
    let c = points.coords();
    (0..c.nrows()).flat_map(|i| [c[(i, 0)], c[(i, 1)]]).collect()
}

/// Outcome of one planar reconstruction.
#[wasm_bindgen]
pub struct Reconstruction {
    truth: Vec<f64>,
    recovered: Vec<f64>,
    edges: Vec<u32>,
    relative_error: f64,
    rmsd: f64,
    iterations: usize,
    converged: bool,
}

#[wasm_bindgen]
impl Reconstruction {
    /// Centered true points as x0, y0, x1, y1, ...
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    /// Recovered points after the best rigid alignment onto the truth.
    #[wasm_bindgen(getter)]
    pub fn recovered(&self) -> Vec<f64> {
        self.recovered.clone()
    }

    /// Observed pairs as i0, j0, i1, j1, ... (0-based).
    #[wasm_bindgen(getter)]
    pub fn edges(&self) -> Vec<u32> {
        self.edges.clone()
    }

    #[wasm_bindgen(getter, js_name = relativeError)]
    pub fn relative_error(&self) -> f64 {
        self.relative_error
    }

    #[wasm_bindgen(getter)]
    pub fn rmsd(&self) -> f64 {
        self.rmsd
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }
}

/// Draws `n` Gaussian points in the plane, observes a `rate` fraction of
/// their squared distances (optionally noisy) and reconstructs them.
#[wasm_bindgen]
pub fn reconstruct_plane(n: usize, rate: f64, noisy: bool, seed: u64) -> Result<Reconstruction, JsError> {
    if !(3..=MAX_POINTS).contains(&n) {
        return Err(JsError::new(&format!("point count must lie in [3, {MAX_POINTS}]")));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(JsError::new("rate must lie in (0, 1]"));
    }
    let points = gaussian_cloud(&mut seeded_rng(seed, streams::POINTS), n, 2);
    let d = distance_matrix_from_points(&points);
    let pairs = sample_pairs(n, observations_for_rate(n, rate), false, seed).map_err(js_err)?;
    let mut obs = observe(&d, pairs, false).map_err(js_err)?;
    if noisy {
        let model = derive_noise_model(&obs).map_err(js_err)?;
        obs = corrupt(&obs, &model, seed).map_err(js_err)?;
    }
    let cfg = SolverConfig {
        seed,
        ..SolverConfig::default()
    };
    let truth = center_gram_from_points(&points);
    let rec = reconstruct(&obs, &cfg, 2, noisy, Some(&truth)).map_err(js_err)?;
    let alignment = procrustes_align(&rec.points, &points).map_err(js_err)?;
    let edges = obs.pairs().iter().flat_map(|p| [p.i() as u32, p.j() as u32]).collect();
    Ok(Reconstruction {
        truth: flatten(&points.centered()),
        recovered: flatten(&alignment.aligned),
        edges,
        relative_error: rec.report.relative_error.unwrap_or(f64::NAN),
        rmsd: alignment.rmsd,
        iterations: rec.report.iterations,
        converged: rec.report.converged,
    })
}

/// Success probabilities over `rates` × `ranks` for Gaussian clouds of `n`
/// points, row-major with one row per rate.
#[wasm_bindgen]
pub fn phase_grid(n: usize, rates: Vec<f64>, ranks: Vec<u32>, trials: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    if n > MAX_POINTS {
        return Err(JsError::new(&format!("point count must not exceed {MAX_POINTS}")));
    }
    let mut spec = ExperimentSpec::new(Dataset::Gaussian { n, d: 2 });
    spec.rates = rates;
    spec.ranks = ranks.iter().map(|&r| r as usize).collect();
    spec.trials = trials;
    spec.seed = seed;
    let out = run_phase_diagram(&spec).map_err(js_err)?;
    Ok(spec
        .rates
        .iter()
        .flat_map(|&rate| spec.ranks.iter().map(move |&rank| (rate, rank)))
        .map(|(rate, rank)| out.probability(rate, rank).unwrap_or(f64::NAN))
        .collect())
}

/// Coherence of a random rank-`r` Gram matrix on `n` points:
/// `[nu_w, nu_v, nu_joint, nu, measurement bound]`.
#[wasm_bindgen]
pub fn coherence(n: usize, r: usize, beta: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    let points = gaussian_cloud(&mut seeded_rng(seed, streams::POINTS), n, r);
    let report = coherence_exact(&center_gram_from_points(&points), r).map_err(js_err)?;
    let bound = sample_complexity(n, r, report.nu, beta).map_err(js_err)?;
    Ok(vec![report.nu_w, report.nu_v, report.nu_joint, report.nu, bound as f64])
}

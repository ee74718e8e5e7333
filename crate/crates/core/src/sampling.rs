//! Uniform pair sampling and the additive Gaussian noise model.
//!
//! Every random draw goes through ChaCha8 seeded from a `u64`, with a
//! separate stream per purpose so that, for example, changing the noise does
//! not change which pairs are sampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::{pair_count, pair_from_index, IndexPair, ObservationSet};
use crate::error::{EdgError, Result};
use crate::geometry::SquaredDistanceMatrix;

/// Stream identifiers for [`seeded_rng`].
pub mod streams {
    pub const POINTS: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const INIT: u64 = 4;
}

/// ChaCha8 seeded from `seed`, positioned on `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `m` pairs uniformly from the `L = n(n−1)/2` pairs of `n` points.
pub fn sample_pairs(n: usize, m: usize, with_replacement: bool, seed: u64) -> Result<Vec<IndexPair>> {
    sample_pairs_with(&mut seeded_rng(seed, streams::PAIRS), n, m, with_replacement)
}

pub fn sample_pairs_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
    with_replacement: bool,
) -> Result<Vec<IndexPair>> {
    let total = pair_count(n);
    if m == 0 {
        return Err(EdgError::InvalidParameter("need at least one sample".into()));
    }
    if total == 0 {
        return Err(EdgError::TooFewPoints(n));
    }
    if with_replacement {
        (0..m)
            .map(|_| pair_from_index(rng.random_range(0..total), n))
            .collect()
    } else {
        if m > total {
            return Err(EdgError::TooManySamples { m, total });
        }
        rand::seq::index::sample(rng, total, m)
            .into_iter()
            .map(|k| pair_from_index(k, n))
            .collect()
    }
}

/// Reads the sampled entries of `d`.
pub fn observe(
    d: &SquaredDistanceMatrix,
    pairs: Vec<IndexPair>,
    with_replacement: bool,
) -> Result<ObservationSet> {
    let n = d.n();
    for p in &pairs {
        p.check(n)?;
    }
    let values = pairs.iter().map(|p| d.get(p.i(), p.j())).collect();
    ObservationSet::new(n, pairs, values, with_replacement)
}

/// What to do with a value that turns negative after noise is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClampPolicy {
    /// Replace with zero.
    #[default]
    Clamp,
    /// Draw fresh noise until the value is nonnegative (falls back to zero
    /// after 1000 attempts).
    Redraw,
    /// Leave negative values in place.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub mu: f64,
    pub sigma: f64,
    pub clamp: ClampPolicy,
}

impl NoiseModel {
    pub fn new(mu: f64, sigma: f64, clamp: ClampPolicy) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(EdgError::InvalidParameter(format!(
                "noise needs finite mu and sigma >= 0, got mu = {mu}, sigma = {sigma}"
            )));
        }
        Ok(Self { mu, sigma, clamp })
    }
}

/// `σ` = smallest positive observed value, `μ = 3σ`.
pub fn derive_noise_model(obs: &ObservationSet) -> Result<NoiseModel> {
    let sigma = obs
        .values()
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !sigma.is_finite() {
        return Err(EdgError::NoPositiveObservation);
    }
    NoiseModel::new(3.0 * sigma, sigma, ClampPolicy::default())
}

/// Adds an independent `N(μ, σ)` draw to every observed value.
pub fn corrupt(obs: &ObservationSet, model: &NoiseModel, seed: u64) -> Result<ObservationSet> {
    let mut rng = seeded_rng(seed, streams::NOISE);
    let normal = Normal::new(model.mu, model.sigma)
        .map_err(|e| EdgError::InvalidParameter(format!("noise model: {e}")))?;
    let values = obs
        .values()
        .iter()
        .map(|&v| {
            let noisy = v + normal.sample(&mut rng);
            match model.clamp {
                ClampPolicy::Keep => noisy,
                ClampPolicy::Clamp => noisy.max(0.0),
                ClampPolicy::Redraw => {
                    let mut x = noisy;
                    let mut tries = 0;
                    while x < 0.0 && tries < 1000 {
                        x = v + normal.sample(&mut rng);
                        tries += 1;
                    }
                    x.max(0.0)
                }
            }
        })
        .collect();
    Ok(ObservationSet::from_parts_unchecked(
        obs.n(),
        obs.pairs().to_vec(),
        values,
        obs.with_replacement(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{distance_matrix_from_points, PointCloud};
    use nalgebra::DMatrix;
    use std::collections::HashSet;

    fn obs_with_values(values: Vec<f64>) -> ObservationSet {
        let n = 10;
        let pairs = (0..values.len()).map(|k| pair_from_index(k, n).unwrap()).collect();
        ObservationSet::new(n, pairs, values, false).unwrap()
    }

    #[test]
    fn exhaustive_without_replacement() {
        let pairs = sample_pairs(3, 3, false, 5).unwrap();
        let set: HashSet<_> = pairs.iter().map(|p| p.one_based()).collect();
        assert_eq!(set, HashSet::from([(1, 2), (1, 3), (2, 3)]));
        assert!(matches!(
            sample_pairs(3, 4, false, 5),
            Err(EdgError::TooManySamples { m: 4, total: 3 })
        ));
    }

    #[test]
    fn without_replacement_has_no_duplicates() {
        let pairs = sample_pairs(40, 500, false, 1).unwrap();
        let set: HashSet<_> = pairs.iter().collect();
        assert_eq!(set.len(), 500);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(sample_pairs(50, 100, true, 9).unwrap(), sample_pairs(50, 100, true, 9).unwrap());
        assert_ne!(sample_pairs(50, 100, true, 9).unwrap(), sample_pairs(50, 100, true, 10).unwrap());
    }

    #[test]
    fn with_replacement_is_uniform() {
        // chi-square statistic over all L cells must sit within 4 standard
        // deviations of its expectation L − 1
        let n = 100;
        let m = 100_000;
        let l = pair_count(n);
        let mut counts = vec![0usize; l];
        for p in sample_pairs(n, m, true, 2024).unwrap() {
            counts[crate::basis::pair_index(p, n).unwrap()] += 1;
        }
        let expected = m as f64 / l as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let df = (l - 1) as f64;
        assert!((chi2 - df).abs() < 4.0 * (2.0 * df).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn observe_reads_entries() {
        let pts = PointCloud::new(DMatrix::from_fn(6, 2, |i, k| (i * i + k) as f64)).unwrap();
        let d = distance_matrix_from_points(&pts);
        let full = observe(&d, crate::basis::all_pairs(6), false).unwrap();
        let mut expected = Vec::new();
        for i in 0..6 {
            for j in i + 1..6 {
                expected.push(d.get(i, j));
            }
        }
        assert_eq!(full.values(), expected.as_slice());

        let p = IndexPair::new(1, 4).unwrap();
        let dup = observe(&d, vec![p, p], true).unwrap();
        assert_eq!(dup.values()[0], dup.values()[1]);
        assert!(observe(&d, vec![IndexPair::new(1, 6).unwrap()], true).is_err());
    }

    #[test]
    fn noise_model_rule() {
        let m = derive_noise_model(&obs_with_values(vec![1.0, 4.0, 9.0])).unwrap();
        assert_eq!((m.sigma, m.mu), (1.0, 3.0));
        let m = derive_noise_model(&obs_with_values(vec![0.0, 2.0])).unwrap();
        assert_eq!((m.sigma, m.mu), (2.0, 6.0));
        assert!(matches!(
            derive_noise_model(&obs_with_values(vec![0.0, 0.0])),
            Err(EdgError::NoPositiveObservation)
        ));
    }

    #[test]
    fn degenerate_noise() {
        let obs = obs_with_values(vec![1.0, 2.0, 3.0]);
        let same = corrupt(&obs, &NoiseModel::new(0.0, 0.0, ClampPolicy::Clamp).unwrap(), 1).unwrap();
        assert_eq!(same, obs);
        let shifted = corrupt(&obs, &NoiseModel::new(0.5, 0.0, ClampPolicy::Clamp).unwrap(), 1).unwrap();
        assert_eq!(shifted.values(), &[1.5, 2.5, 3.5]);
        assert_eq!(shifted.pairs(), obs.pairs());
    }

    #[test]
    fn noise_moments() {
        let obs = obs_with_values(vec![0.0; 45]);
        let model = NoiseModel::new(2.0, 0.5, ClampPolicy::Keep).unwrap();
        let mut samples = Vec::new();
        let mut seed = 0;
        while samples.len() < 100_000 {
            samples.extend_from_slice(corrupt(&obs, &model, seed).unwrap().values());
            seed += 1;
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mean - 2.0).abs() < 0.02 && (sd - 0.5).abs() < 0.005);
    }

    #[test]
    fn clamp_policies() {
        let obs = obs_with_values(vec![0.0; 40]);
        let model = NoiseModel::new(0.0, 1.0, ClampPolicy::Keep).unwrap();
        assert!(corrupt(&obs, &model, 3).unwrap().values().iter().any(|v| *v < 0.0));
        for clamp in [ClampPolicy::Clamp, ClampPolicy::Redraw] {
            let model = NoiseModel { clamp, ..model };
            assert!(corrupt(&obs, &model, 3).unwrap().values().iter().all(|v| *v >= 0.0));
        }
        assert!(NoiseModel::new(0.0, -1.0, ClampPolicy::Clamp).is_err());
    }
}

//! The distance basis `w_α`, its dual `v_α`, and the measurement operators
//! built from them.
//!
//! For a pair `α = (i, j)`, `w_α = e_ii + e_jj − e_ij − e_ji`, so
//! `⟨X, w_α⟩ = X_ii + X_jj − 2 X_ij` is the squared distance between points
//! `i` and `j` when `X` is a centered Gram matrix. The `w_α` span the space of
//! symmetric matrices with zero row sums; the dual basis satisfies
//! `⟨v_α, w_β⟩ = δ_αβ` and has an explicit closed form.
//!
//! Pairs are stored 0-based. Files and user-facing messages use 1-based
//! indices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EdgError, Result};
use crate::linalg::ensure_square;

/// Default size cap for operators that materialize `v_α` or `H`.
pub const DEFAULT_DENSE_LIMIT: usize = 64;

/// An unordered pair of distinct point indices, stored as `i < j` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexPair {
    i: usize,
    j: usize,
}

impl IndexPair {
    /// Builds a pair from 0-based indices in either order.
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(EdgError::InvalidPair {
                i: a + 1,
                j: b + 1,
                n: 0,
            });
        }
        Ok(Self {
            i: a.min(b),
            j: a.max(b),
        })
    }

    /// Builds a pair from 1-based indices, validated against `n`.
    pub fn from_one_based(i: usize, j: usize, n: usize) -> Result<Self> {
        if i == 0 || j == 0 || i > n || j > n || i == j {
            return Err(EdgError::InvalidPair { i, j, n });
        }
        Self::new(i - 1, j - 1)
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn one_based(&self) -> (usize, usize) {
        (self.i + 1, self.j + 1)
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.j >= n {
            return Err(EdgError::InvalidPair {
                i: self.i + 1,
                j: self.j + 1,
                n,
            });
        }
        Ok(())
    }

    pub fn shares_index(&self, other: &IndexPair) -> bool {
        self.i == other.i || self.i == other.j || self.j == other.i || self.j == other.j
    }
}

/// `L = n(n−1)/2`.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Row-major enumeration of the strict upper triangle: `(1,2) → 0`,
/// `(1,3) → 1`, …, `(n−1,n) → L−1`.
pub fn pair_index(p: IndexPair, n: usize) -> Result<usize> {
    p.check(n)?;
    let (i, j) = (p.i, p.j);
    Ok(i * n - i * (i + 1) / 2 + (j - i - 1))
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(k: usize, n: usize) -> Result<IndexPair> {
    let total = pair_count(n);
    if k >= total {
        return Err(EdgError::InvalidParameter(format!(
            "linear pair index {k} out of range for n = {n} (L = {total})"
        )));
    }
    // Row i starts at s(i) = i*n − i(i+1)/2. Estimate i from the quadratic and
    // then fix up rounding.
    let nf = n as f64;
    let kf = k as f64;
    let disc = (2.0 * nf - 1.0).powi(2) - 8.0 * kf;
    let mut i = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor() as usize;
    let row_start = |i: usize| i * n - i * (i + 1) / 2;
    while i > 0 && row_start(i) > k {
        i -= 1;
    }
    while i + 1 < n && row_start(i + 1) <= k {
        i += 1;
    }
    let j = k - row_start(i) + i + 1;
    Ok(IndexPair { i, j })
}

/// All pairs of `n` points in [`pair_index`] order.
pub fn all_pairs(n: usize) -> Vec<IndexPair> {
    let mut out = Vec::with_capacity(pair_count(n));
    for i in 0..n {
        for j in i + 1..n {
            out.push(IndexPair { i, j });
        }
    }
    out
}

/// A multiset of sampled pairs with their observed squared distances.
///
/// Order is the sampling order and duplicates are kept; every operator
/// weights a pair by its multiplicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    n: usize,
    pairs: Vec<IndexPair>,
    values: Vec<f64>,
    with_replacement: bool,
}

impl ObservationSet {
    pub fn new(
        n: usize,
        pairs: Vec<IndexPair>,
        values: Vec<f64>,
        with_replacement: bool,
    ) -> Result<Self> {
        if pairs.len() != values.len() {
            return Err(EdgError::Shape(format!(
                "{} pairs but {} values",
                pairs.len(),
                values.len()
            )));
        }
        for p in &pairs {
            p.check(n)?;
        }
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(EdgError::NonFinite { row: k, col: 0 });
            }
            if *v < 0.0 {
                return Err(EdgError::InvalidParameter(format!(
                    "observation {} has negative squared distance {v}",
                    k + 1
                )));
            }
        }
        Ok(Self {
            n,
            pairs,
            values,
            with_replacement,
        })
    }

    /// Skips the nonnegativity check; used by the noise model, whose clamp
    /// policy decides what happens to negative values.
    pub(crate) fn from_parts_unchecked(
        n: usize,
        pairs: Vec<IndexPair>,
        values: Vec<f64>,
        with_replacement: bool,
    ) -> Self {
        Self {
            n,
            pairs,
            values,
            with_replacement,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[IndexPair] {
        &self.pairs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn with_replacement(&self) -> bool {
        self.with_replacement
    }

    /// `γ = m / L`.
    pub fn sampling_rate(&self) -> f64 {
        self.len() as f64 / pair_count(self.n) as f64
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.pairs.clone(), values, self.with_replacement)
    }
}

/// `⟨X, w_α⟩ = X_ii + X_jj − 2 X_ij`.
pub fn inner_w(x: &DMatrix<f64>, p: IndexPair) -> f64 {
    let (i, j) = (p.i, p.j);
    x[(i, i)] + x[(j, j)] - x[(i, j)] - x[(j, i)]
}

/// `H_αβ = ⟨w_α, w_β⟩`: 4 on the diagonal, 1 when the pairs share one
/// index, 0 when disjoint.
pub fn h_entry(a: IndexPair, b: IndexPair) -> f64 {
    if a == b {
        4.0
    } else if a.shares_index(&b) {
        1.0
    } else {
        0.0
    }
}

/// Closed-form entry of `H⁻¹ = ⟨v_α, v_β⟩`.
pub fn h_inv_entry(a: IndexPair, b: IndexPair, n: usize) -> f64 {
    let nf = n as f64;
    let n2 = nf * nf;
    if a == b {
        ((nf - 1.0).powi(2) + 1.0) / (2.0 * n2)
    } else if a.shares_index(&b) {
        (4.0 - 2.0 * nf) / (4.0 * n2)
    } else {
        1.0 / n2
    }
}

/// Dense `w_α`. Only for verification; solver paths use [`inner_w`].
pub fn w_matrix(p: IndexPair, n: usize) -> Result<DMatrix<f64>> {
    p.check(n)?;
    let mut w = DMatrix::zeros(n, n);
    w[(p.i, p.i)] = 1.0;
    w[(p.j, p.j)] = 1.0;
    w[(p.i, p.j)] = -1.0;
    w[(p.j, p.i)] = -1.0;
    Ok(w)
}

fn check_shape(x: &DMatrix<f64>, n: usize) -> Result<()> {
    let size = ensure_square(x, "operand")?;
    if size != n {
        return Err(EdgError::Shape(format!(
            "operand is {size}x{size}, observations are for n = {n}"
        )));
    }
    Ok(())
}

/// `A(X)_k = ⟨X, w_{α_k}⟩` for each observation `k`.
pub fn apply_a(x: &DMatrix<f64>, obs: &ObservationSet) -> Result<Vec<f64>> {
    check_shape(x, obs.n)?;
    Ok(obs.pairs.iter().map(|&p| inner_w(x, p)).collect())
}

/// `A*(y) = Σ_k y_k w_{α_k}`.
pub fn apply_a_star(y: &[f64], obs: &ObservationSet) -> Result<DMatrix<f64>> {
    if y.len() != obs.len() {
        return Err(EdgError::Shape(format!(
            "vector has length {}, expected {}",
            y.len(),
            obs.len()
        )));
    }
    let mut out = DMatrix::zeros(obs.n, obs.n);
    for (&p, &c) in obs.pairs.iter().zip(y) {
        out[(p.i, p.i)] += c;
        out[(p.j, p.j)] += c;
        out[(p.i, p.j)] -= c;
        out[(p.j, p.i)] -= c;
    }
    Ok(out)
}

/// `A*(y) P` without forming the n×n matrix. Row `i` of the result is
/// `Σ_{(i,j)∈Ω} y (P_i − P_j)`.
pub fn apply_a_star_times_p(
    y: &[f64],
    obs: &ObservationSet,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if y.len() != obs.len() {
        return Err(EdgError::Shape(format!(
            "vector has length {}, expected {}",
            y.len(),
            obs.len()
        )));
    }
    if p.nrows() != obs.n {
        return Err(EdgError::Shape(format!(
            "factor has {} rows, expected {}",
            p.nrows(),
            obs.n
        )));
    }
    let q = p.ncols();
    let rows: Vec<f64> = p.transpose().as_slice().to_vec();
    let mut out = vec![0.0; rows.len()];
    a_star_times_rows(&obs.pairs, y, &rows, q, &mut out);
    Ok(DMatrix::from_row_slice(obs.n, q, &out))
}

/// `out_k = ‖P_i − P_j‖²` for row-major `P` with `q` columns.
pub(crate) fn a_of_factor_rows(pairs: &[IndexPair], p: &[f64], q: usize, out: &mut [f64]) {
    for (o, pair) in out.iter_mut().zip(pairs) {
        let a = &p[pair.i * q..(pair.i + 1) * q];
        let b = &p[pair.j * q..(pair.j + 1) * q];
        *o = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    }
}

/// Row-major kernel behind [`apply_a_star_times_p`]; overwrites `out`.
pub(crate) fn a_star_times_rows(
    pairs: &[IndexPair],
    y: &[f64],
    p: &[f64],
    q: usize,
    out: &mut [f64],
) {
    out.fill(0.0);
    for (pair, &c) in pairs.iter().zip(y) {
        let (i, j) = (pair.i, pair.j);
        for k in 0..q {
            let diff = c * (p[i * q + k] - p[j * q + k]);
            out[i * q + k] += diff;
            out[j * q + k] -= diff;
        }
    }
}

/// `F(X) = (L/m) Σ_{α∈Ω} ⟨X, w_α⟩ w_α`.
pub fn apply_frame_operator(x: &DMatrix<f64>, obs: &ObservationSet) -> Result<DMatrix<f64>> {
    let coeffs = apply_a(x, obs)?;
    let scale = pair_count(obs.n) as f64 / obs.len().max(1) as f64;
    Ok(apply_a_star(&coeffs, obs)? * scale)
}

/// `R_Ω(X) = (L/m) Σ_{α∈Ω} ⟨X, w_α⟩ v_α` with the default dense limit.
pub fn apply_sampling_operator(x: &DMatrix<f64>, obs: &ObservationSet) -> Result<DMatrix<f64>> {
    DualBasis::new(obs.n)?.sampling_operator(x, obs)
}

/// `v_α` for `n` points with the default dense limit.
pub fn v_matrix(p: IndexPair, n: usize) -> Result<DMatrix<f64>> {
    DualBasis::new(n)?.v_matrix(p)
}

/// Dense dual-basis computations for one problem size.
///
/// These cost `O(n²)` per `v_α` and `O(L²)` for `H`, so they are capped at
/// [`DEFAULT_DENSE_LIMIT`] unless a larger limit is requested.
#[derive(Debug, Clone, Copy)]
pub struct DualBasis {
    n: usize,
}

impl DualBasis {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_limit(n, DEFAULT_DENSE_LIMIT)
    }

    pub fn with_limit(n: usize, limit: usize) -> Result<Self> {
        if n < 3 {
            return Err(EdgError::TooFewPoints(n));
        }
        if n > limit {
            return Err(EdgError::DenseLimit { n, limit });
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Explicit `v_α = w̃_α + p_α + q_α`:
    /// the `(i,i),(j,j)` entries are `(n−1)/n²`, `(i,j)` is `−((n−1)²+1)/(2n²)`,
    /// entries linking `i` or `j` to another index are `(2n−4)/(4n²)`, and the
    /// block on the remaining indices is `−1/n²`.
    pub fn v_matrix(&self, p: IndexPair) -> Result<DMatrix<f64>> {
        let n = self.n;
        p.check(n)?;
        let nf = n as f64;
        let n2 = nf * nf;
        let diag = (nf - 1.0) / n2;
        let cross = -((nf - 1.0).powi(2) + 1.0) / (2.0 * n2);
        let link = (2.0 * nf - 4.0) / (4.0 * n2);
        let rest = -1.0 / n2;
        let in_pair = |t: usize| t == p.i || t == p.j;
        Ok(DMatrix::from_fn(n, n, |r, c| match (in_pair(r), in_pair(c)) {
            (true, true) if r == c => diag,
            (true, true) => cross,
            (true, false) | (false, true) => link,
            (false, false) => rest,
        }))
    }

    /// `H` assembled from [`h_entry`] in [`pair_index`] order.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let pairs = all_pairs(self.n);
        let l = pairs.len();
        DMatrix::from_fn(l, l, |a, b| h_entry(pairs[a], pairs[b]))
    }

    /// `H⁻¹` assembled from [`h_inv_entry`].
    pub fn h_inv_matrix(&self) -> DMatrix<f64> {
        let pairs = all_pairs(self.n);
        let l = pairs.len();
        DMatrix::from_fn(l, l, |a, b| h_inv_entry(pairs[a], pairs[b], self.n))
    }

    fn check_obs(&self, x: &DMatrix<f64>, obs: &ObservationSet) -> Result<()> {
        if obs.n != self.n {
            return Err(EdgError::Shape(format!(
                "observations are for n = {}, basis for n = {}",
                obs.n, self.n
            )));
        }
        check_shape(x, self.n)
    }

    /// `R_Ω(X) = (L/m) Σ_{α∈Ω} ⟨X, w_α⟩ v_α`.
    pub fn sampling_operator(&self, x: &DMatrix<f64>, obs: &ObservationSet) -> Result<DMatrix<f64>> {
        self.check_obs(x, obs)?;
        let scale = pair_count(self.n) as f64 / obs.len().max(1) as f64;
        let mut out = DMatrix::zeros(self.n, self.n);
        for &p in &obs.pairs {
            let c = inner_w(x, p);
            if c != 0.0 {
                out += self.v_matrix(p)? * c;
            }
        }
        Ok(out * scale)
    }

    /// `R*_Ω(X) = (L/m) Σ_{α∈Ω} ⟨X, v_α⟩ w_α`.
    pub fn sampling_adjoint(&self, x: &DMatrix<f64>, obs: &ObservationSet) -> Result<DMatrix<f64>> {
        self.check_obs(x, obs)?;
        let scale = pair_count(self.n) as f64 / obs.len().max(1) as f64;
        let coeffs = obs
            .pairs
            .iter()
            .map(|&p| Ok(crate::linalg::frobenius_inner(x, &self.v_matrix(p)?)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(apply_a_star(&coeffs, obs)? * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{center_gram_from_points, PointCloud};
    use crate::linalg::frobenius_inner;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair1(i: usize, j: usize) -> IndexPair {
        IndexPair::from_one_based(i, j, usize::MAX).unwrap()
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    fn random_in_s(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        crate::linalg::double_center(&random_symmetric(n, rng))
    }

    fn obs_for(n: usize, pairs: Vec<IndexPair>) -> ObservationSet {
        let m = pairs.len();
        ObservationSet::new(n, pairs, vec![1.0; m], true).unwrap()
    }

    #[test]
    fn pair_index_examples() {
        assert_eq!(pair_index(pair1(1, 2), 5).unwrap(), 0);
        assert_eq!(pair_index(pair1(4, 5), 5).unwrap(), 9);
        assert!(pair_index(pair1(4, 6), 5).is_err());
        assert!(IndexPair::from_one_based(0, 2, 5).is_err());
        assert!(IndexPair::from_one_based(3, 3, 5).is_err());
    }

    #[test]
    fn pair_index_round_trip() {
        let n = 20;
        for (k, p) in all_pairs(n).into_iter().enumerate() {
            assert_eq!(pair_index(p, n).unwrap(), k);
            assert_eq!(pair_from_index(k, n).unwrap(), p);
        }
        assert!(pair_from_index(pair_count(n), n).is_err());
    }

    proptest! {
        #[test]
        fn pair_index_bijection(n in 2usize..400, frac in 0.0f64..1.0) {
            let l = pair_count(n);
            let k = ((l as f64 * frac) as usize).min(l - 1);
            let p = pair_from_index(k, n).unwrap();
            prop_assert!(p.i() < p.j() && p.j() < n);
            prop_assert_eq!(pair_index(p, n).unwrap(), k);
        }
    }

    #[test]
    fn inner_w_examples() {
        let w = w_matrix(pair1(1, 2), 3).unwrap();
        assert_eq!(inner_w(&w, pair1(1, 2)), 4.0);

        let pts = PointCloud::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let g = center_gram_from_points(&pts);
        assert!((inner_w(g.values(), pair1(1, 2)) - 1.0).abs() < 1e-15);

        let id = DMatrix::<f64>::identity(4, 4);
        for p in all_pairs(4) {
            assert_eq!(inner_w(&id, p), 2.0);
        }
    }

    #[test]
    fn h_entries() {
        assert_eq!(h_entry(pair1(1, 2), pair1(1, 2)), 4.0);
        assert_eq!(h_entry(pair1(1, 2), pair1(3, 4)), 0.0);
        assert_eq!(h_entry(pair1(1, 2), pair1(1, 3)), 1.0);
        assert_eq!(h_entry(pair1(1, 3), pair1(2, 3)), 1.0);
        for a in all_pairs(6) {
            for b in all_pairs(6) {
                let dense = frobenius_inner(&w_matrix(a, 6).unwrap(), &w_matrix(b, 6).unwrap());
                assert_eq!(h_entry(a, b), dense);
            }
        }
    }

    #[test]
    fn h_inv_entries() {
        assert!((h_inv_entry(pair1(1, 2), pair1(1, 2), 5) - 0.34).abs() < 1e-15);
        assert!((h_inv_entry(pair1(1, 2), pair1(3, 4), 5) - 0.04).abs() < 1e-15);
        assert!((h_inv_entry(pair1(1, 2), pair1(1, 3), 5) + 0.06).abs() < 1e-15);
    }

    #[test]
    fn v_matrix_worked_example() {
        let v = v_matrix(pair1(1, 2), 5).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(5, 5, &[
            4.0, -8.5, 1.5, 1.5, 1.5,
            -8.5, 4.0, 1.5, 1.5, 1.5,
            1.5, 1.5, -1.0, -1.0, -1.0,
            1.5, 1.5, -1.0, -1.0, -1.0,
            1.5, 1.5, -1.0, -1.0, -1.0,
        ]) / 25.0;
        assert!((&v - expected).amax() < 1e-15);
        let w12 = w_matrix(pair1(1, 2), 5).unwrap();
        let w13 = w_matrix(pair1(1, 3), 5).unwrap();
        assert!((frobenius_inner(&v, &w12) - 1.0).abs() < 1e-15);
        assert!(frobenius_inner(&v, &w13).abs() < 1e-15);
    }

    #[test]
    fn v_matrix_rejects_small_n() {
        assert!(matches!(v_matrix(pair1(1, 2), 2), Err(EdgError::TooFewPoints(2))));
        assert!(matches!(
            DualBasis::new(65),
            Err(EdgError::DenseLimit { n: 65, limit: 64 })
        ));
        assert!(DualBasis::with_limit(65, 100).is_ok());
    }

    #[test]
    fn v_matrix_equals_h_inverse_combination() {
        for n in 3..=8 {
            let basis = DualBasis::new(n).unwrap();
            for a in all_pairs(n) {
                let mut combo = DMatrix::zeros(n, n);
                for b in all_pairs(n) {
                    combo += w_matrix(b, n).unwrap() * h_inv_entry(a, b, n);
                }
                let v = basis.v_matrix(a).unwrap();
                assert!((v - combo).amax() < 1e-12, "n = {n}, pair {a:?}");
            }
        }
    }

    #[test]
    fn apply_a_examples() {
        let pts = PointCloud::from_rows(&[
            vec![0.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, 4.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let g = center_gram_from_points(&pts);
        let d = crate::geometry::distance_matrix_from_points(&pts);
        let pairs = vec![pair1(1, 2), pair1(2, 3), pair1(1, 4), pair1(1, 2)];
        let values: Vec<f64> = pairs.iter().map(|p| d.get(p.i(), p.j())).collect();
        let obs = ObservationSet::new(4, pairs, values.clone(), true).unwrap();
        let a = apply_a(g.values(), &obs).unwrap();
        for (x, y) in a.iter().zip(&values) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(apply_a(&DMatrix::zeros(4, 4), &obs).unwrap().iter().all(|&v| v == 0.0));
        assert!(apply_a(&DMatrix::zeros(3, 3), &obs).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 15;
        let pairs: Vec<_> = (0..40)
            .map(|_| pair_from_index(rng.random_range(0..pair_count(n)), n).unwrap())
            .collect();
        let obs = obs_for(n, pairs);
        for _ in 0..10 {
            let x = random_symmetric(n, &mut rng);
            let y: Vec<f64> = (0..obs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs: f64 = apply_a(&x, &obs).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs = frobenius_inner(&x, &apply_a_star(&y, &obs).unwrap());
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn a_star_examples() {
        let n = 5;
        let obs = obs_for(n, vec![pair1(2, 4), pair1(1, 3), pair1(2, 4)]);
        let e1 = apply_a_star(&[1.0, 0.0, 0.0], &obs).unwrap();
        assert_eq!(e1, w_matrix(pair1(2, 4), n).unwrap());
        assert_eq!(apply_a_star(&[0.0; 3], &obs).unwrap(), DMatrix::zeros(n, n));
        let dup = apply_a_star(&[1.0, 0.0, 1.0], &obs).unwrap();
        assert_eq!(dup, w_matrix(pair1(2, 4), n).unwrap() * 2.0);
        assert!(apply_a_star(&[1.0], &obs).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = apply_a_star(&y, &obs).unwrap();
        assert!(m.row_iter().all(|r| r.sum() == 0.0));
        assert!(m.iter().filter(|v| **v != 0.0).count() <= 3 * 3 + n);
    }

    #[test]
    fn matrix_free_product_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 50;
        let q = 7;
        let pairs: Vec<_> = (0..300)
            .map(|_| pair_from_index(rng.random_range(0..pair_count(n)), n).unwrap())
            .collect();
        let obs = obs_for(n, pairs);
        let y: Vec<f64> = (0..obs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0));
        let dense = apply_a_star(&y, &obs).unwrap() * &p;
        let free = apply_a_star_times_p(&y, &obs, &p).unwrap();
        assert!((dense - &free).amax() <= 1e-12);

        let zero = apply_a_star_times_p(&vec![0.0; obs.len()], &obs, &p).unwrap();
        assert_eq!(zero, DMatrix::zeros(n, q));
    }

    #[test]
    fn matrix_free_single_pair() {
        let n = 6;
        let obs = obs_for(n, vec![pair1(2, 5)]);
        let p = DMatrix::from_fn(n, 2, |i, k| (i * 3 + k) as f64);
        let out = apply_a_star_times_p(&[2.5], &obs, &p).unwrap();
        let diff = (p.row(1) - p.row(4)) * 2.5;
        assert_eq!(out.row(1), diff);
        assert_eq!(out.row(4), -diff);
        for r in [0, 2, 3, 5] {
            assert!(out.row(r).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn sampling_operator_examples() {
        let n = 5;
        let basis = DualBasis::new(n).unwrap();
        let l = pair_count(n) as f64;
        let v12 = basis.v_matrix(pair1(1, 2)).unwrap();
        let single = obs_for(n, vec![pair1(1, 2)]);
        let r = apply_sampling_operator(&v12, &single).unwrap();
        assert!((r - &v12 * l).amax() < 1e-12);

        // X with zero coefficients on every sampled pair
        let kernel_obs = obs_for(n, vec![pair1(1, 2), pair1(3, 4)]);
        let x = basis.v_matrix(pair1(2, 5)).unwrap();
        let r = apply_sampling_operator(&x, &kernel_obs).unwrap();
        assert!(r.amax() < 1e-12);

        assert!(apply_sampling_operator(&DMatrix::zeros(2, 2), &obs_for(2, vec![pair1(1, 2)])).is_err());
    }

    #[test]
    fn sampling_operator_scaled_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in [4, 6, 9] {
            let l = pair_count(n);
            let mut idx: Vec<usize> = (0..l).collect();
            for k in (1..l).rev() {
                idx.swap(k, rng.random_range(0..=k));
            }
            let m = l / 2;
            let pairs = idx[..m].iter().map(|&k| pair_from_index(k, n).unwrap()).collect();
            let obs = obs_for(n, pairs);
            let x = random_in_s(n, &mut rng);
            let basis = DualBasis::new(n).unwrap();
            let rx = basis.sampling_operator(&x, &obs).unwrap();
            let rrx = basis.sampling_operator(&rx, &obs).unwrap();
            let ratio = m as f64 / l as f64;
            assert!((rrx * ratio * ratio - rx * ratio).amax() < 1e-10);
        }
    }

    #[test]
    fn sampling_adjoint_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 7;
        let pairs = (0..12)
            .map(|_| pair_from_index(rng.random_range(0..pair_count(n)), n).unwrap())
            .collect();
        let obs = obs_for(n, pairs);
        let basis = DualBasis::new(n).unwrap();
        let x = random_in_s(n, &mut rng);
        let y = random_in_s(n, &mut rng);
        let lhs = frobenius_inner(&basis.sampling_operator(&x, &obs).unwrap(), &y);
        let rhs = frobenius_inner(&x, &basis.sampling_adjoint(&y, &obs).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn frame_operator_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 3..=8 {
            let full = obs_for(n, all_pairs(n));
            let x = random_in_s(n, &mut rng);
            let fx = apply_frame_operator(&x, &full).unwrap();
            assert!(frobenius_inner(&x, &fx) >= x.norm_squared() * (1.0 - 1e-12));
            assert_eq!(apply_frame_operator(&DMatrix::zeros(n, n), &full).unwrap(), DMatrix::zeros(n, n));

            let pairs = (0..10)
                .map(|_| pair_from_index(rng.random_range(0..pair_count(n)), n).unwrap())
                .collect();
            let obs = obs_for(n, pairs);
            let y = random_in_s(n, &mut rng);
            let a = frobenius_inner(&y, &apply_frame_operator(&x, &obs).unwrap());
            let b = frobenius_inner(&apply_frame_operator(&y, &obs).unwrap(), &x);
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn observation_set_validation() {
        assert!(ObservationSet::new(3, vec![pair1(1, 4)], vec![1.0], false).is_err());
        assert!(ObservationSet::new(3, vec![pair1(1, 2)], vec![-1.0], false).is_err());
        assert!(ObservationSet::new(3, vec![pair1(1, 2)], vec![f64::NAN], false).is_err());
        assert!(ObservationSet::new(3, vec![pair1(1, 2)], vec![], false).is_err());
        let obs = ObservationSet::new(4, vec![pair1(1, 2), pair1(1, 2), pair1(3, 4)], vec![1.0; 3], true)
            .unwrap();
        assert_eq!(obs.len(), 3);
        assert!((obs.sampling_rate() - 0.5).abs() < 1e-15);
    }
}

//! Tangent-space projections, coherence estimates and the measurement bound.
//!
//! With `U` the top-`r` eigenvectors of a centered Gram matrix `M`, the
//! tangent space at `M` is `T = {UZᵀ + ZUᵀ}` and
//! `P_T X = P_U X + X P_U − P_U X P_U`. Because `U ⊥ 1`, `P_T` maps centered
//! symmetric matrices to centered symmetric matrices.
//!
//! Every `w_α` is `aaᵀ` with `a = e_i − e_j`, so `P_T w_α = uaᵀ + auᵀ − uuᵀ`
//! with `u = P_U a`, and `⟨Y, w_β⟩ = cᵀYc` with `c = e_k − e_l`. The exact
//! estimates use these rank-two forms instead of dense products.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{all_pairs, pair_count, DualBasis, IndexPair};
use crate::error::{EdgError, Result};
use crate::geometry::GramMatrix;
use crate::linalg::symmetric_eigen;

/// Default cap on `n` for coherence estimates; the exact form costs `Θ(n⁴)`.
pub const DEFAULT_COHERENCE_LIMIT: usize = 40;

/// Eigenvalues below this fraction of the largest count as zero.
const SPECTRUM_FLOOR: f64 = 1e-12;

/// The column space `U` of a rank-`r` Gram matrix.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    u: DMatrix<f64>,
}

impl TangentSpace {
    /// Checks that the columns of `u` are orthonormal to `1e-10`.
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if u.ncols() == 0 || u.ncols() > u.nrows() {
            return Err(EdgError::Shape(format!(
                "basis must have between 1 and {} columns, got {}",
                u.nrows(),
                u.ncols()
            )));
        }
        let gram = u.transpose() * &u;
        let defect = (gram - DMatrix::identity(u.ncols(), u.ncols())).amax();
        if defect > 1e-10 {
            return Err(EdgError::InvalidMatrix(format!(
                "columns are not orthonormal (max defect {defect:e})"
            )));
        }
        Ok(Self { u })
    }

    /// The top-`r` eigenvectors of `m`, in descending eigenvalue order.
    pub fn from_gram(m: &GramMatrix, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(EdgError::InvalidParameter("rank must be at least 1".into()));
        }
        let n = m.n();
        if r >= n {
            return Err(EdgError::RankExceedsSpectrum { rank: r });
        }
        let eig = symmetric_eigen(m.values());
        let top = eig.values[0];
        if !(top > 0.0) || eig.values[r - 1] <= SPECTRUM_FLOOR * top {
            return Err(EdgError::RankExceedsSpectrum { rank: r });
        }
        Ok(Self {
            u: eig.vectors.columns(0, r).into_owned(),
        })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `P_U = UUᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.u * self.u.transpose()
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        let n = self.n();
        if x.nrows() != n || x.ncols() != n {
            return Err(EdgError::Shape(format!(
                "expected a {n}x{n} matrix, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// `P_T X = P_U X + X P_U − P_U X P_U`.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let ut_x = self.u.transpose() * x;
        let x_u = x * &self.u;
        let core = &ut_x * &self.u;
        Ok(&self.u * &ut_x + &x_u * self.u.transpose() - &self.u * core * self.u.transpose())
    }

    /// `P_T⊥ X = P_U⊥ X P_U⊥`.
    pub fn project_complement(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let n = self.n();
        let perp = DMatrix::identity(n, n) - self.projector();
        Ok(&perp * x * &perp)
    }

    /// `P_U (e_i − e_j)`.
    fn project_difference(&self, p: IndexPair) -> DVector<f64> {
        let diff = self.u.row(p.i()) - self.u.row(p.j());
        &self.u * diff.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub nu_w: f64,
    pub nu_v: f64,
    pub nu_joint: f64,
    /// Largest of the three.
    pub nu: f64,
    pub n: usize,
    pub r: usize,
}

impl CoherenceReport {
    fn new(nu_w: f64, nu_v: f64, nu_joint: f64, n: usize, r: usize) -> Self {
        Self {
            nu_w,
            nu_v,
            nu_joint,
            nu: nu_w.max(nu_v).max(nu_joint),
            n,
            r,
        }
    }
}

fn check_limit(n: usize, limit: usize) -> Result<()> {
    if n > limit {
        return Err(EdgError::DenseLimit { n, limit });
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn max_over<F: Fn(IndexPair) -> f64 + Sync>(pairs: &[IndexPair], f: F) -> f64 {
    use rayon::prelude::*;
    pairs.par_iter().map(|&p| f(p)).reduce(|| 0.0, f64::max)
}

#[cfg(not(feature = "parallel"))]
fn max_over<F: Fn(IndexPair) -> f64>(pairs: &[IndexPair], f: F) -> f64 {
    pairs.iter().map(|&p| f(p)).fold(0.0, f64::max)
}

/// `Σ_β ⟨Y, w_β⟩²` for a symmetric `Y`.
fn w_energy(y: &DMatrix<f64>) -> f64 {
    let n = y.nrows();
    let mut sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            let c = y[(k, k)] + y[(l, l)] - 2.0 * y[(k, l)];
            sum += c * c;
        }
    }
    sum
}

/// `Σ_β ⟨P_T w_α, w_β⟩²` from `u = P_U a`.
fn projected_w_energy(u: &DVector<f64>, p: IndexPair) -> f64 {
    let n = u.len();
    let a = |t: usize| {
        if t == p.i() {
            1.0
        } else if t == p.j() {
            -1.0
        } else {
            0.0
        }
    };
    let mut sum = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            let cu = u[k] - u[l];
            let ca = a(k) - a(l);
            let c = 2.0 * cu * ca - cu * cu;
            sum += c * c;
        }
    }
    sum
}

/// Smallest `ν` for which each defining inequality holds:
/// `ν_w = (n/2r)·max Σ_β⟨P_T w_α,w_β⟩²`, `ν_v = (n/4r)·max Σ_β⟨P_T v_α,w_β⟩²`
/// and `ν_joint = (4n²/r)·max ⟨w_α,UUᵀ⟩²`.
pub fn coherence_exact(m: &GramMatrix, r: usize) -> Result<CoherenceReport> {
    coherence_exact_with_limit(m, r, DEFAULT_COHERENCE_LIMIT)
}

pub fn coherence_exact_with_limit(m: &GramMatrix, r: usize, limit: usize) -> Result<CoherenceReport> {
    let n = m.n();
    check_limit(n, limit)?;
    let basis = DualBasis::with_limit(n, limit)?;
    let t = TangentSpace::from_gram(m, r)?;
    let pairs = all_pairs(n);
    let nf = n as f64;
    let rf = r as f64;

    let w_max = max_over(&pairs, |p| projected_w_energy(&t.project_difference(p), p));
    let v_max = max_over(&pairs, |p| {
        let v = basis.v_matrix(p).expect("pair is in range");
        w_energy(&t.project(&v).expect("shapes agree"))
    });
    let joint_max = max_over(&pairs, |p| t.project_difference(p).norm_squared().powi(2));

    Ok(CoherenceReport::new(
        nf / (2.0 * rf) * w_max,
        nf / (4.0 * rf) * v_max,
        4.0 * nf * nf / rf * joint_max,
        n,
        r,
    ))
}

/// Smallest `ν` for the cheaper sufficient conditions
/// `‖P_T w_α‖² ≤ 2νr/n`, `‖P_T v_α‖² ≤ 8νr/n` and `⟨v_α,UUᵀ⟩² ≤ νr/n²`.
///
/// Each component is bounded by the exact `ν`.
pub fn coherence_simplified(m: &GramMatrix, r: usize) -> Result<CoherenceReport> {
    coherence_simplified_with_limit(m, r, DEFAULT_COHERENCE_LIMIT)
}

pub fn coherence_simplified_with_limit(
    m: &GramMatrix,
    r: usize,
    limit: usize,
) -> Result<CoherenceReport> {
    let n = m.n();
    check_limit(n, limit)?;
    let basis = DualBasis::with_limit(n, limit)?;
    let t = TangentSpace::from_gram(m, r)?;
    let projector = t.projector();
    let pairs = all_pairs(n);
    let nf = n as f64;
    let rf = r as f64;

    // ‖P_T aaᵀ‖² = ‖a‖⁴ − ‖a − u‖⁴ = 4 − (2 − ‖u‖²)²
    let w_max = max_over(&pairs, |p| {
        let u2 = t.project_difference(p).norm_squared();
        4.0 - (2.0 - u2).powi(2)
    });
    let v_max = max_over(&pairs, |p| {
        let v = basis.v_matrix(p).expect("pair is in range");
        t.project(&v).expect("shapes agree").norm_squared()
    });
    let joint_max = max_over(&pairs, |p| {
        let v = basis.v_matrix(p).expect("pair is in range");
        v.dot(&projector).powi(2)
    });

    Ok(CoherenceReport::new(
        nf / (2.0 * rf) * w_max,
        nf / (8.0 * rf) * v_max,
        nf * nf / rf * joint_max,
        n,
        r,
    ))
}

/// Number of measurements that guarantees unique recovery with high
/// probability:
/// `ceil(nr · log₂(4n√(8Lr)) · 96(ν + 1/(nr)) · (β ln n + ln(4 log₂(4L√r))))`.
pub fn sample_complexity(n: usize, r: usize, nu: f64, beta: f64) -> Result<u64> {
    if n < 2 {
        return Err(EdgError::TooFewPoints(n));
    }
    if r == 0 {
        return Err(EdgError::InvalidParameter("rank must be at least 1".into()));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(EdgError::InvalidParameter(format!("coherence must be positive, got {nu}")));
    }
    if !(beta > 1.0 && beta.is_finite()) {
        return Err(EdgError::InvalidParameter(format!("beta must exceed 1, got {beta}")));
    }
    let nf = n as f64;
    let rf = r as f64;
    let l = pair_count(n) as f64;
    let rounds = (4.0 * nf * (8.0 * l * rf).sqrt()).log2();
    let coherence = 96.0 * (nu + 1.0 / (nf * rf));
    let confidence = beta * nf.ln() + (4.0 * (4.0 * l * rf.sqrt()).log2()).ln();
    Ok((nf * rf * rounds * coherence * confidence).ceil() as u64)
}

/// Rank at the largest ratio `λ_k / λ_{k+1}` of consecutive eigenvalues,
/// with eigenvalues below `1e-12·λ_max` clipped to that floor.
pub fn detect_rank(m: &GramMatrix) -> Result<usize> {
    let eig = symmetric_eigen(m.values());
    let top = eig.values[0];
    if !(top > 0.0) {
        return Err(EdgError::RankExceedsSpectrum { rank: 1 });
    }
    let floor = SPECTRUM_FLOOR * top;
    let clipped: Vec<f64> = eig.values.iter().map(|v| v.max(floor)).collect();
    let mut best = (1, 0.0);
    for k in 0..clipped.len() - 1 {
        if clipped[k] <= floor {
            break;
        }
        let ratio = clipped[k] / clipped[k + 1];
        if ratio > best.1 {
            best = (k + 1, ratio);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::w_matrix;
    use crate::geometry::{center_gram_from_points, PointCloud};
    use crate::linalg::frobenius_inner;
    use crate::sampling::{seeded_rng, streams};
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        let mut rng = seeded_rng(seed, streams::POINTS);
        PointCloud::new(DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))).unwrap()
    }

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded_rng(seed, 9);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        (&a + a.transpose()) * 0.5
    }

    fn tangent(n: usize, r: usize, seed: u64) -> (GramMatrix, TangentSpace) {
        let m = center_gram_from_points(&gaussian_cloud(n, r, seed));
        let t = TangentSpace::from_gram(&m, r).unwrap();
        (m, t)
    }

    /// Dense reference for the exact estimate.
    fn exact_dense(m: &GramMatrix, r: usize) -> (f64, f64, f64) {
        let n = m.n();
        let t = TangentSpace::from_gram(m, r).unwrap();
        let basis = DualBasis::new(n).unwrap();
        let pairs = all_pairs(n);
        let ws: Vec<_> = pairs.iter().map(|&p| w_matrix(p, n).unwrap()).collect();
        let uu = t.projector();
        let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &p) in pairs.iter().enumerate() {
            let ptw = t.project(&ws[k]).unwrap();
            let ptv = t.project(&basis.v_matrix(p).unwrap()).unwrap();
            a = a.max(ws.iter().map(|w| frobenius_inner(&ptw, w).powi(2)).sum());
            b = b.max(ws.iter().map(|w| frobenius_inner(&ptv, w).powi(2)).sum());
            c = c.max(frobenius_inner(&ws[k], &uu).powi(2));
        }
        let (nf, rf) = (n as f64, r as f64);
        (nf / (2.0 * rf) * a, nf / (4.0 * rf) * b, 4.0 * nf * nf / rf * c)
    }

    #[test]
    fn tangent_fixed_points() {
        let (_, t) = tangent(12, 2, 1);
        let n = 12;
        let mut rng = seeded_rng(3, 9);
        let z = DMatrix::<f64>::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let x = t.basis() * z.transpose() + &z * t.basis().transpose();
        assert!((t.project(&x).unwrap() - &x).amax() < 1e-10);

        let u = t.basis().column(0).into_owned();
        let other = t.basis().column(1).into_owned();
        let mut w = DVector::from_fn(n, |i, _| (i as f64).sin());
        w -= t.projector() * &w;
        let mixed = &u * w.transpose();
        assert!((t.project(&mixed).unwrap() - &mixed).amax() < 1e-10);
        let inside = &u * other.transpose();
        assert!((t.project(&inside).unwrap() - &inside).amax() < 1e-10);
    }

    #[test]
    fn full_tangent_fixes_centered_matrices() {
        let n = 6;
        let m = center_gram_from_points(&gaussian_cloud(n, n - 1, 4));
        let t = TangentSpace::from_gram(&m, n - 1).unwrap();
        let x = crate::linalg::double_center(&random_symmetric(n, 5));
        assert!((t.projector() * &x - &x).amax() < 1e-10);
        assert!((t.project(&x).unwrap() - &x).amax() < 1e-10);
    }

    #[test]
    fn projection_algebra() {
        let (_, t) = tangent(10, 3, 2);
        for seed in 0..5 {
            let x = random_symmetric(10, seed);
            let y = random_symmetric(10, seed + 100);
            let px = t.project(&x).unwrap();
            assert!((t.project(&px).unwrap() - &px).amax() < 1e-10);
            let lhs = frobenius_inner(&px, &y);
            let rhs = frobenius_inner(&x, &t.project(&y).unwrap());
            assert!((lhs - rhs).abs() < 1e-10);
            let perp = t.project_complement(&x).unwrap();
            let split = px.norm_squared() + perp.norm_squared();
            assert!((x.norm_squared() - split).abs() < 1e-10 * x.norm_squared());
            assert!((&px + &perp - &x).amax() < 1e-10);
        }
    }

    #[test]
    fn tangent_validation() {
        assert!(TangentSpace::new(DMatrix::from_element(4, 1, 1.0)).is_err());
        assert!(TangentSpace::new(DMatrix::identity(4, 2)).is_ok());
        let (_, t) = tangent(5, 2, 1);
        assert!(t.project(&DMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn exact_matches_dense_evaluation() {
        for (n, r, seed) in [(8, 1, 1), (10, 2, 2), (9, 3, 3)] {
            let m = center_gram_from_points(&gaussian_cloud(n, r, seed));
            let report = coherence_exact(&m, r).unwrap();
            let (w, v, j) = exact_dense(&m, r);
            for (fast, dense) in [(report.nu_w, w), (report.nu_v, v), (report.nu_joint, j)] {
                assert!((fast - dense).abs() < 1e-10 * dense.max(1.0), "{fast} vs {dense}");
            }
            assert_eq!(report.nu, report.nu_w.max(report.nu_v).max(report.nu_joint));
        }
    }

    #[test]
    fn exact_certifies_its_inequalities_and_the_simplified_chain() {
        let n = 10;
        let r = 2;
        let m = center_gram_from_points(&gaussian_cloud(n, r, 7));
        let exact = coherence_exact(&m, r).unwrap();
        let simple = coherence_simplified(&m, r).unwrap();
        let t = TangentSpace::from_gram(&m, r).unwrap();
        let basis = DualBasis::new(n).unwrap();
        let (nf, rf, nu) = (n as f64, r as f64, exact.nu);
        for p in all_pairs(n) {
            let w = w_matrix(p, n).unwrap();
            let v = basis.v_matrix(p).unwrap();
            let ptw = t.project(&w).unwrap();
            let ptv = t.project(&v).unwrap();
            assert!(ptw.norm_squared() <= 2.0 * nu * rf / nf + 1e-12);
            assert!(ptv.norm() <= 2.0 * (2.0 * nu * rf / nf).sqrt() + 1e-12);
            assert!(v.dot(&t.projector()).powi(2) <= nu * rf / (nf * nf) + 1e-12);
            assert!(frobenius_inner(&w, &t.projector()).powi(2) <= nu * rf / (4.0 * nf * nf) + 1e-12);
        }
        for c in [simple.nu_w, simple.nu_v, simple.nu_joint] {
            assert!(c <= exact.nu + 1e-12);
        }
        assert!(simple.nu_w <= exact.nu_w + 1e-12);
    }

    #[test]
    fn gaussian_smoke() {
        let m = center_gram_from_points(&gaussian_cloud(20, 3, 11));
        let report = coherence_exact(&m, 3).unwrap();
        assert!(report.nu > 0.0);
        assert!(report.nu_w.is_finite() && report.nu_v.is_finite() && report.nu_joint.is_finite());
        assert_eq!((report.n, report.r), (20, 3));
    }

    #[test]
    fn scale_invariance() {
        let m = center_gram_from_points(&gaussian_cloud(12, 2, 5));
        let a = coherence_exact(&m, 2).unwrap();
        let b = coherence_exact(&m.scaled(10.0), 2).unwrap();
        for (x, y) in [(a.nu_w, b.nu_w), (a.nu_v, b.nu_v), (a.nu_joint, b.nu_joint)] {
            assert!((x - y).abs() < 1e-9 * x);
        }
    }

    #[test]
    fn duplicate_points_raise_coherence() {
        let n = 16;
        let spread = gaussian_cloud(n, 2, 21);
        let mut coords = spread.coords().clone();
        let first = coords.row(0).into_owned();
        coords.set_row(1, &first);
        let dup = PointCloud::new(coords).unwrap();
        let a = coherence_simplified(&center_gram_from_points(&spread), 2).unwrap();
        let b = coherence_simplified(&center_gram_from_points(&dup), 2).unwrap();
        assert!(b.nu > a.nu, "{} vs {}", b.nu, a.nu);
    }

    #[test]
    fn degenerate_inputs() {
        let zero = GramMatrix::new(DMatrix::zeros(6, 6)).unwrap();
        assert!(matches!(coherence_exact(&zero, 1), Err(EdgError::RankExceedsSpectrum { .. })));
        let m = center_gram_from_points(&gaussian_cloud(8, 2, 1));
        assert!(matches!(coherence_exact(&m, 3), Err(EdgError::RankExceedsSpectrum { rank: 3 })));
        assert!(coherence_exact(&m, 0).is_err());
        let big = center_gram_from_points(&gaussian_cloud(41, 2, 1));
        assert!(matches!(coherence_exact(&big, 2), Err(EdgError::DenseLimit { n: 41, limit: 40 })));
        assert!(coherence_exact_with_limit(&big, 2, 41).is_ok());
    }

    #[test]
    fn sample_complexity_frozen_value() {
        // independent evaluation with 50-digit arithmetic, then rounded up
        assert_eq!(sample_complexity(1000, 3, 2.0, 2.0).unwrap(), FROZEN_1000_3_2_2);
    }

    #[test]
    fn sample_complexity_validation_and_monotonicity() {
        assert!(sample_complexity(100, 2, 1.0, 1.0).is_err());
        assert!(sample_complexity(100, 2, 0.0, 2.0).is_err());
        assert!(sample_complexity(1, 1, 1.0, 2.0).is_err());
        let base = sample_complexity(100, 2, 1.5, 2.0).unwrap();
        assert!(sample_complexity(100, 2, 3.0, 2.0).unwrap() > base);
        assert!(sample_complexity(101, 2, 1.5, 2.0).unwrap() >= base);
        assert!(sample_complexity(100, 3, 1.5, 2.0).unwrap() >= base);
        assert!(sample_complexity(100, 2, 1.5, 2.5).unwrap() >= base);
    }

    #[test]
    fn rank_detection() {
        for r in 1..5 {
            let m = center_gram_from_points(&gaussian_cloud(15, r, r as u64));
            assert_eq!(detect_rank(&m).unwrap(), r);
        }
        assert!(detect_rank(&GramMatrix::new(DMatrix::zeros(4, 4)).unwrap()).is_err());
    }

    const FROZEN_1000_3_2_2: u64 = 249_833_361;
}

//! Point clouds, squared distance matrices and Gram matrices, with the
//! conversions between them, classical MDS, and Procrustes alignment.
//!
//! Distances are squared everywhere in this module. Anything that wants a
//! plain distance takes the square root itself.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{EdgError, Result};
use crate::linalg::{center_columns, double_center, ensure_finite, ensure_square, symmetric_eigen};

const SYMMETRY_TOL: f64 = 1e-9;

/// `n` points in `d` dimensions, one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: DMatrix<f64>,
}

impl PointCloud {
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        if coords.nrows() == 0 || coords.ncols() == 0 {
            return Err(EdgError::Shape(format!(
                "point cloud needs n >= 1 and d >= 1, got {}x{}",
                coords.nrows(),
                coords.ncols()
            )));
        }
        ensure_finite(&coords)?;
        Ok(Self { coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(EdgError::Shape(format!(
                "row {} has {} coordinates, expected {d}",
                bad,
                rows[bad].len()
            )));
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DMatrix<f64> {
        self.coords
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).iter().copied().collect()
    }

    /// The same cloud with its centroid moved to the origin.
    pub fn centered(&self) -> PointCloud {
        PointCloud {
            coords: center_columns(&self.coords),
        }
    }

    pub fn translated(&self, t: &[f64]) -> Result<PointCloud> {
        if t.len() != self.dim() {
            return Err(EdgError::Shape(format!(
                "translation has {} components, cloud has d = {}",
                t.len(),
                self.dim()
            )));
        }
        let mut coords = self.coords.clone();
        for mut row in coords.row_iter_mut() {
            for (x, dt) in row.iter_mut().zip(t) {
                *x += dt;
            }
        }
        PointCloud::new(coords)
    }

    /// Largest pairwise distance (not squared).
    pub fn diameter(&self) -> f64 {
        let n = self.n();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let d2 = (self.coords.row(i) - self.coords.row(j)).norm_squared();
                best = best.max(d2);
            }
        }
        best.sqrt()
    }
}

/// Symmetric, hollow, nonnegative matrix of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDistanceMatrix {
    values: DMatrix<f64>,
}

impl SquaredDistanceMatrix {
    /// Validates the invariants. Entries that are symmetric up to a relative
    /// `1e-9` are accepted and averaged so the stored matrix is exactly symmetric.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let n = ensure_square(&values, "squared distance matrix")?;
        ensure_finite(&values)?;
        let mut values = values;
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(EdgError::InvalidMatrix(format!(
                    "diagonal entry ({i}, {i}) is {} instead of 0",
                    values[(i, i)]
                )));
            }
            for j in i + 1..n {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(EdgError::InvalidMatrix(format!(
                        "entries ({i}, {j}) and ({j}, {i}) differ: {a} vs {b}"
                    )));
                }
                if a < 0.0 || b < 0.0 {
                    return Err(EdgError::InvalidMatrix(format!(
                        "negative squared distance at ({i}, {j})"
                    )));
                }
                let avg = 0.5 * (a + b);
                values[(i, j)] = avg;
                values[(j, i)] = avg;
            }
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// A symmetric inner-product matrix.
///
/// Only symmetry and finiteness are enforced on construction; zero row sums
/// and positive semidefiniteness are properties callers can query, since
/// intermediate results (e.g. `-½ J D J` of a non-EDM) may lack them.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let n = ensure_square(&values, "Gram matrix")?;
        ensure_finite(&values)?;
        let scale = values.amax().max(1.0);
        for i in 0..n {
            for j in i + 1..n {
                if (values[(i, j)] - values[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(EdgError::InvalidMatrix(format!(
                        "Gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(values))
    }

    pub(crate) fn symmetrized(values: DMatrix<f64>) -> Self {
        let values = (&values + values.transpose()) * 0.5;
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// `max_i |Σ_j G_ij|`.
    pub fn max_row_sum(&self) -> f64 {
        self.values
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let e = symmetric_eigen(&self.values);
        e.values[e.values.len() - 1]
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    pub fn scaled(&self, factor: f64) -> GramMatrix {
        GramMatrix {
            values: &self.values * factor,
        }
    }
}

/// `D_ij = ‖p_i − p_j‖²`, symmetric and hollow by construction.
pub fn distance_matrix_from_points(pts: &PointCloud) -> SquaredDistanceMatrix {
    let n = pts.n();
    let c = pts.coords();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = (0..pts.dim()).map(|k| (c[(i, k)] - c[(j, k)]).powi(2)).sum();
            values[(i, j)] = d2;
            values[(j, i)] = d2;
        }
    }
    SquaredDistanceMatrix { values }
}

/// `(JP)(JP)ᵀ`, the Gram matrix of the cloud translated to its centroid.
pub fn center_gram_from_points(pts: &PointCloud) -> GramMatrix {
    let centered = center_columns(pts.coords());
    GramMatrix::symmetrized(&centered * centered.transpose())
}

/// `−½ J D J`. Non-EDM input is accepted; see [`is_edm`].
pub fn gram_from_distances(d: &SquaredDistanceMatrix) -> GramMatrix {
    GramMatrix::symmetrized(double_center(d.values()) * -0.5)
}

/// True iff `−½ J D J` has no eigenvalue below `−tol`.
pub fn is_edm(d: &SquaredDistanceMatrix, tol: f64) -> bool {
    gram_from_distances(d).min_eigenvalue() >= -tol
}

#[derive(Debug, Clone)]
pub struct MdsEmbedding {
    pub points: PointCloud,
    /// The `d` leading eigenvalues, before clamping.
    pub eigenvalues: Vec<f64>,
    /// Sum of `|λ|` over all negative eigenvalues of the input.
    pub clamped_mass: f64,
}

/// Classical MDS: coordinates `U_d Λ_d^{1/2}` from the top `d` eigenpairs,
/// with negative eigenvalues clamped to zero.
pub fn mds_embed(g: &GramMatrix, d: usize) -> Result<PointCloud> {
    Ok(mds_embed_with_diagnostics(g, d)?.points)
}

pub fn mds_embed_with_diagnostics(g: &GramMatrix, d: usize) -> Result<MdsEmbedding> {
    let n = g.n();
    if d == 0 || d > n {
        return Err(EdgError::DimensionTooLarge { d, n });
    }
    let eig = symmetric_eigen(g.values());
    let clamped_mass = eig.values.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    let mut coords = DMatrix::zeros(n, d);
    for k in 0..d {
        let scale = eig.values[k].max(0.0).sqrt();
        coords.set_column(k, &(eig.vectors.column(k) * scale));
    }
    Ok(MdsEmbedding {
        points: PointCloud::new(coords)?,
        eigenvalues: eig.values.iter().take(d).copied().collect(),
        clamped_mass,
    })
}

/// Classical MDS of `J(PPᵀ)J` computed from the factor `P` (n×q) through the
/// q×q matrix `(JP)ᵀ(JP)`, without forming the n×n Gram matrix.
///
/// Coordinates agree with [`mds_embed`] applied to the dense Gram matrix up to
/// the sign of each column. Columns beyond `q` are zero.
pub fn mds_embed_factor(p: &DMatrix<f64>, d: usize) -> Result<PointCloud> {
    let n = p.nrows();
    if d == 0 || d > n {
        return Err(EdgError::DimensionTooLarge { d, n });
    }
    let b = center_columns(p);
    let small = b.transpose() * &b;
    let eig = symmetric_eigen(&small);
    let mut coords = DMatrix::zeros(n, d);
    for k in 0..d.min(p.ncols()) {
        if eig.values[k] <= 0.0 {
            continue;
        }
        let mut col = &b * eig.vectors.column(k);
        let thresh = 1e-12 * col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > thresh) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        coords.set_column(k, &col);
    }
    PointCloud::new(coords)
}

#[derive(Debug, Clone, Serialize)]
pub struct Alignment {
    #[serde(skip)]
    pub aligned: PointCloud,
    /// Root-mean-square distance between matched points after alignment.
    pub rmsd: f64,
}

/// Orthogonal `R` maximizing `tr(Rᵀh)`.
///
/// The singular pairs are read off the symmetric matrix `[[0, h], [hᵀ, 0]]`,
/// whose eigenpairs are `±σ` with vectors `(u, ±v)/√2`. This avoids the
/// general SVD, which returned inaccurate factors for some singular `h`.
/// Directions with `σ ≈ 0` do not change the fit and are completed with any
/// orthonormal basis.
fn orthogonal_polar(h: &DMatrix<f64>) -> DMatrix<f64> {
    let d = h.nrows();
    let mut jw = DMatrix::zeros(2 * d, 2 * d);
    jw.view_mut((0, d), (d, d)).copy_from(h);
    jw.view_mut((d, 0), (d, d)).copy_from(&h.transpose());
    let eig = symmetric_eigen(&jw);
    let floor = 1e-10 * eig.values[0];
    let (mut u, mut v) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for k in 0..d {
        if !(eig.values[k] > floor) {
            break;
        }
        let x = eig.vectors.column(k);
        u.push(x.rows(0, d).normalize());
        v.push(x.rows(d, d).normalize());
    }
    complete_basis(&mut u, d);
    complete_basis(&mut v, d);
    DMatrix::from_columns(&u) * DMatrix::from_columns(&v).transpose()
}

/// Extends orthonormal columns to a basis of `R^d` by Gram-Schmidt on the
/// coordinate vector with the largest residual.
fn complete_basis(cols: &mut Vec<DVector<f64>>, d: usize) {
    while cols.len() < d {
        let next = (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                for _ in 0..2 {
                    for c in cols.iter() {
                        let proj = c.dot(&e);
                        e -= c * proj;
                    }
                }
                e
            })
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .expect("d > 0");
        cols.push(next.normalize());
    }
}

/// Aligns `a` onto the centered copy of `b` with the best orthogonal map
/// (reflections allowed) and translation.
pub fn procrustes_align(a: &PointCloud, b: &PointCloud) -> Result<Alignment> {
    if a.n() != b.n() || a.dim() != b.dim() {
        return Err(EdgError::Shape(format!(
            "cannot align {}x{} cloud onto {}x{} cloud",
            a.n(),
            a.dim(),
            b.n(),
            b.dim()
        )));
    }
    let ac = center_columns(a.coords());
    let bc = center_columns(b.coords());
    let q = orthogonal_polar(&(ac.transpose() * &bc));
    let aligned = ac * q;
    let rmsd = ((&aligned - &bc).norm_squared() / a.n() as f64).sqrt();
    Ok(Alignment {
        aligned: PointCloud::new(aligned)?,
        rmsd,
    })
}

/// `‖X − M‖_F / ‖M‖_F`.
pub fn relative_gram_error(x: &GramMatrix, m: &GramMatrix) -> Result<f64> {
    if x.n() != m.n() {
        return Err(EdgError::Shape(format!(
            "Gram matrices differ in size: {} vs {}",
            x.n(),
            m.n()
        )));
    }
    let denom = m.values().norm();
    if denom == 0.0 {
        return Err(EdgError::ZeroReference);
    }
    Ok((x.values() - m.values()).norm() / denom)
}

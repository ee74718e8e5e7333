//! Dense helpers shared by the geometry, basis and coherence modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EdgError, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Each eigenvector is oriented so its first component with magnitude above
/// `1e-12` is positive, which makes embeddings reproducible across runs.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn symmetric_eigen(a: &DMatrix<f64>) -> SortedEigen {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });

    let rows = eig.eigenvectors.nrows();
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(rows, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(dst, &col);
    }
    SortedEigen { values, vectors }
}

/// `J A J` with `J = I - 11ᵀ/n`.
pub fn double_center(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let row_means: DVector<f64> = a.column_mean();
    let col_means = a.row_mean();
    let grand = a.mean();
    DMatrix::from_fn(n, n, |i, j| a[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Subtracts the column means, i.e. returns `J P`.
pub fn center_columns(p: &DMatrix<f64>) -> DMatrix<f64> {
    let means = p.row_mean();
    let mut out = p.clone();
    for mut row in out.row_iter_mut() {
        row -= &means;
    }
    out
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn ensure_square(a: &DMatrix<f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(EdgError::Shape(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

pub(crate) fn ensure_finite(a: &DMatrix<f64>) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(EdgError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

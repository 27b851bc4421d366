//! Small dense helpers shared by the learners.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Norm below which a vector is treated as having no direction.
pub const EPS_NORM: f64 = 1e-9;

pub fn unit(v: &DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    if n < EPS_NORM || !n.is_finite() {
        None
    } else {
        Some(v / n)
    }
}

/// Cosine similarity; `None` when either side is degenerate.
pub fn cosine(u: &DVector<f64>, v: &DVector<f64>) -> Option<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu < EPS_NORM || nv < EPS_NORM {
        return None;
    }
    Some(u.dot(v) / (nu * nv))
}

/// Gradient of `cos(u, v)` with respect to `u`.
pub fn cosine_grad(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu < EPS_NORM || nv < EPS_NORM {
        return DVector::zeros(u.len());
    }
    let c = u.dot(v) / (nu * nv);
    v / (nu * nv) - u * (c / (nu * nu))
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

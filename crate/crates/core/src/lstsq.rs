//! Dense least squares through Householder QR.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold on `|R_jj|` below which a column counts as dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: Vec<f64>,
    /// Residual sum of squares.
    pub ssr: f64,
}

/// Solve `min ||A b - y||²` for a tall design `A` (rows ≥ columns).
///
/// Returns [`Error::SingularDesign`] when `A` is numerically rank deficient.
pub fn solve(design: DMatrix<f64>, y: &[f64]) -> Result<LeastSquares> {
    let (rows, cols) = design.shape();
    if rows < cols || y.len() != rows {
        return Err(Error::SingularDesign);
    }
    let qr = design.qr();
    let r = qr.r();
    let max_diag = (0..cols).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if !(max_diag > 0.0) || (0..cols).any(|j| r[(j, j)].abs() <= RANK_TOL * max_diag) {
        return Err(Error::SingularDesign);
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let head = qty.rows(0, cols).into_owned();
    let coef = r.solve_upper_triangular(&head).ok_or(Error::SingularDesign)?;
    let ssr = qty.rows(cols, rows - cols).norm_squared();
    if !coef.iter().all(|c| c.is_finite()) {
        return Err(Error::SingularDesign);
    }
    Ok(LeastSquares {
        coef: coef.iter().copied().collect(),
        ssr,
    })
}

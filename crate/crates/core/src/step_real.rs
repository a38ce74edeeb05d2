//! Assignment of a real pole: the leading column, the constraint matrix
//! `M_{j+1}`, and the per-step minimization of the new strictly upper column.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matcore::{self, RealMatrix};
use crate::model::{PartialSchur, SystemPair};

/// Smallest admissible top eigenvalue of `S1^T S1`.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RealStepResult {
    pub x_next: DVector<f64>,
    pub v_next: DVector<f64>,
    /// `||v_next||^2`.
    pub objective: f64,
    pub subspace_dim: usize,
    /// Largest eigenvalue of `S1^T S1`.
    pub top_eigenvalue: f64,
}

/// Orthonormal basis of `N(Q2^T (A - lambda I))`.
pub fn leading_basis(sys: &SystemPair, lambda: f64, tol: Option<f64>) -> Result<RealMatrix> {
    let n = sys.n();
    let shifted = &sys.a - RealMatrix::identity(n, n) * lambda;
    matcore::null_basis(&(sys.q2.transpose() * shifted), tol)
}

/// `x1 = S c / ||S c||` for a coefficient vector `c`; the default is all ones.
pub fn leading_column(basis: &RealMatrix, coeffs: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let r = basis.ncols();
    let ones = DVector::from_element(r, 1.0);
    let c = coeffs.unwrap_or(&ones);
    if c.len() != r {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a {}-dimensional basis",
            c.len(),
            r
        )));
    }
    let x = basis * c;
    let norm = x.norm();
    if norm <= DEGENERACY_FLOOR * c.norm() {
        // the summed basis cancelled; fall back to the first basis vector
        return Ok(basis.column(0).into_owned());
    }
    Ok(x / norm)
}

/// Leading unit column for a real first pole.
pub fn init_real(sys: &SystemPair, lambda: f64) -> Result<DVector<f64>> {
    leading_column(&leading_basis(sys, lambda, None)?, None)
}

/// `M = [[Q2^T (A - lambda I), -Q2^T X_j], [X_j^T, 0]]`.
pub fn build_m_real(sys: &SystemPair, partial: &PartialSchur, lambda: f64) -> RealMatrix {
    let n = sys.n();
    let j = partial.j();
    let k = sys.q2.ncols();
    let mut m = RealMatrix::zeros(k + j, n + j);
    let shifted = &sys.a - RealMatrix::identity(n, n) * lambda;
    m.view_mut((0, 0), (k, n))
        .copy_from(&(sys.q2.transpose() * shifted));
    m.view_mut((0, n), (k, j))
        .copy_from(&(-(sys.q2.transpose() * &partial.x)));
    m.view_mut((k, 0), (j, n)).copy_from(&partial.x.transpose());
    m
}

/// Minimizes `||v||` over unit `x` with `M [x; v] = 0`.
///
/// With `S = [S1; S2]` an orthonormal null basis, `S2^T S2 = I - S1^T S1`,
/// so the minimizer is the top eigenvector `y` of `S1^T S1` scaled to
/// `y^T S1^T S1 y = 1`, and the objective is `1/theta_max - 1`.
pub fn solve_real_step(
    sys: &SystemPair,
    partial: &PartialSchur,
    lambda: f64,
    tol: Option<f64>,
) -> Result<RealStepResult> {
    let n = sys.n();
    let j = partial.j();
    let basis = matcore::null_basis(&build_m_real(sys, partial, lambda), tol)?;
    let r = basis.ncols();
    let s1 = basis.rows(0, n);
    let s2 = basis.rows(n, j);
    let gram = s1.transpose() * s1;
    let eig = matcore::sym_eig(&gram)?;
    let top = eig.values[0];
    if top <= DEGENERACY_FLOOR {
        return Err(Error::DegenerateDirection {
            step: j,
            value: top,
        });
    }
    let y = eig.vectors.column(0) / top.sqrt();
    let x_next = s1 * &y;
    let v_next = s2 * &y;
    // renormalize away the rounding in sqrt(top)
    let xn = x_next.norm();
    let x_next = x_next / xn;
    let v_next = v_next / xn;
    let objective = v_next.norm_squared();
    Ok(RealStepResult {
        x_next,
        v_next,
        objective,
        subspace_dim: r,
        top_eigenvalue: top,
    })
}

/// Appends the step result: `X <- [X x]`, `T <- [[T v],[0 lambda]]`.
pub fn update_real(partial: &PartialSchur, result: &RealStepResult, lambda: f64) -> Result<PartialSchur> {
    let next = partial.push_real(&result.x_next, &result.v_next, lambda, result.objective);
    let residual = next.orthonormality_residual();
    if residual > 1e-8 * next.j() as f64 {
        return Err(Error::OrthogonalityLoss {
            step: partial.j(),
            residual,
        });
    }
    Ok(next)
}

//! Dense factorization and subspace kernels.
//!
//! Matrices are `nalgebra` types; the spectral decompositions run on
//! `faer`. The wrappers pin down the conventions the pole assignment steps
//! rely on: singular and eigen values always come out in
//! nonincreasing order, vectors get a deterministic phase, and null spaces
//! are returned as orthonormal bases with an explicit rank tolerance.

use nalgebra::{ComplexField, DMatrix, DVector, QR};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;
pub type ComplexMatrix = DMatrix<Complex64>;

/// Scalar types the kernels accept: `f64` and `Complex64`.
pub trait Field: ComplexField<RealField = f64> + faer::traits::ComplexField + Copy {}
impl<T: ComplexField<RealField = f64> + faer::traits::ComplexField + Copy> Field for T {}

fn to_faer<T: Field>(m: &DMatrix<T>) -> faer::Mat<T> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer<T: Field>(m: faer::MatRef<'_, T>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Entries below this fraction of a column's largest magnitude are skipped
/// when choosing the entry that fixes the column phase.
const PHASE_PIVOT_REL: f64 = 1e-10;

/// `B = Q1 R` together with an orthonormal complement `Q2` of `range(B)`.
#[derive(Debug, Clone)]
pub struct ThinQr {
    pub q1: RealMatrix,
    pub q2: RealMatrix,
    pub r: RealMatrix,
}

/// Singular value decomposition `M = left * diag(singular_values) * right^H`.
#[derive(Debug, Clone)]
pub struct SvdResult<T: Field> {
    pub left: DMatrix<T>,
    pub singular_values: Vec<f64>,
    pub right: DMatrix<T>,
}

/// Spectral decomposition of a real symmetric matrix, values nonincreasing.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: RealMatrix,
}

pub fn check_finite<T: Field>(m: &DMatrix<T>) -> Result<()> {
    if m.iter().all(|x| x.real().is_finite() && x.imaginary().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Default numerical-rank tolerance relative to the largest singular value.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

/// Thin QR of a full column rank `n x m` matrix, with positive diagonal in `R`.
pub fn qr_thin(b: &RealMatrix) -> Result<ThinQr> {
    check_finite(b)?;
    let (n, m) = b.shape();
    if m > n {
        return Err(Error::DimensionMismatch(format!(
            "B is {n}x{m}; need at most as many columns as rows"
        )));
    }
    if m == 0 {
        return Err(Error::DimensionMismatch("B has no columns".into()));
    }
    let sv = svd(b)?.singular_values;
    let smallest = sv[m - 1];
    let threshold = default_rank_tol(n, m) * sv[0];
    if sv[0] == 0.0 || smallest <= threshold {
        return Err(Error::RankDeficientInput {
            smallest,
            threshold,
        });
    }

    // Padding with zero columns makes nalgebra return the full n x n factor.
    let mut padded = RealMatrix::zeros(n, n);
    padded.columns_mut(0, m).copy_from(b);
    let qr = QR::new(padded);
    let mut q = qr.q();
    let mut r = qr.r().view((0, 0), (m, m)).into_owned();
    for i in 0..m {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    let q1 = q.columns(0, m).into_owned();
    let q2 = q.columns(m, n - m).into_owned();
    Ok(ThinQr { q1, q2, r })
}

/// Multiply column `j` by a unit scalar so its first significant entry is
/// real and nonnegative. Returns the unit scalar used.
fn fix_column_phase<T: Field>(m: &mut DMatrix<T>, j: usize) -> T {
    let col = m.column(j);
    let big = col.iter().map(|x| x.modulus()).fold(0.0, f64::max);
    if big == 0.0 {
        return T::one();
    }
    let pivot = col
        .iter()
        .find(|x| x.modulus() > PHASE_PIVOT_REL * big)
        .copied()
        .unwrap_or_else(T::one);
    let phase = pivot.signum().conjugate();
    for x in m.column_mut(j).iter_mut() {
        *x *= phase;
    }
    phase
}

fn faer_thin_svd<T: Field>(m: &DMatrix<T>) -> Option<(DMatrix<T>, Vec<f64>, DMatrix<T>)> {
    let dec = to_faer(m).thin_svd().ok()?;
    let diag = dec.S().column_vector();
    let sv = (0..m.nrows().min(m.ncols()))
        .map(|i| ComplexField::real(diag[i]))
        .collect();
    Some((from_faer(dec.U()), sv, from_faer(dec.V())))
}

/// The bidiagonal QR sweep occasionally stalls on an unlucky input. The
/// adjoint, or a copy scaled by a power of two, has the same singular
/// triplets and usually converges.
fn thin_svd_with_retry<T: Field>(m: &DMatrix<T>) -> Result<(DMatrix<T>, Vec<f64>, DMatrix<T>)> {
    if let Some(dec) = faer_thin_svd(m) {
        return Ok(dec);
    }
    log::debug!("SVD of {}x{} stalled, retrying on the adjoint", m.nrows(), m.ncols());
    if let Some((u, sv, v)) = faer_thin_svd(&m.adjoint()) {
        return Ok((v, sv, u));
    }
    for e in [3, -3, 7, -7] {
        let f = 2f64.powi(e);
        if let Some((u, sv, v)) = faer_thin_svd(&m.map(|x| x * T::from_real(f))) {
            return Ok((u, sv.into_iter().map(|s| s / f).collect(), v));
        }
    }
    Err(Error::NoConvergence("SVD"))
}

/// Thin SVD with singular values sorted nonincreasing.
///
/// Left singular vectors carry the phase convention; right vectors are
/// adjusted so the product still reconstructs `m`.
pub fn svd<T: Field>(m: &DMatrix<T>) -> Result<SvdResult<T>> {
    check_finite(m)?;
    let (p, q) = m.shape();
    let k = p.min(q);
    if k == 0 {
        return Ok(SvdResult {
            left: DMatrix::zeros(p, 0),
            singular_values: Vec::new(),
            right: DMatrix::zeros(q, 0),
        });
    }
    let (mut left, singular_values, mut right) = thin_svd_with_retry(m)?;
    for j in 0..k {
        let phase = fix_column_phase(&mut left, j);
        for x in right.column_mut(j).iter_mut() {
            *x *= phase;
        }
    }
    Ok(SvdResult {
        left,
        singular_values,
        right,
    })
}

/// All `q` singular values and a full `q x q` unitary set of right vectors
/// of a `p x q` matrix. Missing singular values (when `p < q`) are zero.
pub fn full_right_svd<T: Field>(m: &DMatrix<T>) -> Result<(Vec<f64>, DMatrix<T>)> {
    let (p, q) = m.shape();
    if q == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let mut padded = DMatrix::<T>::zeros(p.max(q), q);
    padded.rows_mut(0, p).copy_from(m);
    let dec = svd(&padded)?;
    Ok((dec.singular_values, dec.right))
}

/// Numerical rank with threshold `tol * sigma_max`.
pub fn numerical_rank<T: Field>(m: &DMatrix<T>, tol: Option<f64>) -> Result<usize> {
    let sv = svd(m)?.singular_values;
    let tol = tol.unwrap_or_else(|| default_rank_tol(m.nrows(), m.ncols()));
    Ok(match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > tol * top).count(),
        _ => 0,
    })
}

/// Orthonormal basis of the null space of `m` (a `q x r` matrix).
///
/// Singular values at or below `tol * sigma_max` count as zero; `tol`
/// defaults to `max(p, q) * eps`. A matrix with no rows has the whole
/// space as null space.
pub fn null_basis<T: Field>(m: &DMatrix<T>, tol: Option<f64>) -> Result<DMatrix<T>> {
    check_finite(m)?;
    let (p, q) = m.shape();
    if q == 0 {
        return Err(Error::EmptyNullSpace);
    }
    if p == 0 {
        return Ok(DMatrix::identity(q, q));
    }
    let tol = tol.unwrap_or_else(|| default_rank_tol(p, q));
    let (sv, v) = full_right_svd(m)?;
    let top = sv[0];
    let rank = if top > 0.0 {
        sv.iter().filter(|&&s| s > tol * top).count()
    } else {
        0
    };
    if rank == q {
        return Err(Error::EmptyNullSpace);
    }
    let mut basis = v.columns(rank, q - rank).into_owned();
    for j in 0..basis.ncols() {
        fix_column_phase(&mut basis, j);
    }
    Ok(basis)
}

/// Eigendecomposition of a symmetric matrix, eigenvalues nonincreasing.
///
/// The input is symmetrized first. Ties keep the solver's native order.
pub fn sym_eig(h: &RealMatrix) -> Result<SymEig> {
    check_finite(h)?;
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "symmetric eigenproblem needs a square matrix, got {}x{}",
            n,
            h.ncols()
        )));
    }
    if n == 0 {
        return Ok(SymEig {
            values: Vec::new(),
            vectors: RealMatrix::zeros(0, 0),
        });
    }
    let sym = (h + h.transpose()) * 0.5;
    let dec = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::NoConvergence("symmetric eigensolver"))?;
    // ascending from the solver; reverse for nonincreasing order
    let diag = dec.S().column_vector();
    let u = dec.U();
    let values = (0..n).rev().map(|i| diag[i]).collect();
    let mut vectors = RealMatrix::zeros(n, n);
    for dst in 0..n {
        let src = n - 1 - dst;
        for i in 0..n {
            vectors[(i, dst)] = u[(i, src)];
        }
        fix_column_phase(&mut vectors, dst);
    }
    Ok(SymEig { values, vectors })
}

/// Diagonal similarity scaling that evens out row and column norms
/// (powers of two, so the scaling itself is exact).
fn balance(m: &mut RealMatrix) {
    let n = m.nrows();
    let radix = 2.0_f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            while cc < r / radix {
                cc *= radix;
                f *= radix;
            }
            while cc >= r * radix {
                cc /= radix;
                f /= radix;
            }
            let cr = cc + r / f;
            if cr < 0.95 * s {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                    m[(j, i)] *= f;
                }
            }
        }
    }
}

/// Eigenvalues of a general real matrix, computed after balancing.
pub fn eigenvalues(m: &RealMatrix) -> Result<Vec<Complex64>> {
    check_finite(m)?;
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch("eigenvalues need a square matrix".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut work = m.clone();
    balance(&mut work);
    to_faer(&work)
        .eigenvalues()
        .map_err(|_| Error::NoConvergence("eigenvalue iteration"))
}

/// Real and imaginary parts of a complex matrix.
pub fn split_complex(m: &ComplexMatrix) -> (RealMatrix, RealMatrix) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

pub fn complexify(re: &RealMatrix, im: &RealMatrix) -> ComplexMatrix {
    re.zip_map(im, Complex64::new)
}

pub fn to_complex(m: &RealMatrix) -> ComplexMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn re_vec(v: &DVector<Complex64>) -> DVector<f64> {
    v.map(|z| z.re)
}

pub fn im_vec(v: &DVector<Complex64>) -> DVector<f64> {
    v.map(|z| z.im)
}

/// `|| M^T M - I ||_F` for the columns of `m`.
pub fn orthonormality_residual(m: &RealMatrix) -> f64 {
    let k = m.ncols();
    (m.transpose() * m - RealMatrix::identity(k, k)).norm()
}

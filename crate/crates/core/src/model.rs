//! Data carried between the assignment steps: the open-loop system, the
//! canonical pole list, the partially built Schur pair and the final solution.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, RealMatrix};

/// Relative tolerance used to match a complex pole with its conjugate.
pub const CONJUGATE_MATCH_TOL: f64 = 1e-10;

/// Open-loop pair `(A, B)` with the QR factors of `B` cached.
#[derive(Debug, Clone)]
pub struct SystemPair {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub q1: RealMatrix,
    pub q2: RealMatrix,
    pub r_factor: RealMatrix,
    /// Rank of the controllability matrix `[B AB ... A^{n-1}B]`.
    pub controllability_rank: usize,
}

impl SystemPair {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Builds a [`SystemPair`], rejecting rank-deficient `B` and uncontrollable pairs.
pub fn new_system(a: RealMatrix, b: RealMatrix) -> Result<SystemPair> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows, A has {}",
            b.nrows(),
            n
        )));
    }
    matcore::check_finite(&a)?;
    let qr = matcore::qr_thin(&b).map_err(|e| match e {
        Error::RankDeficientInput { .. } => Error::RankDeficientB,
        other => other,
    })?;
    let rank = controllability_rank(&a, &qr.q1)?;
    if rank < n {
        return Err(Error::NotControllable { rank, n });
    }
    Ok(SystemPair {
        a,
        b,
        q1: qr.q1,
        q2: qr.q2,
        r_factor: qr.r,
        controllability_rank: rank,
    })
}

/// Rank of `[B AB ... A^{n-1}B]` given an orthonormal basis `q1` of `range(B)`.
///
/// The Krylov blocks are orthogonalized as they are generated, so the rank
/// decision does not suffer from the growth of `A^k`.
pub fn controllability_rank(a: &RealMatrix, q1: &RealMatrix) -> Result<usize> {
    let n = a.nrows();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    let mut basis = q1.clone();
    let mut frontier = q1.clone();
    while basis.ncols() < n && frontier.ncols() > 0 {
        let mut cand = a * &frontier;
        for _ in 0..2 {
            let proj = &basis * (basis.transpose() * &cand);
            cand -= proj;
        }
        let dec = matcore::svd(&cand)?;
        let keep = dec.singular_values.iter().filter(|&&s| s > tol).count();
        let keep = keep.min(n - basis.ncols());
        if keep == 0 {
            break;
        }
        frontier = dec.left.columns(0, keep).into_owned();
        let k = basis.ncols();
        basis = basis.resize_horizontally(k + keep, 0.0);
        basis.columns_mut(k, keep).copy_from(&frontier);
    }
    Ok(basis.ncols())
}

/// One entry of a canonical pole list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pole {
    Real(f64),
    /// The conjugate pair `re ± i·im` with `im > 0`.
    Pair { re: f64, im: f64 },
}

impl Pole {
    pub fn dim(&self) -> usize {
        match self {
            Pole::Real(_) => 1,
            Pole::Pair { .. } => 2,
        }
    }
}

/// Ordered, self-conjugate pole list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleSpec {
    pub items: Vec<Pole>,
}

impl PoleSpec {
    /// Number of scalar poles.
    pub fn len(&self) -> usize {
        self.items.iter().map(Pole::dim).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Scalar poles, each pair written as `re + i·im, re - i·im`.
    pub fn expand(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.len());
        for p in &self.items {
            match *p {
                Pole::Real(x) => out.push(Complex64::new(x, 0.0)),
                Pole::Pair { re, im } => {
                    out.push(Complex64::new(re, im));
                    out.push(Complex64::new(re, -im));
                }
            }
        }
        out
    }

    pub fn has_pairs(&self) -> bool {
        self.items.iter().any(|p| matches!(p, Pole::Pair { .. }))
    }
}

fn is_real_value(z: Complex64) -> bool {
    z.im == 0.0 || z.im.abs() <= CONJUGATE_MATCH_TOL * z.norm()
}

/// Groups a raw complex list into real poles and conjugate pairs, keeping
/// the order of first occurrence.
pub fn canonicalize_poles(raw: &[Complex64]) -> Result<PoleSpec> {
    if raw.is_empty() {
        return Err(Error::DimensionMismatch("empty pole list".into()));
    }
    if raw.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut used = vec![false; raw.len()];
    let mut items = Vec::new();
    for i in 0..raw.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let z = raw[i];
        if is_real_value(z) {
            items.push(Pole::Real(z.re));
            continue;
        }
        let scale = z.norm();
        let partner = (i + 1..raw.len()).find(|&k| {
            !used[k]
                && (raw[k].re - z.re).abs() <= CONJUGATE_MATCH_TOL * scale
                && (raw[k].im + z.im).abs() <= CONJUGATE_MATCH_TOL * scale
        });
        match partner {
            Some(k) => {
                used[k] = true;
                items.push(Pole::Pair {
                    re: z.re,
                    im: z.im.abs(),
                });
            }
            None => return Err(Error::UnmatchedConjugate { index: i, value: z }),
        }
    }
    Ok(PoleSpec { items })
}

/// Diagonal block shape of a quasi-triangular matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    One,
    Two,
}

impl Block {
    pub fn size(self) -> usize {
        match self {
            Block::One => 1,
            Block::Two => 2,
        }
    }
}

/// The leading `j` columns of `X` and the leading `j x j` block of `T`.
#[derive(Debug, Clone)]
pub struct PartialSchur {
    pub x: RealMatrix,
    pub t: RealMatrix,
    pub blocks: Vec<Block>,
    /// Running sum of the per-step contributions to the squared departure.
    pub dep_sq_accum: f64,
}

impl PartialSchur {
    pub fn empty(n: usize) -> Self {
        Self {
            x: RealMatrix::zeros(n, 0),
            t: RealMatrix::zeros(0, 0),
            blocks: Vec::new(),
            dep_sq_accum: 0.0,
        }
    }

    /// Number of assigned columns.
    pub fn j(&self) -> usize {
        self.x.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Appends one real-pole column: `X <- [X x]`, `T <- [[T v],[0 lambda]]`.
    pub fn push_real(&self, x: &DVector<f64>, v: &DVector<f64>, lambda: f64, increment: f64) -> Self {
        let j = self.j();
        let mut xm = self.x.clone().resize_horizontally(j + 1, 0.0);
        xm.set_column(j, x);
        let mut t = self.t.clone().resize(j + 1, j + 1, 0.0);
        t.view_mut((0, j), (j, 1)).copy_from(v);
        t[(j, j)] = lambda;
        let mut blocks = self.blocks.clone();
        blocks.push(Block::One);
        Self {
            x: xm,
            t,
            blocks,
            dep_sq_accum: self.dep_sq_accum + increment,
        }
    }

    /// Appends two columns for a conjugate pair with the given 2x2 diagonal block.
    pub fn push_pair(
        &self,
        cols: [&DVector<f64>; 2],
        v: [&DVector<f64>; 2],
        block: [[f64; 2]; 2],
        increment: f64,
    ) -> Self {
        let j = self.j();
        let mut xm = self.x.clone().resize_horizontally(j + 2, 0.0);
        xm.set_column(j, cols[0]);
        xm.set_column(j + 1, cols[1]);
        let mut t = self.t.clone().resize(j + 2, j + 2, 0.0);
        t.view_mut((0, j), (j, 1)).copy_from(v[0]);
        t.view_mut((0, j + 1), (j, 1)).copy_from(v[1]);
        for (r, row) in block.iter().enumerate() {
            for (c, &val) in row.iter().enumerate() {
                t[(j + r, j + c)] = val;
            }
        }
        let mut blocks = self.blocks.clone();
        blocks.push(Block::Two);
        Self {
            x: xm,
            t,
            blocks,
            dep_sq_accum: self.dep_sq_accum + increment,
        }
    }

    pub fn orthonormality_residual(&self) -> f64 {
        matcore::orthonormality_residual(&self.x)
    }

    /// `|| Q2^T (A X_j - X_j T_j) ||_F`.
    pub fn constraint_residual(&self, sys: &SystemPair) -> f64 {
        let r = &sys.a * &self.x - &self.x * &self.t;
        (sys.q2.transpose() * r).norm()
    }

    /// True when `T` is zero below the diagonal outside the 2x2 blocks.
    pub fn is_quasi_triangular(&self) -> bool {
        is_quasi_triangular(&self.t, &self.blocks)
    }
}

/// Structural check: entries below the block diagonal are exactly zero.
pub fn is_quasi_triangular(t: &RealMatrix, blocks: &[Block]) -> bool {
    let n = t.nrows();
    if blocks.iter().map(|b| b.size()).sum::<usize>() != n {
        return false;
    }
    let mut start = 0;
    for b in blocks {
        let end = start + b.size();
        for c in start..end {
            for r in end..n {
                if t[(r, c)] != 0.0 {
                    return false;
                }
            }
        }
        start = end;
    }
    true
}

/// Which rule produced the columns of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Leading real pole, `x1` from the summed null-space basis.
    InitReal,
    /// Leading pair, orthonormal columns with a balanced block.
    InitBalanced,
    /// Leading pair with a one-dimensional null space: Jacobi fallback.
    InitJacobi,
    /// Real pole after the first column.
    Real,
    /// Pair step, Jacobi orthogonalization of the leading direction.
    Jacobi,
    /// Pair step, balanced combination of the two leading directions.
    Balanced,
    /// Pair step with the unit block scaling and no orthogonalization.
    Baseline,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Index of the first column produced by this step.
    pub column: usize,
    pub strategy: Strategy,
    /// Dimension of the null space the step worked in.
    pub subspace_dim: usize,
    /// Contribution of this step to the squared departure from normality.
    pub objective: f64,
    /// Objective of the Jacobi candidate, `None` when rejected or not tried.
    pub dep1: Option<f64>,
    /// Objective of the balanced candidate, `None` when unavailable.
    pub dep2: Option<f64>,
    /// Upper bound the Jacobi candidate must respect.
    pub dep1_bound: Option<f64>,
    /// Upper bound the balanced candidate must respect.
    pub dep2_bound: Option<f64>,
}

/// Result of a full assignment.
#[derive(Debug, Clone)]
pub struct FeedbackSolution {
    pub f: RealMatrix,
    pub x: RealMatrix,
    pub t: RealMatrix,
    pub blocks: Vec<Block>,
    pub step_log: Vec<StepRecord>,
    /// False when `X` was built without orthogonalizing pair columns.
    pub orthogonal: bool,
    /// Sum of the per-step objectives.
    pub dep_sq_accum: f64,
}

/// Robustness and consistency figures for one solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Departure from normality of `A + BF`.
    pub dep: f64,
    /// Frobenius condition number of the eigenvector matrix; `None` when
    /// the eigenvector matrix is numerically singular.
    pub cond_x: Option<f64>,
    pub precs: i32,
    /// `|| (A + BF) X - X T ||_F`.
    pub schur_residual: f64,
    /// `|| X^T X - I ||_F`.
    pub orth_residual: f64,
    /// `|| Q2^T (A X - X T) ||_F`.
    pub constraint_residual: f64,
    /// `| dep^2 - (||N||_F^2 + sum (delta - 1/delta)^2 beta^2) | / (1 + dep^2)`.
    pub dep_identity_gap: f64,
    /// True when `||A_c||_F^2 - sum |lambda|^2` came out negative and was clamped.
    pub dep_clamped: bool,
    /// `1 + ||A||_F + ||T||_F`, the scale the residuals are judged against.
    pub residual_scale: f64,
}

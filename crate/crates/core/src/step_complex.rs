//! Assignment of a conjugate pole pair `alpha ± i·beta`.
//!
//! Every admissible pair of new columns comes from the null space of the
//! complex constraint matrix `M_{j+1}`: a null vector `[z; w]` gives columns
//! `Re z, Im z` of `X` and `Re w, Im w` of `T`. Two suboptimal rules pick
//! `z` so that the columns are orthogonal:
//!
//! * the Jacobi rule takes the leading left singular vector `u1` of `S1`
//!   and rotates its real and imaginary parts into an orthogonal pair, at
//!   the price of a skewed diagonal block (`delta != 1`);
//! * the balanced rule combines `u1` and `u2` with coefficients from the
//!   spectral frame of a symmetric Hamiltonian matrix so that the two
//!   columns come out orthogonal with equal norms (`delta = 1`).
//!
//! Both candidates are scored with the pair-step objective
//! `||d1 v_a||^2 + ||d2 v_b||^2 + beta^2 (delta - 1/delta)^2` and the
//! smaller one is kept.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use nalgebra::{DVector, Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matcore::{self, ComplexMatrix, RealMatrix, SvdResult};
use crate::model::{PartialSchur, Strategy, StepRecord, SystemPair};

/// Reject the Jacobi candidate when `min(||x_a||, ||x_b||) < SMALL_COLUMN_FLOOR * ||z||`.
pub const SMALL_COLUMN_FLOOR: f64 = 1e-6;
/// `[Re z, Im z]` counts as rank deficient below this singular value ratio.
pub const DEPENDENCE_RATIO: f64 = 1e-8;
/// Below this, `phi1` (or `theta1`) is treated as zero.
pub const FRAME_FLOOR: f64 = 1e-12;
/// Singular values of `S1` below this cannot be normalized to unit `z`.
pub const SIGMA_FLOOR: f64 = 1e-12;

type CVector = DVector<Complex64>;

/// One admissible choice of the two new columns.
///
/// `x_a, x_b` are the unscaled columns (`delta1 = 1/||x_a||`,
/// `delta2 = 1/||x_b||`); the columns appended to `X` are `delta1 x_a`
/// and `delta2 x_b`.
#[derive(Debug, Clone)]
pub struct PairStepCandidate {
    pub strategy: Strategy,
    pub x_a: DVector<f64>,
    pub x_b: DVector<f64>,
    pub v_a: DVector<f64>,
    pub v_b: DVector<f64>,
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
    pub objective: f64,
    /// Upper bound the objective is guaranteed to respect.
    pub bound: f64,
}

impl PairStepCandidate {
    fn new(
        strategy: Strategy,
        x_a: DVector<f64>,
        x_b: DVector<f64>,
        v_a: DVector<f64>,
        v_b: DVector<f64>,
        beta: f64,
        bound: f64,
    ) -> Self {
        let delta1 = 1.0 / x_a.norm();
        let delta2 = 1.0 / x_b.norm();
        let delta = delta2 / delta1;
        let objective = pair_objective(&v_a, &v_b, delta1, delta2, beta);
        Self {
            strategy,
            x_a,
            x_b,
            v_a,
            v_b,
            delta1,
            delta2,
            delta,
            objective,
            bound,
        }
    }
}

/// `||d1 v_a||^2 + ||d2 v_b||^2 + beta^2 (d2/d1 - d1/d2)^2`.
pub fn pair_objective(v_a: &DVector<f64>, v_b: &DVector<f64>, d1: f64, d2: f64, beta: f64) -> f64 {
    let delta = d2 / d1;
    let skew = delta - 1.0 / delta;
    (v_a * d1).norm_squared() + (v_b * d2).norm_squared() + beta * beta * skew * skew
}

/// Why a strategy produced no candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    DependentParts,
    SmallColumn,
    SubspaceTooSmall,
    SmallSingularValue,
}

/// Output of [`jacobi_orthogonalize`].
#[derive(Debug, Clone)]
pub struct JacobiPair {
    pub x_a: DVector<f64>,
    pub x_b: DVector<f64>,
    pub v_a: DVector<f64>,
    pub v_b: DVector<f64>,
    pub c: f64,
    pub s: f64,
}

/// Rotates `[Re z, Im z]` (and `[Re w, Im w]` alongside) by the plane
/// rotation that makes the two real columns orthogonal.
///
/// The rotation multiplies `[z; w]` by a unit complex scalar, so the
/// rotated vectors still satisfy the linear step constraints.
pub fn jacobi_orthogonalize(z: &CVector, w: &CVector) -> Result<JacobiPair> {
    let x = matcore::re_vec(z);
    let y = matcore::im_vec(z);
    let mut parts = RealMatrix::zeros(x.len(), 2);
    parts.set_column(0, &x);
    parts.set_column(1, &y);
    let sv = matcore::svd(&parts)?.singular_values;
    if sv.len() < 2 || sv[0] == 0.0 || sv[1] <= DEPENDENCE_RATIO * sv[0] {
        return Err(Error::LinearlyDependentParts);
    }
    let rho1 = x.norm_squared();
    let rho2 = y.norm_squared();
    let gamma = x.dot(&y);
    let (c, s) = if gamma == 0.0 {
        (1.0, 0.0)
    } else {
        let tau = (rho2 - rho1) / (2.0 * gamma);
        let t = if tau >= 0.0 {
            1.0 / (tau + (1.0 + tau * tau).sqrt())
        } else {
            -1.0 / (-tau + (1.0 + tau * tau).sqrt())
        };
        let c = 1.0 / (1.0 + t * t).sqrt();
        (c, t * c)
    };
    let wr = matcore::re_vec(w);
    let wi = matcore::im_vec(w);
    Ok(JacobiPair {
        x_a: &x * c - &y * s,
        x_b: &x * s + &y * c,
        v_a: &wr * c - &wi * s,
        v_b: &wr * s + &wi * c,
        c,
        s,
    })
}

/// The shift `omega` with `||x_a||^2 = ||x||^2 - omega` and
/// `||x_b||^2 = ||y||^2 + omega` after the Jacobi rotation.
pub fn jacobi_norm_shift(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let g = x.dot(y);
    let d = y.norm_squared() - x.norm_squared();
    let root = (4.0 * g * g + d * d).sqrt();
    if g == 0.0 {
        return 0.0;
    }
    if x.norm() < y.norm() {
        2.0 * g * g / (d + root)
    } else {
        2.0 * g * g / (d - root)
    }
}

/// Null-space data shared by both strategies.
#[derive(Debug, Clone)]
pub struct PairSubspace {
    pub s1: ComplexMatrix,
    pub s2: ComplexMatrix,
    pub svd: SvdResult<Complex64>,
}

impl PairSubspace {
    pub fn dim(&self) -> usize {
        self.s1.ncols()
    }

    fn sigma(&self, k: usize) -> f64 {
        self.svd.singular_values[k]
    }

    /// `(u_k, w_k) = (S1 V e_k, S2 V e_k) / sigma_k`.
    pub fn direction(&self, k: usize) -> (CVector, CVector) {
        let u = self.svd.left.column(k).into_owned();
        let w = (&self.s2 * self.svd.right.column(k)) / Complex64::new(self.sigma(k), 0.0);
        (u, w)
    }

    /// `(1 - sigma_k^2) / sigma_k^2`, the squared norm of `w_k`.
    pub fn xi(&self, k: usize) -> f64 {
        let s = self.sigma(k);
        (1.0 - s * s) / (s * s)
    }
}

/// `M = [[Q2^T (A - (alpha + i beta) I), -Q2^T X_j], [X_j^T, 0]]`.
pub fn build_m_complex(sys: &SystemPair, partial: &PartialSchur, alpha: f64, beta: f64) -> ComplexMatrix {
    let n = sys.n();
    let j = partial.j();
    let k = sys.q2.ncols();
    let q2t = matcore::to_complex(&sys.q2.transpose());
    let mut shifted = matcore::to_complex(&sys.a);
    for i in 0..n {
        shifted[(i, i)] -= Complex64::new(alpha, beta);
    }
    let xj = matcore::to_complex(&partial.x);
    let mut m = ComplexMatrix::zeros(k + j, n + j);
    m.view_mut((0, 0), (k, n)).copy_from(&(&q2t * shifted));
    m.view_mut((0, n), (k, j)).copy_from(&(-(&q2t * &xj)));
    m.view_mut((k, 0), (j, n)).copy_from(&xj.transpose());
    m
}

/// Null basis of `M_{j+1}` split into `S1` (first `n` rows) and `S2`, plus the SVD of `S1`.
pub fn pair_subspace(
    sys: &SystemPair,
    partial: &PartialSchur,
    alpha: f64,
    beta: f64,
    tol: Option<f64>,
) -> Result<PairSubspace> {
    let n = sys.n();
    let j = partial.j();
    let basis = matcore::null_basis(&build_m_complex(sys, partial, alpha, beta), tol)?;
    let s1 = basis.rows(0, n).into_owned();
    let s2 = basis.rows(n, j).into_owned();
    let svd = matcore::svd(&s1)?;
    Ok(PairSubspace { s1, s2, svd })
}

/// Jacobi candidate built from the leading direction `u1`.
pub fn strategy_jacobi(sub: &PairSubspace, beta: f64) -> std::result::Result<PairStepCandidate, Rejection> {
    let sigma1 = sub.sigma(0);
    if sigma1 <= SIGMA_FLOOR {
        return Err(Rejection::SmallSingularValue);
    }
    let (z, w) = sub.direction(0);
    let pair = jacobi_orthogonalize(&z, &w).map_err(|_| Rejection::DependentParts)?;
    let na = pair.x_a.norm();
    let nb = pair.x_b.norm();
    if na.min(nb) < SMALL_COLUMN_FLOOR * z.norm() {
        return Err(Rejection::SmallColumn);
    }
    let smaller = na.min(nb).powi(2);
    let bound = (sub.xi(0) + beta * beta) / smaller;
    Ok(PairStepCandidate::new(
        Strategy::Jacobi,
        pair.x_a,
        pair.x_b,
        pair.v_a,
        pair.v_b,
        beta,
        bound,
    ))
}

/// Spectral frame of `I4 - 2 [Y X]^T [Y X]` for `X = [Re u1, Re u2]`,
/// `Y = [Im u1, Im u2]`, together with the weights entering `||w||^2`.
#[derive(Debug, Clone)]
pub struct HamiltonianFrame {
    pub omega: Matrix4<f64>,
    pub phi1: f64,
    pub phi2: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub zeta12: f64,
    pub zeta21: f64,
}

impl HamiltonianFrame {
    /// The symmetric matrix the frame diagonalizes: `Omega diag(phi1, phi2, -phi1, -phi2) Omega^T`.
    pub fn reassemble(&self) -> Matrix4<f64> {
        let d = Matrix4::from_diagonal(&Vector4::new(self.phi1, self.phi2, -self.phi1, -self.phi2));
        self.omega * d * self.omega.transpose()
    }
}

/// `[[X^T X - Y^T Y, -(X^T Y + Y^T X)], [-(X^T Y + Y^T X), Y^T Y - X^T X]]`.
pub fn length_form(xt: &RealMatrix, yt: &RealMatrix) -> Matrix4<f64> {
    let a = xt.transpose() * xt - yt.transpose() * yt;
    let b = -(xt.transpose() * yt + yt.transpose() * xt);
    let mut k = Matrix4::zeros();
    for r in 0..2 {
        for c in 0..2 {
            k[(r, c)] = a[(r, c)];
            k[(r, c + 2)] = b[(r, c)];
            k[(r + 2, c)] = b[(r, c)];
            k[(r + 2, c + 2)] = -a[(r, c)];
        }
    }
    k
}

/// Builds the frame from two orthonormal complex directions and the
/// singular values they came from.
pub fn hamiltonian_frame(u1: &CVector, u2: &CVector, sigma1: f64, sigma2: f64) -> Result<HamiltonianFrame> {
    let n = u1.len();
    let mut yx = RealMatrix::zeros(n, 4);
    yx.set_column(0, &matcore::im_vec(u1));
    yx.set_column(1, &matcore::im_vec(u2));
    yx.set_column(2, &matcore::re_vec(u1));
    yx.set_column(3, &matcore::re_vec(u2));
    let (sv, v) = matcore::full_right_svd(&yx)?;
    let phi_m = sv[3];
    let phi_big = sv[2];
    let first = Vector4::from_iterator(v.column(3).iter().copied());
    let mut second = Vector4::from_iterator(v.column(2).iter().copied());
    let rot = |u: &Vector4<f64>| Vector4::new(-u[2], -u[3], u[0], u[1]);
    // keep the frame orthogonal when the two eigenvalues collapse to zero
    let leak = rot(&first).dot(&second);
    if leak.abs() > 1e-12 {
        second -= rot(&first) * leak;
        second -= first * first.dot(&second);
        second /= second.norm();
    }
    let (p1, q1) = ([first[0], first[1]], [first[2], first[3]]);
    let (p2, q2) = ([second[0], second[1]], [second[2], second[3]]);
    #[rustfmt::skip]
    let omega = Matrix4::new(
        p1[0], p2[0], -q1[0], -q2[0],
        p1[1], p2[1], -q1[1], -q2[1],
        q1[0], q2[0],  p1[0],  p2[0],
        q1[1], q2[1],  p1[1],  p2[1],
    );
    let w1 = (1.0 - sigma1 * sigma1) / (sigma1 * sigma1);
    let w2 = (1.0 - sigma2 * sigma2) / (sigma2 * sigma2);
    let form = |a: [f64; 2], b: [f64; 2]| a[0] * w1 * b[0] + a[1] * w2 * b[1];
    Ok(HamiltonianFrame {
        omega,
        phi1: 1.0 - 2.0 * phi_m * phi_m,
        phi2: 1.0 - 2.0 * phi_big * phi_big,
        xi1: form(p1, p1),
        xi2: form(p2, p2),
        eta1: form(q1, q1),
        eta2: form(q2, q2),
        zeta12: form(q1, p2),
        zeta21: form(q2, p1),
    })
}

/// Coefficients `(mu1, mu2, nu1, nu2)` in the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Munu {
    pub mu1: f64,
    pub mu2: f64,
    pub nu1: f64,
    pub nu2: f64,
    /// True when `phi1` was below [`FRAME_FLOOR`] and the canonical
    /// normalization-only solution was returned.
    pub degenerate: bool,
}

impl Munu {
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.mu1, self.mu2, self.nu1, self.nu2)
    }
}

/// Which solution branch of the balancing equations to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `mu1 * nu2 <= 0`.
    NonPositive,
    /// `mu1 * nu2 > 0`.
    Positive,
}

/// Solves
/// `phi1 mu1 nu1 + phi2 mu2 nu2 = 0`,
/// `phi1 (mu1^2 - nu1^2) + phi2 (mu2^2 - nu2^2) = 0`,
/// `mu1^2 + mu2^2 + nu1^2 + nu2^2 = 1`
/// on the given branch with free parameter `nu2`
/// (`nu2^2 <= phi1 / (phi1 + phi2)`) and sign of `mu2`.
pub fn munu_on_branch(phi1: f64, phi2: f64, nu2: f64, branch: Branch, mu2_negative: bool) -> Munu {
    if phi1 <= FRAME_FLOOR {
        return Munu {
            mu1: 0.0,
            mu2: FRAC_1_SQRT_2,
            nu1: 0.0,
            nu2: FRAC_1_SQRT_2,
            degenerate: true,
        };
    }
    let sum = phi1 + phi2;
    let root = (phi2 / phi1).max(0.0).sqrt();
    let limit = (phi1 / sum).sqrt();
    let nu2 = nu2.clamp(-limit, limit);
    let mu2_abs = (phi1 / sum - nu2 * nu2).max(0.0).sqrt();
    let mu2 = if mu2_negative { -mu2_abs } else { mu2_abs };
    let (mu1, nu1) = match branch {
        Branch::NonPositive => (-root * nu2, root * mu2),
        Branch::Positive => (root * nu2, -root * mu2),
    };
    Munu {
        mu1,
        mu2,
        nu1,
        nu2,
        degenerate: false,
    }
}

/// Branch that gives the smaller `||w||`: `mu1 nu2 <= 0` when `zeta21 <= zeta12`.
pub fn preferred_branch(frame: &HamiltonianFrame) -> Branch {
    if frame.zeta21 <= frame.zeta12 {
        Branch::NonPositive
    } else {
        Branch::Positive
    }
}

/// Midpoint of the admissible range of `nu2`.
pub fn default_nu2(phi1: f64, phi2: f64) -> f64 {
    if phi1 + phi2 <= 0.0 {
        return FRAC_1_SQRT_2;
    }
    (phi1 / (2.0 * (phi1 + phi2))).sqrt()
}

/// Balanced coefficients with the preferred sign pattern and midpoint `nu2`.
pub fn solve_munu(frame: &HamiltonianFrame) -> Munu {
    munu_on_branch(
        frame.phi1,
        frame.phi2,
        default_nu2(frame.phi1, frame.phi2),
        preferred_branch(frame),
        false,
    )
}

/// Closed form of `||w||^2` on a branch, in terms of the frame weights.
pub fn w_norm_sq_closed_form(frame: &HamiltonianFrame, branch: Branch) -> f64 {
    let (p1, p2) = (frame.phi1, frame.phi2);
    let sum = p1 + p2;
    let cross = 2.0 * (p2 / p1).sqrt() * p1 / sum;
    let skew = match branch {
        Branch::NonPositive => frame.zeta21 - frame.zeta12,
        Branch::Positive => frame.zeta12 - frame.zeta21,
    };
    p2 / sum * (frame.xi1 + frame.eta1) + p1 / sum * (frame.xi2 + frame.eta2) + cross * skew
}

/// The balanced candidate together with the quantities it was built from.
#[derive(Debug, Clone)]
pub struct BalancedOutcome {
    pub candidate: PairStepCandidate,
    pub frame: HamiltonianFrame,
    pub munu: Munu,
    /// `(gamma1, gamma2, zeta1, zeta2) = Omega (mu1, mu2, nu1, nu2)`.
    pub coeffs: Vector4<f64>,
    /// `2 [(g1^2 + z1^2) xi_1 + (g2^2 + z2^2) xi_2]`.
    pub dep2_weighted: f64,
    /// `z = Re + i Im` before the final sqrt(2) scaling.
    pub z: CVector,
    pub w: CVector,
}

/// Balanced candidate for explicit coefficients.
pub fn balanced_from_munu(
    sub: &PairSubspace,
    frame: &HamiltonianFrame,
    munu: Munu,
    beta: f64,
) -> BalancedOutcome {
    let coeffs = frame.omega * munu.as_vector();
    let c1 = Complex64::new(coeffs[0], coeffs[2]);
    let c2 = Complex64::new(coeffs[1], coeffs[3]);
    let (u1, w1) = sub.direction(0);
    let (u2, w2) = sub.direction(1);
    let z = &u1 * c1 + &u2 * c2;
    let w = &w1 * c1 + &w2 * c2;
    let dep2_weighted = 2.0 * (c1.norm_sqr() * sub.xi(0) + c2.norm_sqr() * sub.xi(1));
    let bound = 2.0 * sub.xi(1);
    let candidate = PairStepCandidate::new(
        Strategy::Balanced,
        matcore::re_vec(&z),
        matcore::im_vec(&z),
        matcore::re_vec(&w),
        matcore::im_vec(&w),
        beta,
        bound,
    );
    BalancedOutcome {
        candidate,
        frame: frame.clone(),
        munu,
        coeffs,
        dep2_weighted,
        z,
        w,
    }
}

/// Balanced candidate combining `u1` and `u2`.
pub fn strategy_balanced(sub: &PairSubspace, beta: f64) -> std::result::Result<BalancedOutcome, Rejection> {
    if sub.dim() < 2 {
        return Err(Rejection::SubspaceTooSmall);
    }
    if sub.sigma(1) <= SIGMA_FLOOR {
        return Err(Rejection::SmallSingularValue);
    }
    let (u1, _) = sub.direction(0);
    let (u2, _) = sub.direction(1);
    let frame = hamiltonian_frame(&u1, &u2, sub.sigma(0), sub.sigma(1))
        .map_err(|_| Rejection::SmallSingularValue)?;
    let munu = solve_munu(&frame);
    Ok(balanced_from_munu(sub, &frame, munu, beta))
}

/// Appends the better candidate; ties go to the balanced one.
pub fn choose_and_update(
    partial: &PartialSchur,
    jacobi: Option<&PairStepCandidate>,
    balanced: Option<&PairStepCandidate>,
    alpha: f64,
    beta: f64,
) -> Result<(PartialSchur, Strategy)> {
    let dep1 = jacobi.map_or(f64::INFINITY, |c| c.objective);
    let dep2 = balanced.map_or(f64::INFINITY, |c| c.objective);
    let chosen = match (jacobi, balanced) {
        (None, None) => {
            return Err(Error::NoViableCandidate {
                step: partial.j(),
                alpha,
                beta,
            })
        }
        (Some(c), _) if dep1 < dep2 => c,
        (_, Some(c)) => c,
        (Some(c), None) => c,
    };
    let next = append_candidate(partial, chosen, alpha, beta);
    let residual = next.orthonormality_residual();
    if residual > 1e-8 * next.j() as f64 {
        return Err(Error::OrthogonalityLoss {
            step: partial.j(),
            residual,
        });
    }
    Ok((next, chosen.strategy))
}

fn append_candidate(partial: &PartialSchur, c: &PairStepCandidate, alpha: f64, beta: f64) -> PartialSchur {
    match c.strategy {
        Strategy::Balanced | Strategy::InitBalanced => partial.push_pair(
            [&(&c.x_a * SQRT_2), &(&c.x_b * SQRT_2)],
            [&(&c.v_a * SQRT_2), &(&c.v_b * SQRT_2)],
            [[alpha, beta], [-beta, alpha]],
            c.objective,
        ),
        _ => partial.push_pair(
            [&(&c.x_a * c.delta1), &(&c.x_b * c.delta2)],
            [&(&c.v_a * c.delta1), &(&c.v_b * c.delta2)],
            [[alpha, c.delta * beta], [-beta / c.delta, alpha]],
            c.objective,
        ),
    }
}

/// One pair step: both strategies, then the better of the two.
pub fn solve_pair_step(
    sys: &SystemPair,
    partial: &PartialSchur,
    alpha: f64,
    beta: f64,
    tol: Option<f64>,
) -> Result<(PartialSchur, StepRecord)> {
    let sub = pair_subspace(sys, partial, alpha, beta, tol)?;
    let jacobi = strategy_jacobi(&sub, beta).ok();
    let balanced = strategy_balanced(&sub, beta).ok().map(|b| b.candidate);
    let (next, strategy) = choose_and_update(partial, jacobi.as_ref(), balanced.as_ref(), alpha, beta)?;
    let objective = next.dep_sq_accum - partial.dep_sq_accum;
    let record = StepRecord {
        column: partial.j(),
        strategy,
        subspace_dim: sub.dim(),
        objective,
        dep1: jacobi.as_ref().map(|c| c.objective),
        dep2: balanced.as_ref().map(|c| c.objective),
        dep1_bound: jacobi.as_ref().map(|c| c.bound),
        dep2_bound: balanced.as_ref().map(|c| c.bound),
    };
    Ok((next, record))
}

/// Prior-method pair step: unit block scaling, `z = sqrt(2) u1`, and no
/// orthogonalization of the two new columns.
pub fn baseline_complex_step(
    sys: &SystemPair,
    partial: &PartialSchur,
    alpha: f64,
    beta: f64,
    tol: Option<f64>,
) -> Result<(PartialSchur, StepRecord)> {
    let sub = pair_subspace(sys, partial, alpha, beta, tol)?;
    let (z, w) = if partial.j() == 0 {
        // all singular values of S1 = S are one; take the first basis vector
        (sub.s1.column(0).into_owned(), CVector::zeros(0))
    } else {
        if sub.sigma(0) <= SIGMA_FLOOR {
            return Err(Error::NoViableCandidate {
                step: partial.j(),
                alpha,
                beta,
            });
        }
        sub.direction(0)
    };
    let z = z * Complex64::new(SQRT_2, 0.0);
    let w = w * Complex64::new(SQRT_2, 0.0);
    let v_a = matcore::re_vec(&w);
    let v_b = matcore::im_vec(&w);
    let objective = v_a.norm_squared() + v_b.norm_squared();
    let next = partial.push_pair(
        [&matcore::re_vec(&z), &matcore::im_vec(&z)],
        [&v_a, &v_b],
        [[alpha, beta], [-beta, alpha]],
        objective,
    );
    let record = StepRecord {
        column: partial.j(),
        strategy: Strategy::Baseline,
        subspace_dim: sub.dim(),
        objective,
        dep1: None,
        dep2: None,
        dep1_bound: None,
        dep2_bound: None,
    };
    Ok((next, record))
}

/// How to pick the leading pair of columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairStart {
    /// `mu1 = -nu1 = sqrt(theta2/theta1) mu2`, `mu2 = nu2`.
    Default,
    /// Another point of the same solution family.
    Family {
        nu2_fraction: f64,
        branch: Branch,
        mu2_negative: bool,
    },
}

/// Leading pair of orthonormal columns and its diagonal block.
#[derive(Debug, Clone)]
pub struct InitPair {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub block: [[f64; 2]; 2],
    pub strategy: Strategy,
    /// `beta^2 (delta - 1/delta)^2`; zero for the balanced construction.
    pub objective: f64,
    pub subspace_dim: usize,
    pub theta: Vec<f64>,
}

/// Symmetric Hamiltonian matrix `[[P, Q], [Q, -P]]` with
/// `P = Sr^T Si + Si^T Sr`, `Q = Sr^T Sr - Si^T Si`.
pub fn init_hamiltonian(s: &ComplexMatrix) -> RealMatrix {
    let (sr, si) = matcore::split_complex(s);
    let p = sr.transpose() * &si + si.transpose() * &sr;
    let q = sr.transpose() * &sr - si.transpose() * &si;
    block_hamiltonian(&p, &q)
}

/// `[[a, b], [b, -a]]`.
pub fn block_hamiltonian(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
    let r = a.nrows();
    let mut h = RealMatrix::zeros(2 * r, 2 * r);
    h.view_mut((0, 0), (r, r)).copy_from(a);
    h.view_mut((0, r), (r, r)).copy_from(b);
    h.view_mut((r, 0), (r, r)).copy_from(b);
    h.view_mut((r, r), (r, r)).copy_from(&(-a));
    h
}

/// `J u` for `J = [[0, -I], [I, 0]]`.
pub fn rotate_half(u: &DVector<f64>) -> DVector<f64> {
    let r = u.len() / 2;
    let mut out = DVector::zeros(2 * r);
    for i in 0..r {
        out[i] = -u[r + i];
        out[r + i] = u[i];
    }
    out
}

/// Orthonormal basis of `N(Q2^T (A - (alpha + i beta) I))`.
pub fn leading_pair_basis(sys: &SystemPair, alpha: f64, beta: f64, tol: Option<f64>) -> Result<ComplexMatrix> {
    let sub = build_m_complex(sys, &PartialSchur::empty(sys.n()), alpha, beta);
    matcore::null_basis(&sub, tol)
}

/// Leading orthonormal pair with block `[[alpha, beta], [-beta, alpha]]`.
///
/// Coefficients come from the nonnegative half of the spectrum of
/// [`init_hamiltonian`]; a one-dimensional null space with `theta1 > 0`
/// falls back to the Jacobi construction.
pub fn init_complex(sys: &SystemPair, alpha: f64, beta: f64, start: PairStart, tol: Option<f64>) -> Result<InitPair> {
    let s = leading_pair_basis(sys, alpha, beta, tol)?;
    let r = s.ncols();
    let h = init_hamiltonian(&s);
    let eig = matcore::sym_eig(&h)?;
    let theta: Vec<f64> = eig.values[..r].iter().map(|t| t.max(0.0)).collect();

    if r == 1 && theta[0] > FRAME_FLOOR {
        let pair = jacobi_orthogonalize(&s.column(0).into_owned(), &CVector::zeros(0))
            .map_err(|_| Error::LinearlyDependentParts)?;
        let d1 = 1.0 / pair.x_a.norm();
        let d2 = 1.0 / pair.x_b.norm();
        let delta = d2 / d1;
        let skew = delta - 1.0 / delta;
        return Ok(InitPair {
            x1: &pair.x_a * d1,
            x2: &pair.x_b * d2,
            block: [[alpha, delta * beta], [-beta / delta, alpha]],
            strategy: Strategy::InitJacobi,
            objective: beta * beta * skew * skew,
            subspace_dim: r,
            theta,
        });
    }

    let u = |k: usize| eig.vectors.column(k).into_owned();
    let coeffs = if r == 1 {
        u(0) + rotate_half(&u(0))
    } else {
        let (t1, t2) = (theta[0], theta[1]);
        let munu = match start {
            PairStart::Default => {
                let ratio = if t1 > FRAME_FLOOR { t2 / t1 } else { 0.0 };
                let mu1 = ratio.sqrt();
                Munu { mu1, mu2: 1.0, nu1: -mu1, nu2: 1.0, degenerate: t1 <= FRAME_FLOOR }
            }
            PairStart::Family { nu2_fraction, branch, mu2_negative } => {
                let limit = if t1 + t2 > 0.0 { (t1 / (t1 + t2)).sqrt() } else { FRAC_1_SQRT_2 };
                munu_on_branch(t1, t2, nu2_fraction.clamp(-1.0, 1.0) * limit, branch, mu2_negative)
            }
        };
        u(0) * munu.mu1 + u(1) * munu.mu2 + rotate_half(&u(0)) * munu.nu1 + rotate_half(&u(1)) * munu.nu2
    };
    let gamma = coeffs.rows(0, r).map(|g| Complex64::new(g, 0.0));
    let zeta = coeffs.rows(r, r).map(|z| Complex64::new(0.0, z));
    let z = &s * (gamma + zeta);
    let scale = matcore::re_vec(&z).norm();
    if scale == 0.0 {
        return Err(Error::EmptyNullSpace);
    }
    Ok(InitPair {
        x1: matcore::re_vec(&z) / scale,
        x2: matcore::im_vec(&z) / scale,
        block: [[alpha, beta], [-beta, alpha]],
        strategy: Strategy::InitBalanced,
        objective: 0.0,
        subspace_dim: r,
        theta,
    })
}

/// Applies an [`InitPair`] to an empty partial form.
pub fn apply_init_pair(n: usize, init: &InitPair) -> (PartialSchur, StepRecord) {
    let empty = DVector::zeros(0);
    let partial = PartialSchur::empty(n).push_pair([&init.x1, &init.x2], [&empty, &empty], init.block, init.objective);
    let record = StepRecord {
        column: 0,
        strategy: init.strategy,
        subspace_dim: init.subspace_dim,
        objective: init.objective,
        dep1: None,
        dep2: None,
        dep1_bound: None,
        dep2_bound: None,
    };
    (partial, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::new_system;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> RealMatrix {
        RealMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_system(seed: u64, n: usize, m: usize) -> SystemPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        new_system(randn(&mut rng, n, n), randn(&mut rng, n, m)).unwrap()
    }

    fn cvec(re: &[f64], im: &[f64]) -> CVector {
        DVector::from_iterator(re.len(), re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)))
    }

    fn example41(n: usize) -> SystemPair {
        let mut a = RealMatrix::identity(n, n);
        for c in 1..n {
            a[(n - 1, c)] = 0.5;
        }
        let mut b = RealMatrix::zeros(n, n - 1);
        for i in 0..n - 1 {
            b[(i, i)] = 1.0;
        }
        new_system(a, b).unwrap()
    }

    /// Random partial form of width `j` built from real steps.
    fn random_partial(sys: &SystemPair, j: usize) -> PartialSchur {
        let x1 = crate::step_real::init_real(sys, -1.0).unwrap();
        let mut p = PartialSchur::empty(sys.n()).push_real(&x1, &DVector::zeros(0), -1.0, 0.0);
        for k in 1..j {
            let lambda = -1.0 - k as f64 * 0.37;
            let res = crate::step_real::solve_real_step(sys, &p, lambda, None).unwrap();
            p = crate::step_real::update_real(&p, &res, lambda).unwrap();
        }
        p
    }

    fn schur_relation(sys: &SystemPair, p: &PartialSchur) -> f64 {
        p.constraint_residual(sys)
    }

    fn block_eigs(block: [[f64; 2]; 2]) -> (f64, f64) {
        let tr = block[0][0] + block[1][1];
        let det = block[0][0] * block[1][1] - block[0][1] * block[1][0];
        let disc = det - tr * tr / 4.0;
        (tr / 2.0, disc.max(0.0).sqrt())
    }

    #[test]
    fn m_first_step_is_single_block() {
        let sys = random_system(3, 4, 2);
        let m = build_m_complex(&sys, &PartialSchur::empty(4), 0.5, 2.0);
        assert_eq!(m.shape(), (2, 4));
        let mut shifted = matcore::to_complex(&sys.a);
        for i in 0..4 {
            shifted[(i, i)] -= Complex64::new(0.5, 2.0);
        }
        assert!((m - matcore::to_complex(&sys.q2.transpose()) * shifted).norm() < 1e-15);
    }

    #[test]
    fn m_conjugation_symmetry() {
        let sys = random_system(4, 5, 2);
        let p = random_partial(&sys, 2);
        let plus = build_m_complex(&sys, &p, 0.3, 1.5);
        let minus = build_m_complex(&sys, &p, 0.3, -1.5);
        assert_eq!(plus.shape(), (5, 7));
        assert_eq!(plus.map(|c| c.conj()), minus);
    }

    #[test]
    fn null_vectors_give_real_constraints() {
        let sys = random_system(5, 6, 3);
        let p = random_partial(&sys, 2);
        let (alpha, beta) = (0.2, 1.1);
        let sub = pair_subspace(&sys, &p, alpha, beta, None).unwrap();
        let q2t = sys.q2.transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c = DVector::from_fn(sub.dim(), |_, _| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            });
            let z = &sub.s1 * &c;
            let w = &sub.s2 * &c;
            let (x, y) = (matcore::re_vec(&z), matcore::im_vec(&z));
            let (wr, wi) = (matcore::re_vec(&w), matcore::im_vec(&w));
            let r1 = &q2t * (&sys.a * &x - &p.x * &wr - &x * alpha + &y * beta);
            let r2 = &q2t * (&sys.a * &y - &p.x * &wi - &x * beta - &y * alpha);
            let scale = c.norm();
            assert!(r1.norm() <= 1e-10 * scale && r2.norm() <= 1e-10 * scale);
            assert!((p.x.transpose() * &x).norm() <= 1e-10 * scale);
            assert!((p.x.transpose() * &y).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn jacobi_identity_when_already_orthogonal() {
        let z = cvec(&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]);
        let w = cvec(&[0.5], &[-0.5]);
        let pair = jacobi_orthogonalize(&z, &w).unwrap();
        assert_eq!((pair.c, pair.s), (1.0, 0.0));
        assert_eq!(pair.x_a, dvector![1.0, 0.0, 0.0]);
        assert_eq!(pair.x_b, dvector![0.0, 2.0, 0.0]);
        assert_eq!(pair.v_a, dvector![0.5]);
        assert_eq!(pair.v_b, dvector![-0.5]);
    }

    #[test]
    fn jacobi_hand_example_matches_gram_eigenvalues() {
        // Re z = e1, Im z = e1 + e2
        let z = cvec(&[1.0, 0.0], &[1.0, 1.0]);
        let pair = jacobi_orthogonalize(&z, &CVector::zeros(0)).unwrap();
        assert!(pair.x_a.dot(&pair.x_b).abs() < 1e-15);
        // [Re z Im z]^T [Re z Im z] = [[1, 1], [1, 2]], eigenvalues (3 -+ sqrt 5) / 2
        let g = matcore::sym_eig(&dmatrix![1.0, 1.0; 1.0, 2.0]).unwrap();
        assert!((g.values[0] - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        let mut norms = [pair.x_a.norm_squared(), pair.x_b.norm_squared()];
        norms.sort_by(f64::total_cmp);
        assert!((norms[0] - g.values[1]).abs() < 1e-12);
        assert!((norms[1] - g.values[0]).abs() < 1e-12);
        let x = dvector![1.0, 0.0];
        let y = dvector![1.0, 1.0];
        let omega = jacobi_norm_shift(&x, &y);
        assert!((pair.x_a.norm_squared() - (1.0 - omega)).abs() < 1e-12);
        assert!((pair.x_b.norm_squared() - (2.0 + omega)).abs() < 1e-12);
    }

    #[test]
    fn jacobi_random_preserves_norm_and_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let re: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let im: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let wre: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let wim: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let z = cvec(&re, &im);
            let w = cvec(&wre, &wim);
            let pair = jacobi_orthogonalize(&z, &w).unwrap();
            let x = matcore::re_vec(&z);
            let y = matcore::im_vec(&z);
            assert!(pair.x_a.dot(&pair.x_b).abs() < 1e-12 * z.norm_squared());
            let before = x.norm_squared() + y.norm_squared();
            let after = pair.x_a.norm_squared() + pair.x_b.norm_squared();
            assert!((before - after).abs() < 1e-12 * before);
            let omega = jacobi_norm_shift(&x, &y);
            assert!((pair.x_a.norm_squared() - (x.norm_squared() - omega)).abs() < 1e-10 * before);
            assert!((pair.x_b.norm_squared() - (y.norm_squared() + omega)).abs() < 1e-10 * before);
            // the rotation is multiplication by c + i s, on z and w alike
            let phase = Complex64::new(pair.c, pair.s);
            let zr = &z * phase;
            let wr = &w * phase;
            assert!((matcore::re_vec(&zr) - &pair.x_a).norm() < 1e-14 * before);
            assert!((matcore::im_vec(&zr) - &pair.x_b).norm() < 1e-14 * before);
            assert!((matcore::re_vec(&wr) - &pair.v_a).norm() < 1e-14 * before);
            assert!((matcore::im_vec(&wr) - &pair.v_b).norm() < 1e-14 * before);
        }
    }

    #[test]
    fn jacobi_rejects_dependent_parts() {
        let z = cvec(&[1.0, 2.0, -1.0], &[2.0, 4.0, -2.0]);
        assert_eq!(
            jacobi_orthogonalize(&z, &CVector::zeros(0)).unwrap_err(),
            Error::LinearlyDependentParts
        );
        let real = cvec(&[1.0, 2.0], &[0.0, 0.0]);
        assert!(jacobi_orthogonalize(&real, &CVector::zeros(0)).is_err());
    }

    #[test]
    fn strategy_jacobi_rejects_real_direction() {
        let s1 = matcore::to_complex(&dmatrix![0.6; 0.0; 0.0]);
        let s2 = matcore::to_complex(&dmatrix![0.8]);
        let svd = matcore::svd(&s1).unwrap();
        let sub = PairSubspace { s1, s2, svd };
        assert_eq!(strategy_jacobi(&sub, 1.0).unwrap_err(), Rejection::DependentParts);
        assert_eq!(strategy_balanced(&sub, 1.0).unwrap_err(), Rejection::SubspaceTooSmall);
    }

    #[test]
    fn strategy_jacobi_bound_and_residual() {
        let sys = random_system(61, 6, 3);
        let p = random_partial(&sys, 2);
        let (alpha, beta) = (-0.4, 0.9);
        let sub = pair_subspace(&sys, &p, alpha, beta, None).unwrap();
        let cand = strategy_jacobi(&sub, beta).unwrap();
        assert!(cand.objective <= cand.bound + 1e-8);
        let recomputed = pair_objective(&cand.v_a, &cand.v_b, cand.delta1, cand.delta2, beta);
        assert!((recomputed - cand.objective).abs() <= 1e-10 * cand.objective.max(1.0));
        assert!(cand.x_a.dot(&cand.x_b).abs() < 1e-10);
        assert!((p.x.transpose() * &cand.x_a).norm() < 1e-10);
        assert!((p.x.transpose() * &cand.x_b).norm() < 1e-10);
        let (next, strategy) = choose_and_update(&p, Some(&cand), None, alpha, beta).unwrap();
        assert_eq!(strategy, Strategy::Jacobi);
        assert!(schur_relation(&sys, &next) <= 1e-10);
        assert!(next.orthonormality_residual() <= 1e-10);
    }

    #[test]
    fn strategy_jacobi_at_first_column() {
        let sys = random_system(62, 6, 3);
        let sub = pair_subspace(&sys, &PartialSchur::empty(6), 0.1, 0.7, None).unwrap();
        let cand = strategy_jacobi(&sub, 0.7).unwrap();
        assert!(cand.objective <= cand.bound + 1e-8);
    }

    #[test]
    fn frame_identities() {
        let sys = random_system(70, 7, 3);
        let p = random_partial(&sys, 3);
        let sub = pair_subspace(&sys, &p, 0.5, 1.3, None).unwrap();
        assert!(sub.dim() >= 2);
        let (u1, _) = sub.direction(0);
        let (u2, _) = sub.direction(1);
        let xt = RealMatrix::from_columns(&[matcore::re_vec(&u1), matcore::re_vec(&u2)]);
        let yt = RealMatrix::from_columns(&[matcore::im_vec(&u1), matcore::im_vec(&u2)]);
        let sum = xt.transpose() * &xt + yt.transpose() * &yt;
        assert!((sum - RealMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((xt.transpose() * &yt - yt.transpose() * &xt).norm() < 1e-12);

        let frame = hamiltonian_frame(&u1, &u2, sub.svd.singular_values[0], sub.svd.singular_values[1]).unwrap();
        let omega_gram = frame.omega.transpose() * frame.omega;
        assert!((omega_gram - Matrix4::identity()).norm() < 1e-10);
        assert!((frame.reassemble() - length_form(&xt, &yt)).norm() < 1e-10);
        assert!(frame.phi1 >= frame.phi2 && frame.phi2 >= -1e-14 && frame.phi1 <= 1.0 + 1e-14);
    }

    #[test]
    fn munu_decoupled_when_phi2_zero() {
        let m = munu_on_branch(0.7, 0.0, 0.4, Branch::NonPositive, false);
        assert_eq!((m.mu1, m.nu1), (0.0, 0.0));
        assert!((m.mu2 * m.mu2 + m.nu2 * m.nu2 - 1.0).abs() < 1e-15);
    }

    fn balancing_residuals(phi1: f64, phi2: f64, m: &Munu) -> [f64; 3] {
        [
            phi1 * m.mu1 * m.nu1 + phi2 * m.mu2 * m.nu2,
            phi1 * (m.mu1 * m.mu1 - m.nu1 * m.nu1) + phi2 * (m.mu2 * m.mu2 - m.nu2 * m.nu2),
            m.mu1 * m.mu1 + m.mu2 * m.mu2 + m.nu1 * m.nu1 + m.nu2 * m.nu2 - 1.0,
        ]
    }

    #[test]
    fn munu_substitution() {
        for branch in [Branch::NonPositive, Branch::Positive] {
            for neg in [false, true] {
                let m = munu_on_branch(0.8, 0.2, 0.3, branch, neg);
                assert_eq!(m.nu2, 0.3);
                for r in balancing_residuals(0.8, 0.2, &m) {
                    assert!(r.abs() < 1e-12);
                }
                match branch {
                    Branch::NonPositive => assert!(m.mu1 * m.nu2 <= 0.0),
                    Branch::Positive => assert!(m.mu1 * m.nu2 > 0.0),
                }
            }
        }
    }

    #[test]
    fn munu_degenerate_frame_is_canonical() {
        let m = munu_on_branch(0.0, 0.0, 0.3, Branch::Positive, false);
        assert!(m.degenerate);
        assert_eq!(m.as_vector(), Vector4::new(0.0, FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2));
    }

    #[test]
    fn munu_default_uses_midpoint() {
        let nu2 = default_nu2(0.8, 0.2);
        assert!((nu2 * nu2 - 0.4).abs() < 1e-15);
    }

    fn balanced_instance(seed: u64) -> (SystemPair, PartialSchur, PairSubspace) {
        let sys = random_system(seed, 7, 3);
        let p = random_partial(&sys, 3);
        let sub = pair_subspace(&sys, &p, 0.25, 1.7, None).unwrap();
        (sys, p, sub)
    }

    #[test]
    fn balanced_columns_orthogonal_equal_norms() {
        for seed in 80..90 {
            let (_, p, sub) = balanced_instance(seed);
            let out = strategy_balanced(&sub, 1.7).unwrap();
            let c = &out.candidate;
            assert!((c.x_a.norm() - FRAC_1_SQRT_2).abs() < 1e-10);
            assert!((c.x_b.norm() - FRAC_1_SQRT_2).abs() < 1e-10);
            assert!(c.x_a.dot(&c.x_b).abs() < 1e-10);
            assert!((p.x.transpose() * &c.x_a).norm() < 1e-10);
            assert!((c.objective - 2.0 * out.w.norm_squared()).abs() < 1e-12 * c.objective.max(1.0));
            assert!((c.objective - out.dep2_weighted).abs() < 1e-10 * c.objective.max(1.0));
            assert!(c.objective <= c.bound + 1e-8);
            let closed = 2.0 * w_norm_sq_closed_form(&out.frame, preferred_branch(&out.frame));
            assert!((closed - c.objective).abs() < 1e-10 * c.objective.max(1.0));
            for r in balancing_residuals(out.frame.phi1, out.frame.phi2, &out.munu) {
                assert!(r.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn preferred_branch_is_never_worse() {
        for seed in 90..100 {
            let (_, _, sub) = balanced_instance(seed);
            let chosen = strategy_balanced(&sub, 1.0).unwrap();
            let frame = &chosen.frame;
            let other = match preferred_branch(frame) {
                Branch::NonPositive => Branch::Positive,
                Branch::Positive => Branch::NonPositive,
            };
            let nu2 = default_nu2(frame.phi1, frame.phi2);
            let alt = balanced_from_munu(&sub, frame, munu_on_branch(frame.phi1, frame.phi2, nu2, other, false), 1.0);
            assert!(chosen.candidate.objective <= alt.candidate.objective + 1e-10);
            let closed = 2.0 * w_norm_sq_closed_form(frame, other);
            assert!((closed - alt.candidate.objective).abs() < 1e-10 * closed.max(1.0));
        }
    }

    #[test]
    fn balanced_objective_independent_of_nu2() {
        let (_, _, sub) = balanced_instance(123);
        let base = strategy_balanced(&sub, 1.0).unwrap();
        let frame = &base.frame;
        let branch = preferred_branch(frame);
        let limit = (frame.phi1 / (frame.phi1 + frame.phi2)).sqrt();
        for frac in [-0.9, -0.2, 0.1, 0.5, 0.95] {
            let munu = munu_on_branch(frame.phi1, frame.phi2, frac * limit, branch, frac < 0.0);
            let alt = balanced_from_munu(&sub, frame, munu, 1.0);
            assert!((alt.candidate.objective - base.candidate.objective).abs() < 1e-10 * base.candidate.objective.max(1.0));
            assert!((alt.candidate.x_a.norm() - alt.candidate.x_b.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn balanced_with_unit_sigma_has_zero_w() {
        // S1 with orthonormal columns: sigma = 1 and w vanishes
        let s1 = ComplexMatrix::from_fn(4, 2, |r, c| match (r, c) {
            (0, 0) => Complex64::new(1.0, 0.0),
            (1, 1) => Complex64::new(0.0, 1.0),
            _ => Complex64::new(0.0, 0.0),
        });
        let s2 = ComplexMatrix::zeros(1, 2);
        let svd = matcore::svd(&s1).unwrap();
        let sub = PairSubspace { s1, s2, svd };
        let out = strategy_balanced(&sub, 1.0).unwrap();
        assert!(out.candidate.bound.abs() < 1e-15);
        assert!(out.w.norm() < 1e-15);
        assert!(out.candidate.objective <= 1e-8);
    }

    fn dummy_candidate(strategy: Strategy, objective: f64) -> PairStepCandidate {
        let e = |i: usize| DVector::from_fn(3, |r, _| if r == i { 1.0 } else { 0.0 });
        let mut c = PairStepCandidate::new(strategy, e(1), e(2), DVector::zeros(1), DVector::zeros(1), 1.0, 0.0);
        c.objective = objective;
        c
    }

    #[test]
    fn choose_prefers_balanced_on_tie_and_rejection() {
        let p = PartialSchur::empty(3).push_real(&dvector![1.0, 0.0, 0.0], &DVector::zeros(0), 1.0, 0.0);
        let jac = dummy_candidate(Strategy::Jacobi, 0.0);
        let bal = dummy_candidate(Strategy::Balanced, 0.0);
        let bal_scaled = PairStepCandidate {
            x_a: &bal.x_a * FRAC_1_SQRT_2,
            x_b: &bal.x_b * FRAC_1_SQRT_2,
            ..bal.clone()
        };
        let (_, s) = choose_and_update(&p, Some(&jac), Some(&bal_scaled), 0.0, 1.0).unwrap();
        assert_eq!(s, Strategy::Balanced);
        let (_, s) = choose_and_update(&p, None, Some(&bal_scaled), 0.0, 1.0).unwrap();
        assert_eq!(s, Strategy::Balanced);
        let cheaper = PairStepCandidate { objective: -1.0, ..jac.clone() };
        let (_, s) = choose_and_update(&p, Some(&cheaper), Some(&bal_scaled), 0.0, 1.0).unwrap();
        assert_eq!(s, Strategy::Jacobi);
        assert!(matches!(
            choose_and_update(&p, None, None, 0.0, 1.0),
            Err(Error::NoViableCandidate { step: 1, .. })
        ));
    }

    #[test]
    fn pair_step_block_and_bookkeeping() {
        for seed in 200..210 {
            let sys = random_system(seed, 6, 2);
            let p = random_partial(&sys, 2);
            let (alpha, beta) = (0.3, 2.5);
            let (next, rec) = solve_pair_step(&sys, &p, alpha, beta, None).unwrap();
            let j = p.j();
            let block = [
                [next.t[(j, j)], next.t[(j, j + 1)]],
                [next.t[(j + 1, j)], next.t[(j + 1, j + 1)]],
            ];
            let (re, im) = block_eigs(block);
            assert!((re - alpha).abs() < 1e-12 && (im - beta).abs() < 1e-12);
            let expect = rec.dep1.unwrap_or(f64::INFINITY).min(rec.dep2.unwrap_or(f64::INFINITY));
            assert_eq!(rec.objective, next.dep_sq_accum - p.dep_sq_accum);
            assert!((rec.objective - expect).abs() <= 1e-12 * expect.max(1.0));
            if let (Some(d), Some(b)) = (rec.dep1, rec.dep1_bound) {
                assert!(d <= b + 1e-8);
            }
            if let (Some(d), Some(b)) = (rec.dep2, rec.dep2_bound) {
                assert!(d <= b + 1e-8);
            }
            assert!(schur_relation(&sys, &next) <= 1e-9 * sys.a.norm());
            assert!(next.orthonormality_residual() <= 1e-10 * next.j() as f64);
            assert!(next.is_quasi_triangular());
            // increment matches the strictly upper part plus the block skew
            let upper: f64 = (0..next.j())
                .flat_map(|c| (0..j).map(move |r| (r, c)))
                .filter(|&(r, c)| r < c && c >= j)
                .map(|(r, c)| next.t[(r, c)].powi(2))
                .sum();
            let skew = (block[0][1] + block[1][0]).powi(2);
            assert!((upper + skew - rec.objective).abs() <= 1e-10 * rec.objective.max(1.0));
        }
    }

    fn symmetric_pair(seed: u64, r: usize) -> (RealMatrix, RealMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = randn(&mut rng, r, r);
        let b = randn(&mut rng, r, r);
        (&a + a.transpose(), &b + b.transpose())
    }

    #[test]
    fn hamiltonian_eigenpair_relations() {
        for seed in 0..20 {
            let (a, b) = symmetric_pair(seed, 4);
            let h1 = block_hamiltonian(&a, &b);
            let h2 = block_hamiltonian(&b, &(-&a));
            let eig = matcore::sym_eig(&h1).unwrap();
            let u = eig.vectors.column(0).into_owned();
            let lambda = eig.values[0];
            let pair = RealMatrix::from_columns(&[u.clone(), rotate_half(&u)]);
            let lam = dmatrix![lambda, 0.0; 0.0, -lambda];
            assert!((&h1 * &pair - &pair * &lam).norm() < 1e-10);
            let h = FRAC_1_SQRT_2;
            let rot = dmatrix![h, -h; -h, -h];
            assert!((&h2 * &pair * &rot - &pair * &rot * &lam).norm() < 1e-10);
        }
    }

    #[test]
    fn hamiltonian_pair_decomposition() {
        for seed in 20..40 {
            let r = 3;
            let (a, b) = symmetric_pair(seed, r);
            let h1 = block_hamiltonian(&a, &b);
            let h2 = block_hamiltonian(&b, &(-&a));
            let eig = matcore::sym_eig(&h1).unwrap();
            let mut u = RealMatrix::zeros(2 * r, 2 * r);
            let mut theta = RealMatrix::zeros(r, r);
            for k in 0..r {
                let col = eig.vectors.column(k).into_owned();
                u.set_column(r + k, &rotate_half(&col));
                u.set_column(k, &col);
                theta[(k, k)] = eig.values[k];
            }
            let mut d1 = RealMatrix::zeros(2 * r, 2 * r);
            d1.view_mut((0, 0), (r, r)).copy_from(&theta);
            d1.view_mut((r, r), (r, r)).copy_from(&(-&theta));
            assert!((&u * d1 * u.transpose() - &h1).norm() < 1e-10);
            let mut d2 = RealMatrix::zeros(2 * r, 2 * r);
            d2.view_mut((0, r), (r, r)).copy_from(&(-&theta));
            d2.view_mut((r, 0), (r, r)).copy_from(&(-&theta));
            assert!((&u * d2 * u.transpose() - &h2).norm() < 1e-10);
        }
    }

    #[test]
    fn theta_identity_on_random_instance() {
        let sys = random_system(300, 6, 2);
        let s = leading_pair_basis(&sys, 0.4, 1.2, None).unwrap();
        let r = s.ncols();
        let eig = matcore::sym_eig(&init_hamiltonian(&s)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mu: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let nu: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let mut coeffs = DVector::zeros(2 * r);
        for k in 0..r {
            let u = eig.vectors.column(k).into_owned();
            coeffs += &u * mu[k] + rotate_half(&u) * nu[k];
        }
        let gz = coeffs.rows(0, r).map(|g| Complex64::new(g, 0.0)) + coeffs.rows(r, r).map(|z| Complex64::new(0.0, z));
        let z = &s * gz;
        let (x1, x2) = (matcore::re_vec(&z), matcore::im_vec(&z));
        let sym: f64 = (0..r).map(|k| eig.values[k] * (mu[k] * mu[k] - nu[k] * nu[k])).sum();
        let skew: f64 = (0..r).map(|k| -2.0 * eig.values[k] * mu[k] * nu[k]).sum();
        assert!((2.0 * x1.dot(&x2) - sym).abs() < 1e-12 * coeffs.norm_squared());
        assert!((x1.norm_squared() - x2.norm_squared() - skew).abs() < 1e-12 * coeffs.norm_squared());

        let init = init_complex(&sys, 0.4, 1.2, PairStart::Default, None).unwrap();
        assert!(init.x1.dot(&init.x2).abs() < 1e-12);
        assert!((init.x1.norm() - 1.0).abs() < 1e-12 && (init.x2.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_square_input_constraints_vacuous() {
        let sys = new_system(RealMatrix::zeros(3, 3), RealMatrix::identity(3, 3)).unwrap();
        let s = leading_pair_basis(&sys, 1.0, 2.0, None).unwrap();
        assert_eq!(s.ncols(), 3);
        let init = init_complex(&sys, 1.0, 2.0, PairStart::Default, None).unwrap();
        assert!(init.x1.dot(&init.x2).abs() < 1e-14);
        assert!((init.x1.norm() - 1.0).abs() < 1e-14 && (init.x2.norm() - 1.0).abs() < 1e-14);
        assert_eq!(init.strategy, Strategy::InitBalanced);
    }

    #[test]
    fn init_example_structure() {
        let sys = example41(4);
        let init = init_complex(&sys, 0.5, 10.0, PairStart::Default, None).unwrap();
        assert_eq!(init.block, [[0.5, 10.0], [-10.0, 0.5]]);
        let (p, rec) = apply_init_pair(4, &init);
        assert_eq!(rec.objective, 0.0);
        assert!(init.x1.dot(&init.x2).abs() < 1e-10);
        assert!(schur_relation(&sys, &p) <= 1e-10);
        assert!(p.orthonormality_residual() < 1e-12);
    }

    #[test]
    fn init_family_members_all_balanced() {
        let sys = random_system(301, 7, 3);
        for (i, frac) in [-0.8, -0.1, 0.3, 0.99].into_iter().enumerate() {
            let branch = if i % 2 == 0 { Branch::Positive } else { Branch::NonPositive };
            let start = PairStart::Family { nu2_fraction: frac, branch, mu2_negative: i == 1 };
            let init = init_complex(&sys, -0.2, 0.6, start, None).unwrap();
            assert!(init.x1.dot(&init.x2).abs() < 1e-10);
            assert!((init.x1.norm() - 1.0).abs() < 1e-12 && (init.x2.norm() - 1.0).abs() < 1e-10);
            let (p, _) = apply_init_pair(7, &init);
            assert!(schur_relation(&sys, &p) <= 1e-10);
        }
    }

    #[test]
    fn init_one_dimensional_falls_back_to_jacobi() {
        // m = 1 leaves a one-dimensional null space for generic poles
        let sys = random_system(302, 3, 1);
        let init = init_complex(&sys, 0.1, 0.8, PairStart::Default, None).unwrap();
        assert_eq!(init.subspace_dim, 1);
        assert_eq!(init.strategy, Strategy::InitJacobi);
        let (p, rec) = apply_init_pair(3, &init);
        assert!(p.orthonormality_residual() < 1e-12);
        assert!(schur_relation(&sys, &p) <= 1e-10);
        let (re, im) = block_eigs(init.block);
        assert!((re - 0.1).abs() < 1e-12 && (im - 0.8).abs() < 1e-12);
        let skew = (init.block[0][1] + init.block[1][0]).powi(2);
        assert!((rec.objective - skew).abs() < 1e-12 * skew.max(1.0));
    }

    #[test]
    fn baseline_step_is_not_orthogonal() {
        let sys = random_system(400, 6, 2);
        let p = random_partial(&sys, 2);
        let (next, rec) = baseline_complex_step(&sys, &p, 0.3, 2.0, None).unwrap();
        assert_eq!(rec.strategy, Strategy::Baseline);
        assert!(schur_relation(&sys, &next) <= 1e-9 * sys.a.norm());
        let j = p.j();
        let cols = next.x.columns(j, 2);
        assert!((cols.norm_squared() - 2.0).abs() < 1e-12);
        assert!(next.orthonormality_residual() > 1e-6);
        assert_eq!(next.t[(j, j + 1)], 2.0);
        assert_eq!(next.t[(j + 1, j)], -2.0);
    }
}

//! Column-by-column assignment, feedback recovery, the multi-start wrapper
//! and the robustness figures used to judge a solution.

use log::{debug, warn};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, ComplexMatrix, RealMatrix};
use crate::model::{
    Block, FeedbackSolution, PartialSchur, Pole, PoleSpec, RobustnessReport, Strategy, StepRecord, SystemPair,
};
use crate::step_complex::{self, Branch, PairStart};
use crate::step_real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Relative singular value threshold for null-space bases.
    pub rank_tol: f64,
    /// Per-step bound on `||Q2^T (A X - X T)||_F / (1 + ||A||_F + ||T||_F)`;
    /// steps above it are logged.
    pub step_residual_tol: f64,
    pub multistart_count: usize,
    pub rng_seed: u64,
    /// Pair steps with unit block scaling and no orthogonalization.
    pub baseline_mode: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            rank_tol: 1e-13,
            step_residual_tol: 1e-9,
            multistart_count: 1,
            rng_seed: 0,
            baseline_mode: false,
        }
    }
}

/// Headline robustness figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub dep: f64,
    /// `None` when the eigenvector matrix is numerically singular.
    pub cond_x: Option<f64>,
    pub precs: i32,
    pub schur_residual: f64,
}

/// How the first column (or pair) is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LeadStart {
    Default,
    /// Coefficients of `x1` in the leading null-space basis.
    RealCoeffs(DVector<f64>),
    Pair(PairStart),
}

/// Assigns `poles` to `A + BF`, in the order given.
pub fn assign(sys: &SystemPair, poles: &PoleSpec, cfg: &SolveConfig) -> Result<FeedbackSolution> {
    assign_from(sys, poles, cfg, &LeadStart::Default)
}

/// [`assign`] with an explicit choice of the leading column.
pub fn assign_from(sys: &SystemPair, poles: &PoleSpec, cfg: &SolveConfig, lead: &LeadStart) -> Result<FeedbackSolution> {
    let n = sys.n();
    if poles.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} poles for a system of order {}",
            poles.len(),
            n
        )));
    }
    if sys.controllability_rank < n {
        return Err(Error::NotControllable {
            rank: sys.controllability_rank,
            n,
        });
    }
    let tol = Some(cfg.rank_tol);
    let a_norm = sys.a.norm();
    let mut partial = PartialSchur::empty(n);
    let mut log = Vec::with_capacity(poles.items.len());
    for pole in &poles.items {
        let (next, record) = match (*pole, partial.j()) {
            (Pole::Real(lambda), 0) => {
                let basis = step_real::leading_basis(sys, lambda, tol)?;
                let coeffs = match lead {
                    LeadStart::RealCoeffs(c) if c.len() == basis.ncols() => Some(c),
                    _ => None,
                };
                let x = step_real::leading_column(&basis, coeffs)?;
                let next = partial.push_real(&x, &DVector::zeros(0), lambda, 0.0);
                (next, record(0, Strategy::InitReal, basis.ncols(), 0.0))
            }
            (Pole::Real(lambda), j) => {
                let res = step_real::solve_real_step(sys, &partial, lambda, tol)?;
                let next = step_real::update_real(&partial, &res, lambda)?;
                (next, record(j, Strategy::Real, res.subspace_dim, res.objective))
            }
            (Pole::Pair { re, im }, _) if cfg.baseline_mode => {
                step_complex::baseline_complex_step(sys, &partial, re, im, tol)?
            }
            (Pole::Pair { re, im }, 0) => {
                let start = match lead {
                    LeadStart::Pair(s) => *s,
                    _ => PairStart::Default,
                };
                let init = step_complex::init_complex(sys, re, im, start, tol)?;
                step_complex::apply_init_pair(n, &init)
            }
            (Pole::Pair { re, im }, _) => step_complex::solve_pair_step(sys, &partial, re, im, tol)?,
        };
        let residual = next.constraint_residual(sys) / (1.0 + a_norm + next.t.norm());
        debug!(
            "column {}: {:?}, subspace {}, objective {:.6e}, dep1 {:?}, dep2 {:?}, residual {:.3e}",
            record.column, record.strategy, record.subspace_dim, record.objective, record.dep1, record.dep2, residual
        );
        if residual > cfg.step_residual_tol {
            warn!("column {}: constraint residual {:.3e} above tolerance", record.column, residual);
        }
        partial = next;
        log.push(record);
    }
    let orthogonal = !cfg.baseline_mode || !poles.has_pairs();
    let f = recover_f(sys, &partial.x, &partial.t, orthogonal)?;
    Ok(FeedbackSolution {
        f,
        x: partial.x,
        t: partial.t,
        blocks: partial.blocks,
        step_log: log,
        orthogonal,
        dep_sq_accum: partial.dep_sq_accum,
    })
}

fn record(column: usize, strategy: Strategy, subspace_dim: usize, objective: f64) -> StepRecord {
    StepRecord {
        column,
        strategy,
        subspace_dim,
        objective,
        dep1: None,
        dep2: None,
        dep1_bound: None,
        dep2_bound: None,
    }
}

/// `F = R^{-1} Q1^T (X T X^{-1} - A)`; `X^{-1} = X^T` when `orthogonal`.
pub fn recover_f(sys: &SystemPair, x: &RealMatrix, t: &RealMatrix, orthogonal: bool) -> Result<RealMatrix> {
    let target = if orthogonal {
        x * t * x.transpose()
    } else {
        let inv = x.clone().try_inverse().ok_or(Error::Singular)?;
        x * t * inv
    };
    let rhs = sys.q1.transpose() * (target - &sys.a);
    sys.r_factor.solve_upper_triangular(&rhs).ok_or(Error::Singular)
}

/// Runs `cfg.multistart_count` starts and keeps the one with the smallest
/// departure from normality. Start 0 is the default leading column.
pub fn assign_multistart(sys: &SystemPair, poles: &PoleSpec, cfg: &SolveConfig) -> Result<FeedbackSolution> {
    let count = cfg.multistart_count.max(1);
    let leads = multistart_leads(sys, poles, cfg, count)?;
    let expanded = poles.expand();
    let results: Vec<Result<(f64, FeedbackSolution)>> = leads
        .par_iter()
        .map(|lead| {
            let sol = assign_from(sys, poles, cfg, lead)?;
            let closed = &sys.a + &sys.b * &sol.f;
            Ok((departure(&closed, &expanded).0, sol))
        })
        .collect();
    let mut best: Option<(f64, FeedbackSolution)> = None;
    let mut last_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((dep, sol)) => {
                debug!("start {i}: dep {dep:.6e}");
                if best.as_ref().is_none_or(|(b, _)| dep < *b) {
                    best = Some((dep, sol));
                }
            }
            Err(e) => {
                debug!("start {i} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    match (best, last_err) {
        (Some((_, sol)), _) => Ok(sol),
        (None, Some(e)) if count == 1 => Err(e),
        (None, e) => Err(Error::AllStartsFailed {
            count,
            last: Box::new(e.unwrap_or(Error::EmptyNullSpace)),
        }),
    }
}

/// Leading-column choices for each start, drawn from one seeded stream per start.
pub fn multistart_leads(sys: &SystemPair, poles: &PoleSpec, cfg: &SolveConfig, count: usize) -> Result<Vec<LeadStart>> {
    let mut leads = vec![LeadStart::Default];
    let Some(first) = poles.items.first() else {
        return Ok(leads);
    };
    let dim = match *first {
        Pole::Real(lambda) => step_real::leading_basis(sys, lambda, Some(cfg.rank_tol))?.ncols(),
        Pole::Pair { .. } => 0,
    };
    for i in 1..count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(i as u64);
        leads.push(match first {
            Pole::Real(_) => LeadStart::RealCoeffs(DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))),
            Pole::Pair { .. } => LeadStart::Pair(PairStart::Family {
                nu2_fraction: rng.gen_range(-1.0..1.0),
                branch: if rng.gen::<bool>() { Branch::Positive } else { Branch::NonPositive },
                mu2_negative: rng.gen(),
            }),
        });
    }
    Ok(leads)
}

/// `sqrt(max(0, ||A_c||_F^2 - sum |lambda|^2))` and whether the clamp was hit.
pub fn departure(a_c: &RealMatrix, poles: &[Complex64]) -> (f64, bool) {
    let diff = a_c.norm_squared() - poles.iter().map(|z| z.norm_sqr()).sum::<f64>();
    (diff.max(0.0).sqrt(), diff < 0.0)
}

/// `||N||_F^2 + sum (t12 + t21)^2` over the 2x2 diagonal blocks of a
/// quasi-triangular `T`; equals the squared departure of `T`.
pub fn departure_from_blocks(t: &RealMatrix, blocks: &[Block]) -> f64 {
    let n = t.nrows();
    let mut block_of = Vec::with_capacity(n);
    for (k, b) in blocks.iter().enumerate() {
        for _ in 0..b.size() {
            block_of.push(k);
        }
    }
    let mut total = 0.0;
    for c in 0..n {
        for r in 0..c {
            if block_of[r] != block_of[c] {
                total += t[(r, c)] * t[(r, c)];
            } else {
                let s = t[(r, c)] + t[(c, r)];
                total += s * s;
            }
        }
    }
    total
}

/// Frobenius condition number `||X||_F ||X^{-1}||_F` of a unit-column
/// eigenvector matrix of `a_c`; `None` when it is numerically singular.
///
/// Computed eigenvalues closer than `1e-9 (1 + ||A_c||_F)` form a cluster
/// whose eigenvectors are the trailing right singular vectors of `A_c - lambda I`.
/// A cluster without that many numerically null directions is defective.
pub fn cond_eigvec(a_c: &RealMatrix) -> Result<Option<f64>> {
    let n = a_c.nrows();
    if n == 0 {
        return Ok(Some(0.0));
    }
    let eig = matcore::eigenvalues(a_c)?;
    let tol = 1e-9 * (1.0 + a_c.norm());
    let mut assigned = vec![false; n];
    let mut vectors = ComplexMatrix::zeros(n, n);
    let mut col = 0;
    let ac = matcore::to_complex(a_c);
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (i..n).filter(|&k| !assigned[k] && (eig[k] - eig[i]).norm() <= tol).collect();
        let k = members.len();
        let center = members.iter().map(|&m| eig[m]).sum::<Complex64>() / k as f64;
        for &m in &members {
            assigned[m] = true;
        }
        let mut shifted = ac.clone();
        for d in 0..n {
            shifted[(d, d)] -= center;
        }
        let (sv, right) = matcore::full_right_svd(&shifted)?;
        if sv[n - k] > f64::EPSILON.sqrt() * (1.0 + a_c.norm()) {
            // fewer independent eigenvectors than the cluster size: defective
            return Ok(None);
        }
        for c in 0..k {
            vectors.set_column(col, &right.column(n - k + c));
            col += 1;
        }
    }
    let sv = matcore::svd(&vectors)?.singular_values;
    let smallest = sv[n - 1];
    if smallest <= f64::EPSILON * sv[0] * n as f64 {
        return Ok(None);
    }
    let fro: f64 = sv.iter().map(|s| s * s).sum::<f64>().sqrt();
    let inv_fro: f64 = sv.iter().map(|s| 1.0 / (s * s)).sum::<f64>().sqrt();
    Ok(Some(fro * inv_fro))
}

/// Correct decimal digits of the computed spectrum, worst pole first.
///
/// Poles are matched to computed eigenvalues by repeatedly taking the
/// closest unmatched pair. Each pole scores `-log10` of its relative error
/// (absolute error when `|lambda| < 1e-300`), capped at 16.
pub fn precision_digits(assigned: &[Complex64], computed: &[Complex64]) -> i32 {
    let n = assigned.len().min(computed.len());
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, a) in assigned.iter().enumerate() {
        for (j, c) in computed.iter().enumerate() {
            pairs.push(((a - c).norm(), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; assigned.len()];
    let mut used_c = vec![false; computed.len()];
    let mut worst = 16.0f64;
    let mut matched = 0;
    for (dist, i, j) in pairs {
        if matched == n {
            break;
        }
        if used_a[i] || used_c[j] {
            continue;
        }
        used_a[i] = true;
        used_c[j] = true;
        matched += 1;
        let scale = assigned[i].norm();
        let err = if scale < 1e-300 { dist } else { dist / scale };
        let digits = if err == 0.0 { 16.0 } else { (-err.log10()).min(16.0) };
        worst = worst.min(digits);
    }
    worst.floor() as i32
}

/// Headline figures for `A + BF`.
pub fn metrics(sys: &SystemPair, poles: &PoleSpec, sol: &FeedbackSolution) -> Result<MetricsBundle> {
    let closed = &sys.a + &sys.b * &sol.f;
    let expanded = poles.expand();
    let computed = matcore::eigenvalues(&closed)?;
    Ok(MetricsBundle {
        dep: departure(&closed, &expanded).0,
        cond_x: cond_eigvec(&closed)?,
        precs: precision_digits(&expanded, &computed),
        schur_residual: (&closed * &sol.x - &sol.x * &sol.t).norm(),
    })
}

/// Metrics plus the structural residuals of a solution.
pub fn validate(sol: &FeedbackSolution, sys: &SystemPair, poles: &PoleSpec) -> Result<RobustnessReport> {
    let closed = &sys.a + &sys.b * &sol.f;
    let expanded = poles.expand();
    let m = metrics(sys, poles, sol)?;
    let (dep, clamped) = departure(&closed, &expanded);
    let from_blocks = departure_from_blocks(&sol.t, &sol.blocks);
    let gap = (dep * dep - from_blocks).abs() / (1.0 + dep * dep);
    Ok(RobustnessReport {
        dep: m.dep,
        cond_x: m.cond_x,
        precs: m.precs,
        schur_residual: m.schur_residual,
        orth_residual: matcore::orthonormality_residual(&sol.x),
        constraint_residual: (sys.q2.transpose() * (&sys.a * &sol.x - &sol.x * &sol.t)).norm(),
        dep_identity_gap: gap,
        dep_clamped: clamped,
        residual_scale: 1.0 + sys.a.norm() + sol.t.norm(),
    })
}

/// Pass/fail thresholds applied to a [`RobustnessReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `||X^T X - I||_F <= orth * n`.
    pub orth: f64,
    /// Residuals `<= residual * residual_scale`.
    pub residual: f64,
    /// Gap between the two departure formulas, relative to `1 + dep^2`.
    pub dep_identity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orth: 1e-10,
            residual: 1e-9,
            dep_identity: 1e-8,
        }
    }
}

/// Names and values of the checks a report fails.
pub fn failures(report: &RobustnessReport, n: usize, tol: &Tolerances) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    if !(report.orth_residual <= tol.orth * n as f64) {
        out.push(("orth_residual", report.orth_residual));
    }
    let limit = tol.residual * report.residual_scale;
    if !(report.schur_residual <= limit) {
        out.push(("schur_residual", report.schur_residual));
    }
    if !(report.constraint_residual <= limit) {
        out.push(("constraint_residual", report.constraint_residual));
    }
    if !(report.dep_identity_gap <= tol.dep_identity) {
        out.push(("dep_identity_gap", report.dep_identity_gap));
    }
    out
}

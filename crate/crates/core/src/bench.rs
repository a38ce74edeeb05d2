//! Benchmark generators and the comparison harness.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) seeded through
//! `seed_from_u64`, with normals from `rand_distr::StandardNormal`. Each
//! (case, repeat) cell draws its own 64-bit seed from stream
//! `case_index << 32 | repeat` of the suite seed, so a cell's data does not
//! depend on which other cells run.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matcore::{self, RealMatrix};
use crate::model::{canonicalize_poles, new_system, Pole, PoleSpec, Strategy, SystemPair};
use crate::solver::{self, SolveConfig};

/// Exact CSV header written by [`write_csv`].
pub const CSV_HEADER: &str = "case,n,m,k,method,repeat,dep,cond_x,precs,wall_ms,status";

/// One generated instance.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub name: String,
    pub sys: SystemPair,
    pub poles: PoleSpec,
    pub n: usize,
    pub m: usize,
    pub k: Option<f64>,
}

/// A cell of the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseSpec {
    Example41 { n: usize, k: f64 },
    Random { n: usize, m: usize },
}

impl CaseSpec {
    pub fn name(&self) -> String {
        match *self {
            CaseSpec::Example41 { n, k } => format!("example41-n{n}-k{k:e}"),
            CaseSpec::Random { n, m } => format!("random-n{n}-m{m}"),
        }
    }

    pub fn generate(&self, seed: u64) -> BenchCase {
        match *self {
            CaseSpec::Example41 { n, k } => gen_example41(n, k, seed),
            CaseSpec::Random { n, m } => gen_random(n, m, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    SchurRob,
    OSchurRob,
    BaselineSchur,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SchurRob, Method::OSchurRob, Method::BaselineSchur];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SchurRob => "schur-rob",
            Method::OSchurRob => "o-schur-rob",
            Method::BaselineSchur => "baseline-schur",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected schur-rob, o-schur-rob or baseline-schur)"))
    }
}

/// One solve of one case by one method.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub case: String,
    pub n: usize,
    pub m: usize,
    pub k: Option<f64>,
    pub method: Method,
    pub repeat: usize,
    pub dep: Option<f64>,
    /// `Some(inf)` when the eigenvector matrix is numerically singular.
    pub cond_x: Option<f64>,
    pub precs: Option<i32>,
    pub wall_ms: f64,
    /// `ok`, or the error that stopped the solve.
    pub status: String,
    /// Pair steps whose accepted candidate broke its guaranteed bound.
    pub bound_violations: usize,
    /// `||X^T X - I||_F`; not part of the CSV.
    pub orth_residual: Option<f64>,
    /// Gap between the two departure formulas; not part of the CSV.
    pub dep_identity_gap: Option<f64>,
}

/// `A = [[1, 0, 0], [0, I, 0], [0, 0.5 e^T, 0.5]]`, `B = [I_{n-1}; 0]`,
/// poles: `n - 2` standard normal reals followed by `0.5 ± k i`.
pub fn gen_example41(n: usize, k: f64, seed: u64) -> BenchCase {
    assert!(n >= 3, "the example needs n >= 3");
    let mut a = RealMatrix::identity(n, n);
    for c in 1..n {
        a[(n - 1, c)] = 0.5;
    }
    let b = RealMatrix::from_fn(n, n - 1, |r, c| if r == c { 1.0 } else { 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<Pole> = (0..n - 2).map(|_| Pole::Real(rng.sample(StandardNormal))).collect();
    items.push(Pole::Pair { re: 0.5, im: k });
    BenchCase {
        name: CaseSpec::Example41 { n, k }.name(),
        sys: new_system(a, b).expect("the example pair is controllable"),
        poles: PoleSpec { items },
        n,
        m: n - 1,
        k: Some(k),
    }
}

/// Standard normal `A`, `B`, `F0`; the poles are the spectrum of `A + B F0`.
pub fn gen_random(n: usize, m: usize, seed: u64) -> BenchCase {
    assert!(1 <= m && m <= n, "need 1 <= m <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut draw = |r: usize, c: usize| RealMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal));
        let a = draw(n, n);
        let b = draw(n, m);
        let f0 = draw(m, n);
        let Ok(eig) = matcore::eigenvalues(&(&a + &b * f0)) else {
            continue;
        };
        let (Ok(poles), Ok(sys)) = (canonicalize_poles(&eig), new_system(a, b)) else {
            continue;
        };
        return BenchCase {
            name: CaseSpec::Random { n, m }.name(),
            sys,
            poles,
            n,
            m,
            k: None,
        };
    }
}

/// Seed of cell `(case_index, repeat)` under the suite seed.
pub fn cell_seed(seed: u64, case_index: usize, repeat: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((case_index as u64) << 32) | repeat as u64);
    rng.next_u64()
}

/// Solves one case with one method and collects the metrics.
pub fn run_one(case: &BenchCase, method: Method, repeat: usize, cfg: &SolveConfig) -> BenchRow {
    let mut row = BenchRow {
        case: case.name.clone(),
        n: case.n,
        m: case.m,
        k: case.k,
        method,
        repeat,
        dep: None,
        cond_x: None,
        precs: None,
        wall_ms: 0.0,
        status: String::new(),
        bound_violations: 0,
        orth_residual: None,
        dep_identity_gap: None,
    };
    let cfg = SolveConfig {
        baseline_mode: method == Method::BaselineSchur,
        ..cfg.clone()
    };
    let start = Instant::now();
    let solved = match method {
        Method::OSchurRob => solver::assign_multistart(&case.sys, &case.poles, &cfg),
        _ => solver::assign(&case.sys, &case.poles, &cfg),
    };
    row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let outcome = solved.and_then(|sol| {
        row.bound_violations = bound_violations(&sol.step_log);
        solver::validate(&sol, &case.sys, &case.poles)
    });
    match outcome {
        Ok(report) => {
            row.dep = Some(report.dep);
            row.cond_x = Some(report.cond_x.unwrap_or(f64::INFINITY));
            row.precs = Some(report.precs);
            row.orth_residual = Some(report.orth_residual);
            row.dep_identity_gap = Some(report.dep_identity_gap);
            row.status = "ok".into();
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Pair steps whose accepted candidate exceeds its bound by more than `1e-8`.
pub fn bound_violations(log: &[crate::model::StepRecord]) -> usize {
    log.iter()
        .filter(|r| {
            let (dep, bound) = match r.strategy {
                Strategy::Jacobi => (r.dep1, r.dep1_bound),
                Strategy::Balanced => (r.dep2, r.dep2_bound),
                _ => (None, None),
            };
            matches!((dep, bound), (Some(d), Some(b)) if !(d <= b + 1e-8))
        })
        .count()
}

/// Every case in `specs` is generated `repeats` times and solved by every
/// method. Rows come out ordered by case, repeat, then method.
pub fn run_suite(specs: &[CaseSpec], methods: &[Method], repeats: usize, seed: u64, cfg: &SolveConfig) -> Vec<BenchRow> {
    if methods.is_empty() {
        return Vec::new();
    }
    let cells: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..repeats).map(move |r| (c, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(c, r)| {
            let case = specs[c].generate(cell_seed(seed, c, r));
            let cfg = SolveConfig {
                rng_seed: cell_seed(seed ^ 0x5eed, c, r),
                ..cfg.clone()
            };
            methods.iter().map(|&m| run_one(&case, m, r, &cfg)).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Summary of the successful rows for one case and method.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub case: String,
    pub method: Method,
    pub solved: usize,
    pub failed: usize,
    pub median_dep: Option<f64>,
    pub mean_dep: Option<f64>,
    pub median_precs: Option<f64>,
    pub mean_precs: Option<f64>,
    pub median_cond_x: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Median and mean per (case, method), in order of first appearance.
pub fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(c, m)| *c == r.case && *m == r.method) {
            keys.push((r.case.clone(), r.method));
        }
    }
    keys.into_iter()
        .map(|(case, method)| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.case == case && r.method == method).collect();
            let ok: Vec<&&BenchRow> = group.iter().filter(|r| r.status == "ok").collect();
            let deps: Vec<f64> = ok.iter().filter_map(|r| r.dep).collect();
            let precs: Vec<f64> = ok.iter().filter_map(|r| r.precs.map(f64::from)).collect();
            let conds: Vec<f64> = ok.iter().filter_map(|r| r.cond_x).collect();
            Aggregate {
                case,
                method,
                solved: ok.len(),
                failed: group.len() - ok.len(),
                median_dep: median(&deps),
                mean_dep: mean(&deps),
                median_precs: median(&precs),
                mean_precs: mean(&precs),
                median_cond_x: median(&conds),
            }
        })
        .collect()
}

/// Shortest round-trip float in exponent form; `inf` for infinities.
pub fn fmt_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv<W: Write>(rows: &[BenchRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.3},{}",
            csv_field(&r.case),
            r.n,
            r.m,
            opt(r.k),
            r.method,
            r.repeat,
            opt(r.dep),
            opt(r.cond_x),
            r.precs.map(|p| p.to_string()).unwrap_or_default(),
            r.wall_ms,
            csv_field(&r.status),
        )?;
    }
    Ok(())
}

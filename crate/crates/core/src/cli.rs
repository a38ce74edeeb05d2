//! Command-line front end: `assign`, `bench` and `validate`.
//!
//! Problem and solution files are JSON objects with row-major nested arrays.
//! Floats are written in shortest round-trip form, so a parsed solution
//! serializes back to the same bytes.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 bad flags or
//! unreadable input, 3 rank-deficient `B` or uncontrollable pair, 4 a step
//! of the assignment failed, 5 a solution failed validation.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bench::{self, CaseSpec, Method};
use crate::error::Error;
use crate::matcore::RealMatrix;
use crate::model::{canonicalize_poles, new_system, Block, FeedbackSolution, PoleSpec, RobustnessReport, StepRecord, SystemPair};
use crate::solver::{self, SolveConfig, Tolerances};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SYSTEM: i32 = 3;
pub const EXIT_STEP: i32 = 4;
pub const EXIT_INVALID: i32 = 5;

/// Start count used for `o-schur-rob` in `bench` when `--multistart` is absent.
pub const BENCH_MULTISTART_DEFAULT: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "polecraft", version, about = "Robust pole assignment by real Schur forms")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a feedback matrix for a problem file.
    Assign(AssignArgs),
    /// Run the benchmark grid and write CSV.
    Bench(BenchArgs),
    /// Check a solution file against its problem file.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct AssignArgs {
    /// Problem file.
    #[arg(long)]
    input: PathBuf,
    /// Solution file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of starts; more than one runs the multi-start search.
    #[arg(long)]
    multistart: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Unit block scaling and no orthogonalization for pair steps.
    #[arg(long)]
    baseline: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("family").required(true).args(["example41", "random"])))]
struct BenchArgs {
    /// Structured example with one conjugate pair at 0.5 +/- k i.
    #[arg(long)]
    example41: bool,
    /// Random A, B and poles from a random feedback.
    #[arg(long)]
    random: bool,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Input counts for --random.
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    /// Imaginary parts for --example41.
    #[arg(long, value_delimiter = ',')]
    k: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL.to_vec())]
    methods: Vec<Method>,
    /// Start count for o-schur-rob.
    #[arg(long)]
    multistart: Option<usize>,
    /// CSV file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Solution file written by `assign`.
    #[arg(long)]
    solution: PathBuf,
    /// Problem file the solution was computed for.
    #[arg(long)]
    input: PathBuf,
}

/// Solver settings a problem file may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_residual_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multistart_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_mode: Option<bool>,
}

impl ConfigOverrides {
    pub fn apply(&self, base: SolveConfig) -> SolveConfig {
        SolveConfig {
            rank_tol: self.rank_tol.unwrap_or(base.rank_tol),
            step_residual_tol: self.step_residual_tol.unwrap_or(base.step_residual_tol),
            multistart_count: self.multistart_count.unwrap_or(base.multistart_count),
            rng_seed: self.rng_seed.unwrap_or(base.rng_seed),
            baseline_mode: self.baseline_mode.unwrap_or(base.baseline_mode),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// `[re, im]` per pole; complex poles appear with their conjugates.
    pub poles: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigOverrides>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub f: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
    pub report: RobustnessReport,
    pub step_log: Vec<StepRecord>,
}

/// A failure with the exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn parse(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_PARSE,
            message: message.into(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::UnmatchedConjugate { .. } | Error::DimensionMismatch(_) | Error::NonFinite => EXIT_PARSE,
        Error::NotControllable { .. } | Error::RankDeficientB => EXIT_SYSTEM,
        Error::AllStartsFailed { last, .. } => exit_code(last),
        _ => EXIT_STEP,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = match (e.step(), &e) {
            (Some(step), Error::AllStartsFailed { .. }) => format!("{e} (failing step {step})"),
            _ => e.to_string(),
        };
        Self {
            code: exit_code(&e),
            message,
        }
    }
}

pub fn to_rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Row-major nested array to a matrix with `cols` columns.
pub fn from_rows(field: &str, rows: &[Vec<f64>], cols: usize) -> Result<RealMatrix, Failure> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Failure::parse(format!(
                "field `{field}`: row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Failure::parse(format!("field `{field}`: entry ({i}, {j}) is not finite")));
        }
    }
    Ok(RealMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn expect_rows(field: &str, rows: &[Vec<f64>], n: usize) -> Result<(), Failure> {
    if rows.len() != n {
        return Err(Failure::parse(format!("field `{field}`: {} rows, expected {n}", rows.len())));
    }
    Ok(())
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::parse(format!("problem file: {e}")))
    }

    /// Checks dimensions and builds the system and pole list.
    pub fn build(&self) -> Result<(SystemPair, PoleSpec), Failure> {
        let n = self.a.len();
        if n == 0 {
            return Err(Failure::parse("field `a`: empty matrix"));
        }
        let a = from_rows("a", &self.a, n)?;
        expect_rows("b", &self.b, n)?;
        let m = self.b[0].len();
        if m == 0 {
            return Err(Failure::parse("field `b`: row 0 is empty"));
        }
        let b = from_rows("b", &self.b, m)?;
        if self.poles.len() != n {
            return Err(Failure::parse(format!(
                "field `poles`: {} poles given, expected {n}",
                self.poles.len()
            )));
        }
        let raw: Vec<Complex64> = self.poles.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        let poles = canonicalize_poles(&raw).map_err(|e| Failure::parse(format!("field `poles`: {e}")))?;
        let sys = new_system(a, b)?;
        Ok((sys, poles))
    }

    pub fn from_case(sys: &SystemPair, poles: &PoleSpec) -> Self {
        let poles = poles.expand().into_iter().map(|z| [z.re, z.im]).collect();
        Self {
            a: to_rows(&sys.a),
            b: to_rows(&sys.b),
            poles,
            config: None,
        }
    }
}

/// Reads block sizes off the subdiagonal of a quasi-triangular `T`.
pub fn blocks_of(t: &RealMatrix) -> Vec<Block> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut j = 0;
    while j < n {
        if j + 1 < n && t[(j + 1, j)] != 0.0 {
            blocks.push(Block::Two);
            j += 2;
        } else {
            blocks.push(Block::One);
            j += 1;
        }
    }
    blocks
}

impl SolutionFile {
    pub fn new(sol: &FeedbackSolution, report: RobustnessReport) -> Self {
        Self {
            f: to_rows(&sol.f),
            x: to_rows(&sol.x),
            t: to_rows(&sol.t),
            report,
            step_log: sol.step_log.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::parse(format!("solution file: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("solution serializes");
        s.push('\n');
        s
    }

    /// Rebuilds the solution for a system with `n` states and `m` inputs.
    pub fn to_solution(&self, n: usize, m: usize) -> Result<FeedbackSolution, Failure> {
        expect_rows("f", &self.f, m)?;
        expect_rows("x", &self.x, n)?;
        expect_rows("t", &self.t, n)?;
        let f = from_rows("f", &self.f, n)?;
        let x = from_rows("x", &self.x, n)?;
        let t = from_rows("t", &self.t, n)?;
        let blocks = blocks_of(&t);
        Ok(FeedbackSolution {
            orthogonal: true,
            dep_sq_accum: solver::departure_from_blocks(&t, &blocks),
            f,
            x,
            t,
            blocks,
            step_log: self.step_log.clone(),
        })
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::parse(format!("cannot read {}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    let res = match path {
        Some(p) => fs::write(p, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    };
    res.map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("cannot write output: {e}"),
    })
}

fn fmt_cond(c: Option<f64>) -> String {
    bench::fmt_float(c.unwrap_or(f64::INFINITY))
}

fn cmd_assign(args: &AssignArgs) -> Result<(), Failure> {
    let problem = ProblemFile::parse(&read(&args.input)?)?;
    let (sys, poles) = problem.build()?;
    let mut cfg = problem.config.clone().unwrap_or_default().apply(SolveConfig::default());
    if let Some(count) = args.multistart {
        cfg.multistart_count = count;
    }
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    cfg.baseline_mode |= args.baseline;
    let sol = if cfg.multistart_count > 1 {
        solver::assign_multistart(&sys, &poles, &cfg)?
    } else {
        solver::assign(&sys, &poles, &cfg)?
    };
    let report = solver::validate(&sol, &sys, &poles)?;
    let summary = format!(
        "dep {} cond_x {} precs {}",
        bench::fmt_float(report.dep),
        fmt_cond(report.cond_x),
        report.precs
    );
    write_out(args.output.as_deref(), &SolutionFile::new(&sol, report).to_json())?;
    if args.output.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn bench_specs(args: &BenchArgs) -> Result<Vec<CaseSpec>, Failure> {
    let mut specs = Vec::new();
    if args.example41 {
        if args.k.is_empty() {
            return Err(Failure::parse("--example41 needs --k"));
        }
        if !args.m.is_empty() {
            return Err(Failure::parse("--m applies to --random only"));
        }
        for &n in &args.n {
            if n < 3 {
                return Err(Failure::parse(format!("--n {n}: the example needs n >= 3")));
            }
            for &k in &args.k {
                if !(k > 0.0 && k.is_finite()) {
                    return Err(Failure::parse(format!("--k {k}: must be positive and finite")));
                }
                specs.push(CaseSpec::Example41 { n, k });
            }
        }
    } else {
        if args.m.is_empty() {
            return Err(Failure::parse("--random needs --m"));
        }
        if !args.k.is_empty() {
            return Err(Failure::parse("--k applies to --example41 only"));
        }
        for &n in &args.n {
            for &m in &args.m {
                if m == 0 || m > n {
                    return Err(Failure::parse(format!("--n {n} --m {m}: need 1 <= m <= n")));
                }
                specs.push(CaseSpec::Random { n, m });
            }
        }
    }
    Ok(specs)
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let specs = bench_specs(args)?;
    let cfg = SolveConfig {
        multistart_count: args.multistart.unwrap_or(BENCH_MULTISTART_DEFAULT),
        ..SolveConfig::default()
    };
    let rows = bench::run_suite(&specs, &args.methods, args.repeats, args.seed, &cfg);
    let mut csv = Vec::new();
    bench::write_csv(&rows, &mut csv).expect("writing to memory");
    write_out(args.output.as_deref(), &String::from_utf8(csv).expect("CSV is UTF-8"))?;
    for agg in bench::aggregate(&rows) {
        let opt = |x: Option<f64>| x.map(bench::fmt_float).unwrap_or_else(|| "-".into());
        eprintln!(
            "{} {}: solved {}/{} median dep {} mean dep {} median precs {}",
            agg.case,
            agg.method,
            agg.solved,
            agg.solved + agg.failed,
            opt(agg.median_dep),
            opt(agg.mean_dep),
            agg.median_precs.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
        );
    }
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), Failure> {
    let problem = ProblemFile::parse(&read(&args.input)?)?;
    let stored = SolutionFile::parse(&read(&args.solution)?)?;
    let (sys, poles) = problem.build()?;
    let sol = stored.to_solution(sys.n(), sys.m())?;
    let report = solver::validate(&sol, &sys, &poles)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    let failed = solver::failures(&report, sys.n(), &Tolerances::default());
    if failed.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = failed
        .iter()
        .map(|(name, v)| format!("{name} = {}", bench::fmt_float(*v)))
        .collect();
    Err(Failure {
        code: EXIT_INVALID,
        message: format!("validation failed: {}", list.join(", ")),
    })
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    let res = match &cli.cmd {
        Command::Assign(a) => cmd_assign(a),
        Command::Bench(b) => cmd_bench(b),
        Command::Validate(v) => cmd_validate(v),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(f) => {
            log::debug!("exit {}", f.code);
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

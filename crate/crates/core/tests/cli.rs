//! End-to-end runs of the `polecraft` binary, one or more per exit status.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polecraft::bench;
use polecraft::cli::{ProblemFile, SolutionFile};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn polecraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polecraft")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn assign_to(dir: &Path, input: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let sol = dir.join("solution.json");
    let mut args = vec!["assign", "--input", p(input), "--output", p(&sol)];
    args.extend_from_slice(extra);
    (polecraft(&args), sol)
}

#[test]
fn assign_round_trip_random_problem() {
    let dir = tempfile::tempdir().unwrap();
    let case = bench::gen_random(8, 3, 17);
    let input = dir.path().join("problem.json");
    std::fs::write(&input, serde_json::to_string(&ProblemFile::from_case(&case.sys, &case.poles)).unwrap()).unwrap();
    let (out, sol) = assign_to(dir.path(), &input, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = stdout(&out);
    let fields: Vec<&str> = summary.split_whitespace().collect();
    assert_eq!(fields.len(), 6, "{summary}");
    assert_eq!((fields[0], fields[2], fields[4]), ("dep", "cond_x", "precs"));
    let text = std::fs::read_to_string(&sol).unwrap();
    let parsed = SolutionFile::parse(&text).unwrap();
    assert!(parsed.report.precs >= 8);
    assert_eq!(fields[5], parsed.report.precs.to_string());
    assert_eq!(parsed.to_json(), text);

    let out = polecraft(&["validate", "--solution", p(&sol), "--input", p(&input)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("\"orth_residual\""));
}

#[test]
fn assign_to_stdout_and_config_from_file() {
    let out = polecraft(&["assign", "--input", p(&data("with_config.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sol = SolutionFile::parse(&stdout(&out)).unwrap();
    assert_eq!(sol.f.len(), 2);
    assert!(stderr(&out).starts_with("dep "));
}

#[test]
fn multistart_flag_never_worse() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("companion3.json");
    let (single, sol) = assign_to(dir.path(), &input, &[]);
    assert_eq!(code(&single), 0);
    let single = SolutionFile::parse(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    let (multi, sol) = assign_to(dir.path(), &input, &["--multistart", "8", "--seed", "3"]);
    assert_eq!(code(&multi), 0);
    let multi = SolutionFile::parse(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    assert!(multi.report.dep <= single.report.dep * (1.0 + 1e-12));
}

#[test]
fn exit_2_ragged_matrix() {
    let out = polecraft(&["assign", "--input", p(&data("ragged.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("field `a`: row 1 has 2 entries, expected 3"), "{}", stderr(&out));
}

#[test]
fn exit_2_syntax_error_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.json");
    std::fs::write(&input, "{\n  \"a\": [[1, 2],\n  \"b\": [[1]]\n}\n").unwrap();
    let out = polecraft(&["assign", "--input", p(&input)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn exit_2_missing_file() {
    let out = polecraft(&["assign", "--input", "/nonexistent/problem.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exit_2_unmatched_conjugate_names_pole() {
    let out = polecraft(&["assign", "--input", p(&data("unmatched.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pole 1 (-2+1i)"), "{}", stderr(&out));
}

#[test]
fn exit_3_uncontrollable() {
    let out = polecraft(&["assign", "--input", p(&data("uncontrollable.json"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("not controllable"), "{}", stderr(&out));
}

#[test]
fn exit_3_rank_deficient_b() {
    let out = polecraft(&["assign", "--input", p(&data("rank_deficient_b.json"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn exit_4_no_viable_candidate_names_step() {
    let out = polecraft(&["assign", "--input", p(&data("near_real_pair.json"))]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("step 1: no viable candidate"), "{}", stderr(&out));
}

#[test]
fn exit_1_unwritable_output() {
    let out = polecraft(&[
        "assign",
        "--input",
        p(&data("companion3.json")),
        "--output",
        "/nonexistent/dir/solution.json",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn exit_5_corrupted_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("companion3.json");
    let (out, sol) = assign_to(dir.path(), &input, &[]);
    assert_eq!(code(&out), 0);
    let mut file = SolutionFile::parse(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    file.f[0][1] += 0.5;
    std::fs::write(&sol, file.to_json()).unwrap();
    let out = polecraft(&["validate", "--solution", p(&sol), "--input", p(&input)]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("schur_residual"), "{}", stderr(&out));
    let printed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(printed["schur_residual"].as_f64().unwrap() > 1e-2);
}

#[test]
fn exit_5_baseline_solution_flags_orthogonality() {
    let dir = tempfile::tempdir().unwrap();
    let input = data("companion3.json");
    let (out, sol) = assign_to(dir.path(), &input, &["--baseline"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = polecraft(&["validate", "--solution", p(&sol), "--input", p(&input)]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("orth_residual"), "{}", stderr(&out));
}

#[test]
fn exit_2_solution_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (out, sol) = assign_to(dir.path(), &data("with_config.json"), &[]);
    assert_eq!(code(&out), 0);
    let out = polecraft(&["validate", "--solution", p(&sol), "--input", p(&data("companion3.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("field `f`"), "{}", stderr(&out));
}

fn csv_rows(out: &Output, path: &Path) -> Vec<String> {
    assert_eq!(code(out), 0, "{}", stderr(out));
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn bench_example_rows_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = polecraft(&[
        "bench", "--example41", "--n", "4", "--k", "1e3", "--repeats", "3", "--seed", "7", "--output", p(&csv),
    ]);
    let lines = csv_rows(&out, &csv);
    assert_eq!(lines[0], "case,n,m,k,method,repeat,dep,cond_x,precs,wall_ms,status");
    for method in ["schur-rob", "o-schur-rob", "baseline-schur"] {
        let n = lines.iter().filter(|l| l.split(',').nth(4) == Some(method)).count();
        assert_eq!(n, 3, "{method}");
    }
    assert!(lines[1..].iter().all(|l| l.starts_with("example41-n4-k1e3,4,3,1e3,") && l.ends_with(",ok")));
}

#[test]
fn bench_random_rows_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = polecraft(&[
        "bench", "--random", "--n", "8", "--m", "4", "--repeats", "2", "--methods", "schur-rob,baseline-schur",
        "--output", p(&csv),
    ]);
    let lines = csv_rows(&out, &csv);
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1..].iter().all(|l| l.starts_with("random-n8-m4,8,4,,")));
}

#[test]
fn bench_to_stdout_repeats_exactly() {
    let args = ["bench", "--random", "--n", "5", "--m", "2", "--repeats", "2", "--seed", "5"];
    let strip = |out: &Output| -> Vec<String> {
        stdout(out)
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(9);
                f.join(",")
            })
            .collect()
    };
    let a = polecraft(&args);
    let b = polecraft(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a).len(), 1 + 2 * 3);
}

#[test]
fn exit_2_bad_bench_flags() {
    for args in [
        &["bench", "--n", "4"][..],
        &["bench", "--example41", "--random", "--n", "4", "--k", "10"],
        &["bench", "--example41", "--n", "4"],
        &["bench", "--random", "--n", "4", "--m", "0"],
        &["bench", "--example41", "--n", "4", "--k", "-1"],
        &["bench", "--example41", "--n", "4", "--k", "ten"],
        &["bench", "--random", "--n", "4", "--m", "2", "--methods", "place"],
        &["assign"],
        &["solve"],
    ] {
        assert_eq!(code(&polecraft(args)), 2, "{args:?}");
    }
}

#[test]
fn help_exits_0() {
    let out = polecraft(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("assign"));
}

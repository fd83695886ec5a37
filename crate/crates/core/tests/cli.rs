//! End-to-end runs of the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctmdp::cli::Report;
use tempfile::TempDir;

const TWO_STATE: &str = r#"{
  "states": 2,
  "actions": [[[0.0]], [[0.0]]],
  "rates": [[[-1.0, 1.0]], [[1.0, -1.0]]],
  "costs": [[[0.0], [1.0]]],
  "constraint_bounds": [],
  "horizon": 1.0,
  "initial_dist": [1.0, 0.0],
  "weight": [1.0, 1.0]
}"#;

const MIXING: &str = r#"{
  "states": 1,
  "actions": [[[0.0], [1.0]]],
  "rates": [[[0.0], [0.0]]],
  "costs": [[[1.0, 0.0]], [[0.0, 2.0]]],
  "constraint_bounds": [1.0],
  "horizon": 1.0,
  "initial_dist": [1.0],
  "weight": [1.0]
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctmdp"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn file(dir: &TempDir, name: &str, body: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn out_dir(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn report(dir: &str) -> Report {
    Report::parse(&fs::read_to_string(Path::new(dir).join("report.txt")).unwrap())
}

fn num(r: &Report, key: &str) -> f64 {
    r.get(key)
        .unwrap_or_else(|| panic!("missing {key}"))
        .parse()
        .unwrap()
}

#[test]
fn validate_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let o = out_dir(&tmp, "v");
    let ok = run(&["validate", "--preset", "birth-death", "--out", &o]);
    assert_eq!(code(&ok), 0);
    let stdout = String::from_utf8_lossy(&ok.stdout);
    for line in ["rho1", "rho2", "rho3", "certificate_ok"] {
        assert!(stdout.contains(line), "{line} missing");
    }
    let r = report(&o);
    assert_eq!(
        (num(&r, "rho1"), num(&r, "rho2"), num(&r, "rho3")),
        (3.0, 17.0, 57.0)
    );
    assert_eq!(
        (num(&r, "b1"), num(&r, "b2"), num(&r, "b3"), num(&r, "L")),
        (1.0, 5.0, 9.0, 4.0)
    );

    let broken = file(
        &tmp,
        "broken.json",
        &TWO_STATE.replace("[[[-1.0, 1.0]]", "[[[-1.0, 2.0]]"),
    );
    assert_eq!(
        code(&run(&["validate", "--model", &broken, "--out", &o])),
        1
    );
    assert!(report(&o)
        .get("violation_0")
        .unwrap()
        .contains("not conservative"));

    let missing = tmp.path().join("absent.json");
    assert_eq!(
        code(&run(&[
            "validate",
            "--model",
            missing.to_str().unwrap(),
            "--out",
            &o
        ])),
        2
    );
    let garbage = file(&tmp, "garbage.json", "{ not json");
    assert_eq!(
        code(&run(&["validate", "--model", &garbage, "--out", &o])),
        2
    );
}

#[test]
fn usage_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let o = out_dir(&tmp, "u");
    assert_eq!(code(&run(&["solve", "--out", &o])), 2);
    assert_eq!(
        code(&run(&[
            "solve",
            "--preset",
            "birth-death",
            "--d",
            "0=1",
            "--out",
            &o
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "solve",
            "--preset",
            "birth-death",
            "--d",
            "2=1",
            "--out",
            &o
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "solve",
            "--preset",
            "birth-death",
            "--steps",
            "0",
            "--out",
            &o
        ])),
        2
    );
    assert_eq!(
        code(&run(&["constrain", "--preset", "birth-death", "--out", &o])),
        2
    );
    assert_eq!(
        code(&run(&[
            "simulate",
            "--preset",
            "birth-death",
            "--replicates",
            "1",
            "--out",
            &o
        ])),
        2
    );
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn solve_writes_the_closed_form_value() {
    let tmp = TempDir::new().unwrap();
    let model = file(&tmp, "two.json", TWO_STATE);
    let o = out_dir(&tmp, "s");
    assert_eq!(
        code(&run(&[
            "solve", "--model", &model, "--steps", "2000", "--out", &o
        ])),
        0
    );
    let csv = fs::read_to_string(Path::new(&o).join("value.csv")).unwrap();
    let first = csv.lines().nth(1).unwrap();
    let v: f64 = first.strip_prefix("0,0,").unwrap().parse().unwrap();
    assert!((v - 0.283834).abs() < 1e-6, "{v}");
    assert!(Path::new(&o).join("policy.csv").exists());
    assert_eq!(num(&report(&o), "envelope_violations"), 0.0);

    let zero = file(
        &tmp,
        "zero.json",
        &TWO_STATE.replace("[[[0.0], [1.0]]]", "[[[0.0], [0.0]]]"),
    );
    assert_eq!(code(&run(&["solve", "--model", &zero, "--out", &o])), 0);
    let csv = fs::read_to_string(Path::new(&o).join("value.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn stability_violation_suggests_steps() {
    let tmp = TempDir::new().unwrap();
    let o = out_dir(&tmp, "x");
    let out = run(&[
        "solve",
        "--preset",
        "birth-death",
        "--steps",
        "10",
        "--out",
        &o,
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_steps >= 114"));
}

#[test]
fn constrain_mixing_and_infeasible() {
    let tmp = TempDir::new().unwrap();
    let model = file(&tmp, "mix.json", MIXING);
    let o = out_dir(&tmp, "c");
    assert_eq!(
        code(&run(&[
            "constrain",
            "--model",
            &model,
            "--steps",
            "20",
            "--out",
            &o
        ])),
        0
    );
    let r = report(&o);
    assert!((num(&r, "primal") - 0.5).abs() <= 1e-9);
    assert!((num(&r, "dual") - 0.5).abs() <= 1e-9);
    assert!(num(&r, "gap").abs() <= 1e-7);
    assert!(Path::new(&o).join("occupation.csv").exists());

    let out = run(&[
        "constrain",
        "--model",
        &model,
        "--d",
        "1=-0.1",
        "--steps",
        "20",
        "--out",
        &o,
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(report(&o).get("status"), Some("infeasible"));
}

#[test]
fn slack_constraint_reproduces_the_unconstrained_value() {
    let tmp = TempDir::new().unwrap();
    let (c, s) = (out_dir(&tmp, "c"), out_dir(&tmp, "s"));
    let common = [
        "--preset",
        "birth-death",
        "--m",
        "8",
        "--initial-state",
        "2",
        "--steps",
        "1000",
    ];
    let args_c: Vec<&str> = ["constrain"]
        .iter()
        .chain(&common)
        .copied()
        .chain(["--d", "1=10", "--out", &c])
        .collect();
    let args_s: Vec<&str> = ["solve"]
        .iter()
        .chain(&common)
        .copied()
        .chain(["--out", &s])
        .collect();
    assert_eq!(code(&run(&args_c)), 0);
    assert_eq!(code(&run(&args_s)), 0);
    let rc = report(&c);
    assert_eq!(num(&rc, "u_1"), 0.0);
    let primal = num(&rc, "primal");
    let value = num(&report(&s), "value_initial");
    // Euler occupation LP against the RK4 value: first order in dt.
    assert!((primal - value).abs() <= 2e-3, "{primal} vs {value}");
}

#[test]
fn simulate_checks_pass() {
    let tmp = TempDir::new().unwrap();
    let model = file(&tmp, "two.json", TWO_STATE);
    let o = out_dir(&tmp, "m");
    let out = run(&[
        "simulate",
        "--model",
        &model,
        "--replicates",
        "20000",
        "--subset",
        "1",
        "--out",
        &o,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&o);
    assert_eq!(r.get("forward_covers_zero"), Some("true"));
    assert_eq!(r.get("weight_bound_violated"), Some("false"));
    assert!(Path::new(&o).join("trajectory.csv").exists());
}

fn snapshot(dir: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (PathBuf::from(p.file_name().unwrap()), bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let preset = [
        "--preset",
        "birth-death",
        "--m",
        "10",
        "--agrid",
        "5",
        "--initial-state",
        "3",
    ];
    let runs: [(&str, &[&str]); 4] = [
        ("validate", &[]),
        ("solve", &[]),
        ("constrain", &["--d", "1=1.0"]),
        (
            "simulate",
            &["--replicates", "5000", "--seed", "7", "--policy", "uniform"],
        ),
    ];
    for (cmd, extra) in runs {
        let mut seen = Vec::new();
        for rep in 0..2 {
            let o = out_dir(&tmp, &format!("{cmd}{rep}"));
            let mut args = vec![cmd];
            args.extend(preset);
            args.extend(extra);
            args.extend(["--out", &o]);
            let out = run(&args);
            assert_eq!(
                code(&out),
                0,
                "{cmd}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            seen.push((snapshot(&o), out.stdout));
        }
        assert!(!seen[0].0.is_empty());
        assert_eq!(seen[0], seen[1], "{cmd} differs between runs");
    }
}

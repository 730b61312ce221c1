use std::path::Path;
use std::process::{Command, Output};

fn distgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distgen"))
        .args(args)
        .output()
        .expect("run distgen")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SWEEP: [&str; 10] = ["--n", "6", "--p", "12", "--grid", "3|9;6|6;9|3", "--trials", "5", "--jobs", "2"];

#[test]
fn predict_prints_coefficients() {
    let out = distgen(&["predict", "--n", "50", "--p", "150", "--sizes", "75,75"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("gamma   = (2.08333e0, 2.08333e0)"), "{text}");
    assert!(text.contains("alpha   = (1.02083e0, 1.02083e0)"), "{text}");
}

#[test]
fn predict_critical_partition_is_infinite() {
    let out = distgen(&["predict", "--n", "50", "--p", "150", "--sizes", "50,100"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("epsilon_G = inf"));
    assert!(text.contains("block 1 has p_k = 50"));
}

#[test]
fn usage_errors_name_the_flag() {
    let out = distgen(&["sweep-first-iter", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--trials") && err.contains(">= 1"), "{err}");

    let out = distgen(&["predict", "--format", "csv", "--out", "/tmp/never-written.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_csv_and_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("first_round.csv");
    let json = dir.path().join("first_round.json");

    let mut args = vec!["sweep-first-iter"];
    args.extend(SMALL_SWEEP);
    args.extend(["--out", path_str(&csv)]);
    assert_eq!(distgen(&args).status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(
        "n,p,K,sizes,lambda,N,T,seed,empirical_first_iter,theory_first_iter,gen_error,train_error,failures,wall_time_ms\n"
    ));
    assert!(text.contains("6,12,2,6|6,0,5,1,1,"));
    assert!(text.contains(",inf,"), "critical cell carries inf:\n{text}");

    let shown = distgen(&["show", "--from-file", path_str(&csv)]);
    assert_eq!(shown.status.code(), Some(0));
    assert!(stdout(&shown).contains("6|6"));

    // the JSON result replays through --config and reproduces the CSV byte for byte
    let mut args = vec!["sweep-first-iter"];
    args.extend(SMALL_SWEEP);
    args.extend(["--out", path_str(&json)]);
    assert_eq!(distgen(&args).status.code(), Some(0));
    assert_eq!(distgen(&["show", "--from-file", path_str(&json)]).status.code(), Some(0));

    let replay = dir.path().join("replay.csv");
    let out = distgen(&["sweep-first-iter", "--config", path_str(&json), "--jobs", "1", "--out", path_str(&replay)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(&replay).unwrap(), std::fs::read(&csv).unwrap());
}

#[test]
fn cli_values_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"n": 6, "p": 12, "K": 2, "partition_grid": [[4, 8]], "N": 9, "T": 20, "seed": 3}"#,
    )
    .unwrap();
    let out_path = dir.path().join("out.csv");
    let out = distgen(&[
        "sweep-converged",
        "--config",
        path_str(&config),
        "--trials",
        "4",
        "--out",
        path_str(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("6,12,2,4|8,0,4,20,3,"), "{row}");

    std::fs::write(&config, r#"{"n": 6, "bogus": 1}"#).unwrap();
    let out = distgen(&["sweep-converged", "--config", path_str(&config)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_instance_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let base = ["solve", "--n", "8", "--p", "20", "--sizes", "5,15", "--iters", "50"];

    let mut args = base.to_vec();
    args.extend(["--save-instance", path_str(&inst), "--out", path_str(&first)]);
    assert_eq!(distgen(&args).status.code(), Some(0));
    let mut args = base.to_vec();
    args.extend(["--instance", path_str(&inst), "--out", path_str(&second)]);
    assert_eq!(distgen(&args).status.code(), Some(0));

    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&first).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&second).unwrap()).unwrap();
    assert_eq!(a["trace"], b["trace"]);
    assert_eq!(a["train_error"], b["train_error"]);

    for file in [&inst, &first] {
        assert_eq!(distgen(&["show", "--from-file", path_str(file)]).status.code(), Some(0));
    }
    let trace_csv = dir.path().join("trace.csv");
    let mut args = base.to_vec();
    args.extend(["--out", path_str(&trace_csv)]);
    assert_eq!(distgen(&args).status.code(), Some(0));
    let shown = distgen(&["show", "--from-file", path_str(&trace_csv)]);
    assert_eq!(shown.status.code(), Some(0));
    assert!(stdout(&shown).contains("t =   50"));
}

#[test]
fn json_outputs_are_readable_by_show() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, Vec<&str>); 4] = [
        ("predict.json", vec!["predict", "--sizes", "60,90", "--steps", "3"]),
        ("advise.json", vec!["advise", "--margin", "5"]),
        ("assess.json", vec!["advise", "--sizes", "50,100"]),
        ("projection.json", vec!["validate", "projection", "--n", "3", "--pc", "5", "--trials", "200"]),
    ];
    for (name, mut args) in cases {
        let path = dir.path().join(name);
        args.extend(["--out", path_str(&path)]);
        let out = distgen(&args);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let shown = distgen(&["show", "--from-file", path_str(&path)]);
        assert_eq!(shown.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&shown.stderr));
    }
}

#[test]
fn advise_reference_setting() {
    let out = distgen(&["advise", "--n", "50", "--p", "150", "--k", "2", "--margin", "5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("recommended sizes = [75, 75]"));

    let out = distgen(&["advise", "--n", "50", "--p", "50", "--k", "1", "--margin", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("infeasible"), "{}", stdout(&out));
}

#[test]
fn validators_report_exit_codes() {
    let out = distgen(&["validate", "closed-form", "--n", "4", "--p", "6", "--sizes", "3,3", "--iters", "20", "--trials", "5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("result         = PASS"));

    let out = distgen(&["validate", "wishart", "--n", "6", "--pk", "6", "--trials", "64", "--demo"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("not asserted"));
}

use std::path::Path;
use std::process::{Command, Output};

fn mondrian(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mondrian"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mondrian(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    mondrian(dir, args).status.code().unwrap()
}

#[test]
fn fit_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--task", "poisson", "--n", "300", "--seed", "1", "--out", "p.csv"]);
    ok(d, &["fit", "--input", "p.csv", "--loss", "poisson", "--lambda", "3", "--trees", "4", "--out", "m.json"]);
    let preds = ok(d, &["predict", "--model", "m.json", "--input", "p.csv"]);
    let mut lines = preds.lines();
    assert_eq!(lines.next(), Some("x1,yhat"));
    assert_eq!(lines.count(), 300);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.csv"), "x1,y\n1.5,2\n").unwrap();
    std::fs::write(d.join("good.csv"), "x1,y\n0.5,2\n0.25,1\n").unwrap();
    assert_eq!(code(d, &["fit", "--input", "bad.csv", "--lambda", "1", "--out", "m.json"]), 2);
    assert_eq!(code(d, &["fit", "--input", "missing.csv", "--lambda", "1", "--out", "m.json"]), 2);
    assert_eq!(code(d, &["fit", "--input", "good.csv", "--loss", "nope", "--lambda", "1", "--out", "m.json"]), 2);
    assert_eq!(code(d, &["fit", "--input", "good.csv", "--alpha", "1.5", "--out", "m.json"]), 2);
    assert_eq!(
        code(d, &["fit", "--input", "good.csv", "--lambda", "1e6", "--leaf-cap", "50", "--trees", "2", "--out", "m.json"]),
        3
    );
    // --clamp projects the stray coordinate instead
    ok(d, &["fit", "--input", "bad.csv", "--clamp", "--lambda", "1", "--trees", "2", "--out", "m.json"]);
    assert_eq!(code(d, &["classify", "--model", "m.json", "--input", "good.csv"]), 2);
    assert_eq!(code(d, &["partition-stats", "--d", "1", "--lambda", "1", "--trees", "10"]), 2);
}

#[test]
fn classify_emits_signs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--task", "classification", "--n", "2000", "--seed", "2", "--out", "c.csv"]);
    ok(d, &["fit", "--input", "c.csv", "--loss", "phi2", "--lambda", "4", "--trees", "10", "--out", "m.json"]);
    std::fs::write(d.join("q.csv"), "x1\n0.25\n0.75\n").unwrap();
    assert_eq!(ok(d, &["classify", "--model", "m.json", "--input", "q.csv"]), "x1,label\n0.25,1\n0.75,-1\n");
}

#[test]
fn select_lambda_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--task", "gaussian", "--n", "200", "--seed", "3", "--out", "g.csv"]);
    let out = ok(d, &["select-lambda", "--input", "g.csv", "--alpha", "1"]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("lambda,risk,penalty,pen_total"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert_eq!(first[1], first[3]);
}

#[test]
fn density_writes_model_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--task", "density", "--n", "500", "--seed", "4", "--out", "x.csv"]);
    ok(d, &["density", "--input", "x.csv", "--lambda", "4", "--trees", "3", "--out", "m.json", "--grid", "20", "--grid-out", "g.csv"]);
    let grid = std::fs::read_to_string(d.join("g.csv")).unwrap();
    let values: Vec<f64> = grid.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 20);
    let mean = values.iter().sum::<f64>() / 20.0;
    assert!(values.iter().all(|&v| v > 0.0));
    assert!((mean - 1.0).abs() < 0.1, "{mean}");
    // the same model through the generic fit command
    ok(d, &["fit", "--input", "x.csv", "--loss", "density", "--lambda", "4", "--trees", "3", "--out", "m2.json"]);
    assert_eq!(std::fs::read(d.join("m.json")).unwrap(), std::fs::read(d.join("m2.json")).unwrap());
}

#[test]
fn converge_time_column_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["converge", "--n-grid", "100,200", "--reps", "1", "--trees", "3", "--test-points", "200"];
    let plain = ok(d, &args);
    assert!(plain.lines().skip(1).all(|l| l.ends_with(",0")));
    let mut timed = args.to_vec();
    timed.push("--record-time");
    let timed = ok(d, &timed);
    assert_eq!(plain.lines().count(), timed.lines().count());
}

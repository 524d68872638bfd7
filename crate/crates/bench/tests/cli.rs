use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .output()
        .expect("spawn bench")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(bench(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(bench(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        bench(&["run", "--impl", "heap", "--phases", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(
        bench(&["run", "--impl", "nuddle", "--phases", "x", "--line-size", "96"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = bench(&["run", "--impl", "nuddle", "--phases", "no_such_preset"]);
    assert_eq!(o.status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "[[phase]]\nduration_s = 1\nkey_range = 10\nthreads = 0\ninsert_pct = 0.5\n",
    )
    .unwrap();
    assert_eq!(
        bench(&["run", "--impl", "nuddle", "--phases", p(&bad)]).status.code(),
        Some(1)
    );
    let o = bench(&["run", "--impl", "ffwd", "--servers", "2", "--phases", "dynamic_range"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exactly one server"));
}

#[test]
fn run_train_predict_plot() {
    let dir = tempfile::tempdir().unwrap();
    let phases = dir.path().join("phases.toml");
    fs::write(
        &phases,
        "[[phase]]\nduration_s = 0.6\nsize = 500\nkey_range = 2048\nthreads = 3\ninsert_pct = 0.2\n\n\
         [[phase]]\nduration_s = 0.6\nkey_range = 2048\nthreads = 3\ninsert_pct = 0.9\n",
    )
    .unwrap();

    // A planted stump: insert-heavy workloads go oblivious, the rest aware.
    let samples = dir.path().join("samples.csv");
    let mut csv = String::from("n_threads,size,key_range,insert_pct,thr_obl,thr_aware,label\n");
    for i in 0..40 {
        let pct = i as f64 / 40.0;
        let label = if pct > 0.5 { 1 } else { 2 };
        csv.push_str(&format!("{},1000,2048,{pct},1,1,{label}\n", 2 + i % 5));
    }
    fs::write(&samples, csv).unwrap();
    let tree = dir.path().join("tree.txt");
    let o = ok(bench(&[
        "train",
        "--in",
        p(&samples),
        "--out",
        p(&tree),
        "--holdout",
        "0",
    ]));
    let text = stdout(&o);
    assert!(text.starts_with("nodes=3 depth=1 leaves=2"), "{text}");
    assert!(text.contains("train_accuracy=1.0000"), "{text}");

    let o = ok(bench(&["predict", "--tree", p(&tree), "--features", "4,1000,2048,0.9"]));
    assert_eq!(stdout(&o).trim(), "class=1 numa-oblivious");
    let o = ok(bench(&["predict", "--tree", p(&tree), "--features", "4,1000,2048,0.1"]));
    assert_eq!(stdout(&o).trim(), "class=2 numa-aware");
    assert_eq!(
        bench(&["predict", "--tree", p(&tree), "--features", "4,1000"])
            .status
            .code(),
        Some(1)
    );

    let out = dir.path().join("run.csv");
    let o = ok(bench(&[
        "run",
        "--impl",
        "smartpq",
        "--phases",
        p(&phases),
        "--csv",
        p(&out),
        "--tree",
        p(&tree),
        "--decision-ms",
        "100",
        "--sample-ms",
        "200",
        "--servers",
        "1",
    ]));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("audit ok"), "{err}");
    let rows = fs::read_to_string(&out).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next(), Some("time_s,thr_ops,mode"));
    let body: Vec<&str> = lines.collect();
    assert!((5..=7).contains(&body.len()), "{rows}");
    // Aware while deletes dominate, oblivious once inserts do.
    assert!(err.contains("transition"), "{err}");
    let modes: Vec<&str> = body.iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(
        modes.contains(&"numa-oblivious") && modes.contains(&"numa-aware"),
        "{rows}"
    );

    let plot = dir.path().join("run.dat");
    ok(bench(&["plot", "--in", p(&out), p(&out), "--out", p(&plot)]));
    let dat = fs::read_to_string(&plot).unwrap();
    assert!(dat.starts_with("# time_s thr_mops mode"));
    assert_eq!(
        dat.matches("\n\n\n").count(),
        1,
        "two blocks separated by two blank lines"
    );
}

#[test]
fn run_writes_csv_to_stdout_for_presets() {
    let o = ok(bench(&[
        "run",
        "--impl",
        "oblivious",
        "--phases",
        "dynamic_threads",
        "--max-threads",
        "2",
        "--phase-seconds",
        "0.2",
        "--sample-ms",
        "200",
        "--delete",
        "exact",
    ]));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("time_s,thr_ops,mode"));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.lines().filter(|l| l.starts_with("phase ")).count() >= 2, "{err}");
}

#[test]
fn gen_training_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(
        &grid,
        "duration_s = 0.05\nthreads = [2, 3]\nsize = [10, 100]\nkey_range = [100, 1000]\ninsert_pct = [0.25, 0.75]\n",
    )
    .unwrap();
    let out = dir.path().join("s.csv");
    let o = ok(bench(&["gen-training", "--grid", p(&grid), "--out", p(&out)]));
    assert!(stdout(&o).contains("wrote 16 samples"));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("n_threads,size,key_range,insert_pct,thr_obl,thr_aware,label")
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 16);
    for r in &rows {
        assert!(r[4] > 0.0 && r[5] > 0.0, "{r:?}");
        let label = r[6] as u8;
        let expect = if (r[4] - r[5]).abs() < 1.5e6 {
            0
        } else if r[4] > r[5] {
            1
        } else {
            2
        };
        assert_eq!(label, expect, "{r:?}");
    }
    // Appending keeps one header.
    ok(bench(&[
        "gen-training",
        "--grid",
        p(&grid),
        "--out",
        p(&out),
        "--duration",
        "0.02",
    ]));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 33);
    let o = ok(bench(&[
        "train",
        "--in",
        p(&out),
        "--out",
        p(&dir.path().join("t.txt")),
    ]));
    assert!(stdout(&o).contains("holdout_accuracy="));
}

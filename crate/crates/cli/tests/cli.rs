use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lrgw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrgw")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_pair(dir: &Path, n: &str) {
    let o = lrgw(dir, &["gen", "--kind", "isometric_pair", "--k", "3", "--beta", "5", "--n", n, "--seed", "1", "--out", "p.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gen_writes_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrgw(dir.path(), &["gen", "--kind", "unit_square", "--n", "100", "--seed", "7", "--out", "x.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("x.csv")).unwrap();
    assert_eq!(text.lines().count(), 100);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("x.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "gen");
    assert!(manifest["command_line"].as_array().unwrap().iter().any(|a| a == "unit_square"));
}

#[test]
fn gen_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lrgw(dir.path(), &["gen", "--kind", "unit_square", "--out", "x.csv"])), 2);
    let o = lrgw(dir.path(), &["gen", "--kind", "blobs", "--k", "2", "--beta", "1e9", "--n", "10", "--out", "b.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rejection budget"), "{}", stderr(&o));
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.csv", "b.csv"] {
        let o = lrgw(dir.path(), &["gen", "--kind", "mixture", "--k", "3", "--n", "50", "--seed", "4", "--out", out, "--deterministic"]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn lin_lr_writes_factors_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    gen_pair(dir.path(), "120");
    let o = lrgw(
        dir.path(),
        &["solve", "--method", "lin-lr", "--source", "p.csv", "--target", "p.target.csv", "--rank", "4", "--outer-iter", "7", "--stop-tol", "0", "--out-prefix", "run"],
    );
    assert_eq!(code(&o), 3, "budget stop: {}", stderr(&o));
    for f in ["run.Q.csv", "run.R.csv", "run.g.csv", "run.report.csv", "run.manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(dir.path().join("run.report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "iter,loss,delta,inner_iters,elapsed_ms");
    assert_eq!(report.lines().count(), 8);
    let t = lrgw::datasets_io::load_low_rank(dir.path().join("run"), 1e-10, 1e-2).unwrap();
    assert_eq!(t.rank(), 4);
}

#[test]
fn ent_on_identical_clouds_beats_the_trivial_coupling() {
    let dir = tempfile::tempdir().unwrap();
    gen_pair(dir.path(), "60");
    let o = lrgw(
        dir.path(),
        &["solve", "--method", "ent", "--source", "p.csv", "--target", "p.csv", "--epsilon", "1e-4", "--outer-iter", "100", "--inner-max-iter", "20000", "--out-prefix", "e"],
    );
    assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("e.manifest.json")).unwrap()).unwrap();
    let final_loss = manifest["details"]["final_loss"].as_f64().unwrap();
    let x = lrgw::datasets_io::load_point_cloud(dir.path().join("p.csv")).unwrap();
    let x = x.scaled(x.diameter_bound());
    let c = lrgw::costs::dense_cost(&x, 2.0).unwrap();
    let w = lrgw::linalg::uniform(60);
    let trivial = lrgw::oracle_metrics::gw_quadruple_sum(c.values(), c.values(), lrgw::sinkhorn::Coupling::product(w.view(), w.view()).plan.view()).unwrap();
    assert!(final_loss <= 1e-3 * trivial, "{final_loss} vs trivial {trivial}");
    assert!(dir.path().join("e.coupling.csv").exists());
}

#[test]
fn factored_methods_reject_dense_costs() {
    let dir = tempfile::tempdir().unwrap();
    gen_pair(dir.path(), "30");
    let c = lrgw::costs::dense_cost(&lrgw::datasets_io::load_point_cloud(dir.path().join("p.csv")).unwrap(), 1.0).unwrap();
    lrgw::datasets_io::save_coupling(dir.path().join("c.csv"), c.values()).unwrap();
    for method in ["lin-lr", "quad-ent"] {
        let o = lrgw(dir.path(), &["solve", "--method", method, "--source-cost", "c.csv", "--target-cost", "c.csv", "--out-prefix", "x"]);
        assert_eq!(code(&o), 2);
        assert!(stderr(&o).contains("requires factored costs"), "{}", stderr(&o));
        let o = lrgw(dir.path(), &["solve", "--method", method, "--cost", "knn", "--source", "p.csv", "--target", "p.csv", "--out-prefix", "x"]);
        assert_eq!(code(&o), 2);
        assert!(stderr(&o).contains("requires factored costs"), "{}", stderr(&o));
    }
    let o = lrgw(dir.path(), &["solve", "--method", "lr", "--source-cost", "c.csv", "--target-cost", "c.csv", "--rank", "3", "--out-prefix", "x"]);
    assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
}

#[test]
fn deterministic_solves_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    gen_pair(dir.path(), "80");
    for prefix in ["a", "b"] {
        let o = lrgw(
            dir.path(),
            &["solve", "--method", "lin-lr", "--source", "p.csv", "--target", "p.target.csv", "--rank", "3", "--outer-iter", "5", "--deterministic", "--out-prefix", prefix],
        );
        assert!(matches!(code(&o), 0 | 3), "{}", stderr(&o));
    }
    for ext in ["Q.csv", "R.csv", "g.csv", "report.csv"] {
        assert_eq!(fs::read(dir.path().join(format!("a.{ext}"))).unwrap(), fs::read(dir.path().join(format!("b.{ext}"))).unwrap(), "{ext}");
    }
    let strip = |p: &str| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(p)).unwrap()).unwrap();
        v["command_line"] = serde_json::Value::Null;
        v["config"]["out_prefix"] = serde_json::Value::Null;
        v["outputs"] = serde_json::Value::Null;
        assert!(v.get("started_unix_ms").is_none());
        v
    };
    assert_eq!(strip("a.manifest.json"), strip("b.manifest.json"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    gen_pair(dir.path(), "50");
    fs::write(dir.path().join("run.cfg"), "method = lin-lr\nsource = p.csv\ntarget = p.target.csv\nrank = 2\nouter_iter = 3\nstop_tol = 0\nout_prefix = cfg\n").unwrap();
    let o = lrgw(dir.path(), &["solve", "--config", "run.cfg", "--rank", "5"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let g = fs::read_to_string(dir.path().join("cfg.g.csv")).unwrap();
    assert_eq!(g.lines().count(), 5);
    let report = fs::read_to_string(dir.path().join("cfg.report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn bench_rows_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrgw(
        dir.path(),
        &["bench", "--sweep", "rank", "--values", "2,3", "--reps", "2", "--kind", "blobs", "--k", "3", "--n", "60", "--outer-iter", "3", "--deterministic", "--out", "b.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,param,value,rep,final_loss,total_ms,outer_iters,status");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("lin-lr,rank,2.0,0,"));

    let o = lrgw(
        dir.path(),
        &["bench", "--sweep", "rank", "--values", "2,3", "--reps", "2", "--kind", "blobs", "--k", "3", "--n", "60", "--outer-iter", "3", "--deterministic", "--parallel", "--out", "p.csv"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(text, fs::read_to_string(dir.path().join("p.csv")).unwrap());

    // A fractional rank fails in-row without aborting the sweep.
    let o = lrgw(dir.path(), &["bench", "--sweep", "rank", "--values", "2,2.5", "--reps", "1", "--kind", "blobs", "--n", "20", "--outer-iter", "2", "--out", "f.csv"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ends_with(",ok") || rows[0].ends_with(",budget"));
    assert!(!rows[1].ends_with(",ok") && rows[1].contains(",,"), "{}", rows[1]);
}

#[test]
fn single_cell_bench_and_gamma_linked_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrgw(
        dir.path(),
        &["bench", "--sweep", "epsilon", "--eps-from-gamma", "--values", "50", "--reps", "1", "--method", "quad-ent", "--kind", "blobs", "--n", "30", "--outer-iter", "2", "--out", "e.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("quad-ent,epsilon=1/gamma,50.0,0,"), "{}", rows[0]);
}

#[test]
fn validate_suites_pass() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["feasibility", "objective", "gradient", "bound"] {
        let o = lrgw(dir.path(), &["validate", "--suite", suite]);
        let out = String::from_utf8_lossy(&o.stdout);
        assert_eq!(code(&o), 0, "{suite}: {out}");
        assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
    }
    let o = lrgw(dir.path(), &["validate", "--suite", "alloc", "--n", "2000"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}{}", stderr(&o));
    assert!(out.contains("PASS alloc.large_buffer_events = 0.000e0"), "{out}");
}

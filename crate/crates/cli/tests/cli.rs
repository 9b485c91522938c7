use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lieconv"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &["--d", "6", "--val", "3", "--test", "3", "--steps", "40", "--threads", "1"];

fn gen(dir: &Path, out: &str, seed: &str) -> Output {
    let mut args = vec!["gen-data", "--seed", seed, "--out", out];
    args.extend_from_slice(SMALL);
    run(dir, &args)
}

#[test]
fn gen_data_is_deterministic_and_defaults_to_six_bodies() {
    let t = tempfile::tempdir().unwrap();
    let a = gen(t.path(), "a", "7");
    let b = gen(t.path(), "b", "7");
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let sha = |o: &Output| stdout(o).lines().find(|l| l.starts_with("sha256")).unwrap().to_string();
    assert_eq!(sha(&a), sha(&b));
    assert_eq!(
        fs::read(t.path().join("a/blocks.bin")).unwrap(),
        fs::read(t.path().join("b/blocks.bin")).unwrap()
    );
    assert!(stdout(&a).contains("of 6 bodies"));
    assert_ne!(sha(&a), sha(&gen(t.path(), "c", "8")));
}

#[test]
fn usage_errors_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(t.path(), &["gen-data", "--d", "0"])), 2);
    assert_eq!(code(&run(t.path(), &["gen-data", "--no-such-flag"])), 2);
    assert_eq!(code(&run(t.path(), &["check-equivariance", "--group", "so7"])), 2);
    fs::write(t.path().join("bad.toml"), "bogus = 1\n").unwrap();
    assert_eq!(code(&run(t.path(), &["gen-data", "--config", "bad.toml"])), 2);
}

#[test]
fn config_file_round_trips() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(t.path(), "a", "3")), 0);
    // rerun from the echoed config, overriding only the output directory
    let o = run(t.path(), &["gen-data", "--config", "a/config.toml", "--out", "b", "--threads", "1"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(t.path().join("a/blocks.bin")).unwrap(),
        fs::read(t.path().join("b/blocks.bin")).unwrap()
    );
    let cfg = fs::read_to_string(t.path().join("b/config.toml")).unwrap();
    assert!(cfg.contains("d = 6") && cfg.contains("out = \"b\""), "{cfg}");
}

#[test]
fn equivariance_audit_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let ok = run(t.path(), &["check-equivariance", "--group", "t2", "--precision", "single"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let se2 = run(t.path(), &["check-equivariance", "--group", "se2", "--lifts", "2"]);
    assert_eq!(code(&se2), 0, "{}", stdout(&se2));
    let trivial = run(t.path(), &["check-equivariance", "--group", "trivial", "--transform", "t2"]);
    assert_eq!(code(&trivial), 1);
    let report: serde_json::Value = serde_json::from_str(&stdout(&trivial)).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn rollout_and_training_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    assert_eq!(code(&gen(p, "data", "1")), 0);
    let r = run(p, &["rollout", "--data", "data", "--model", "true-hamiltonian", "--out", "roll"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let s: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    for k in ["momentum_drift", "angular_drift", "energy_drift"] {
        assert!(s[k].as_f64().unwrap() < 1e-6, "{k}: {}", s[k]);
    }
    let cons = fs::read_to_string(p.join("roll/conservation.csv")).unwrap();
    assert!(cons.starts_with("t,Px,Py,L,H\n"));
    assert_eq!(cons.lines().count(), 102);
    let traj = fs::read_to_string(p.join("roll/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,body,qx,qy,px,py\n"));
    assert_eq!(traj.lines().count(), 1 + 101 * 6);

    let args = [
        "train", "--data", "data", "--model", "hlieconv-t2", "--channels", "8", "--kernel-hidden", "8", "--epochs",
        "2", "--lr", "0", "--out", "run",
    ];
    let o = run(p, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(p.join("run/init.bin")).unwrap(), fs::read(p.join("run/model.bin")).unwrap());
    let curve = fs::read_to_string(p.join("run/loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    let r = run(p, &["rollout", "--data", "data", "--checkpoint", "run", "--steps", "20", "--out", "roll2"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let s: serde_json::Value = serde_json::from_str(&stdout(&r)).unwrap();
    assert!(s["momentum_drift"].as_f64().unwrap() < 1e-4);
}

#[test]
fn missing_inputs_fail_with_one() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(t.path(), &["train", "--data", "nowhere"])), 1);
    assert_eq!(code(&gen(t.path(), "data", "1")), 0);
    assert_eq!(code(&run(t.path(), &["rollout", "--data", "data", "--checkpoint", "nowhere"])), 1);
}

#[test]
fn bench_checks_agreement_and_reports_memory() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["bench-pointconv", "--n", "1,32", "--c-in", "8", "--c-out", "4", "--out", "bench"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(t.path().join("bench/bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 10));
}

#[test]
fn neighborhood_dump_is_csv() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["dump-neighborhood", "--group", "se2", "--n", "20", "--radius", "2.0", "--out", "nb"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(t.path().join("nb/neighborhoods.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "center,member,center_point,member_point,distance,a0,a1,a2");
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 20);
    assert!(rows.iter().all(|r| r.split(',').nth(4).unwrap().parse::<f64>().unwrap() <= 2.0));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn m3(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m3")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = m3(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn gen(dir: &Path) {
    ok(dir, &["gen", "--preset", "boundary_layer", "--n", "2e4", "--seed", "3", "--out", "g"]);
}

#[test]
fn sample_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    for method in ["m3", "random", "grid", "proxy"] {
        for out in ["a", "b"] {
            ok(d, &["sample", "--method", method, "--input", "g/cloud.m3pc", "--m", "800", "--seed", "1", "--out", out]);
        }
        for f in ["indices.bin", "indices.txt"] {
            let a = fs::read(d.join("a").join(f)).unwrap();
            assert_eq!(a, fs::read(d.join("b").join(f)).unwrap(), "{method} {f}");
        }
        assert_eq!(fs::read(d.join("a/indices.bin")).unwrap().len(), 800 * 8);
    }
    let m = fs::read_to_string(d.join("a/manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&m).unwrap();
    assert_eq!(m["command"], "sample");
    assert_eq!(m["config"]["partition"]["g_max"], 8);
}

#[test]
fn replay_reproduces_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    ok(d, &["sample", "--method", "m3", "--profile", "volume", "--input", "g/cloud.m3pc", "--m", "1e3", "--seed", "7", "--rho", "0.5", "--out", "s"]);
    ok(d, &["replay", "s/manifest.json", "--out", "r"]);
    for f in ["indices.bin", "indices.txt", "measure.json"] {
        assert_eq!(fs::read(d.join("s").join(f)).unwrap(), fs::read(d.join("r").join(f)).unwrap(), "{f}");
    }
    ok(d, &["stratify", "--input", "g/cloud.m3pc", "--out", "st"]);
    ok(d, &["replay", "st/manifest.json", "--out", "st2"]);
    for f in ["partition.jsonl", "labels.u16", "strata.json"] {
        assert_eq!(fs::read(d.join("st").join(f)).unwrap(), fs::read(d.join("st2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_and_flags_resolve_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    fs::write(d.join("cfg.json"), r#"{"partition": {"kappa": 64, "g_max": 5}, "alloc": {"m": 300, "seed": 2}}"#).unwrap();
    ok(d, &["sample", "--method", "m3", "--input", "g/cloud.m3pc", "--config", "cfg.json", "--g-max", "6", "--out", "s"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("s/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["partition"]["kappa"], 64);
    assert_eq!(m["config"]["partition"]["g_max"], 6);
    assert_eq!(fs::read(d.join("s/indices.bin")).unwrap().len(), 300 * 8);
}

#[test]
fn unit_weights_match_unweighted_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let truth: String = (0..200).map(|i| format!("{} {} {}\n", i as f64 * 0.1, (i as f64).sin(), 1.0)).collect();
    let pred: String = (0..200).map(|i| format!("{} {} {}\n", i as f64 * 0.1 + 0.03, (i as f64).sin() * 0.9, 1.2)).collect();
    fs::write(d.join("truth.txt"), truth).unwrap();
    fs::write(d.join("pred.txt"), pred).unwrap();
    fs::write(d.join("w.txt"), "1\n".repeat(200)).unwrap();
    ok(d, &["metrics", "--truth", "truth.txt", "--pred", "pred.txt", "--weights", "w.txt", "--out", "a"]);
    ok(d, &["metrics", "--truth", "truth.txt", "--pred", "pred.txt", "--out", "b"]);
    let read = |p: &str| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(d.join(p).join("metrics.json")).unwrap()).unwrap() };
    let (a, b) = (read("a"), read("b"));
    for key in ["mae", "mse", "rel_l2"] {
        assert_eq!(a[key], b[key]);
        assert_eq!(a[key], a[format!("{key}_w")]);
    }
}

#[test]
fn measure_reports_compare_samplers() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    ok(d, &["sample", "--method", "m3", "--input", "g/cloud.m3pc", "--m", "2000", "--seed", "1", "--rho", "0.5", "--out", "m"]);
    ok(d, &["sample", "--method", "random", "--input", "g/cloud.m3pc", "--m", "2000", "--seed", "1", "--out", "r"]);
    for report in ["tv", "decomp"] {
        ok(d, &["measure", "--report", report, "--input", "g/cloud.m3pc", "--sample", "m/indices.bin", "--sample", "r/indices.bin", "--out", report]);
        assert!(d.join(report).join("report.json").exists());
    }
}

#[test]
fn failures_exit_nonzero_and_leave_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d);
    ok(d, &["sample", "--method", "random", "--input", "g/cloud.m3pc", "--m", "100", "--seed", "1", "--out", "s"]);
    let out = m3(d, &["measure", "--report", "riskgap", "--input", "g/cloud.m3pc", "--sample", "s/indices.bin", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("x").exists());
    let out = m3(d, &["sample", "--method", "m3", "--input", "missing.m3pc", "--m", "5", "--seed", "1", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("y").exists());
    let out = m3(d, &["sample", "--method", "m3", "--input", "g/cloud.m3pc", "--m", "5", "--out", "z"]);
    assert_ne!(out.status.code(), Some(0), "missing seed must fail");
    assert!(!d.join("z").exists());
    let out = m3(d, &["partition", "--input", "g/cloud.m3pc", "--no-such-flag", "--out", "w"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("w").exists());
}

#[test]
fn small_bench_has_random_fastest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["bench", "--sizes", "5e3,2e4", "--seeds", "0", "--methods", "random,m3,grid,proxy", "--m", "500", "--cap", "60", "--out", "b"]);
    let csv = fs::read_to_string(d.join("b/bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "method,N,seed,wall_s,peak_bytes,status");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for n in ["5000", "20000"] {
        let at: Vec<&Vec<&str>> = rows.iter().filter(|r| r[1] == n).collect();
        let wall = |m: &str| at.iter().find(|r| r[0] == m).unwrap()[3].parse::<f64>().unwrap();
        assert!(at.iter().all(|r| r[5] == "ok"));
        for other in ["m3", "grid", "proxy"] {
            assert!(wall("random") < wall(other));
        }
    }
}

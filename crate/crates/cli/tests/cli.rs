use std::path::Path;
use std::process::{Command, Output};

fn shrinklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shrinklab")).args(args).output().expect("spawn shrinklab")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const CONFIG: &str = "experiment = birkhoff\nmap = identity\nperturb = sqk\nperturb_q = 4\nperturb_k = 4\n\
                      perturb_eps = 1/2\nsamples = 64\nhorizon = 80\nseed = 17\n";

fn run_into(config: &Path, out: &Path, workers: &str) -> Output {
    shrinklab(&["--workers", workers, "run", "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap()])
}

#[test]
fn refusal_is_an_answer() {
    let out = shrinklab(&["certify", "--map", "tent", "--set", "1/4,3/4", "--period", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["certification"]["outcome"], "refused");
}

#[test]
fn radial_certificate_with_exact_witness() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("g.json");
    let out = shrinklab(&[
        "perturb", "sqk", "--map", "identity", "--q", "4", "--k", "4", "--eps", "1/2", "--out-map", map.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = shrinklab(&["certify", "--map", map.to_str().unwrap(), "--set", "1/32,7/32", "--period", "1", "--witness"]);
    assert_eq!(cert.status.code(), Some(0));
    let v = stdout_json(&cert);
    assert_eq!(v["certification"]["outcome"], "certified", "{v}");
    assert_eq!(v["witness"]["residual"], "0");
    assert_eq!(v["witness"]["point"], serde_json::json!(["1/8"]));
}

#[test]
fn bad_input_exits_2() {
    assert_eq!(shrinklab(&["certify", "--map", "no-such-map", "--set", "0,1", "--period", "1"]).status.code(), Some(2));
    assert_eq!(shrinklab(&["shadow", "--map", "tent", "--x", "1/3", "--eps0", "seven"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "experiment = birkhoff\nsamples = many\n").unwrap();
    assert_eq!(run_into(&cfg, &dir.path().join("out"), "1").status.code(), Some(2));
}

#[test]
fn failed_construction_exits_3() {
    let out = shrinklab(&["empty-interior", "--map", "tent", "--seed", "1", "--samples", "10", "--horizon", "10"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn run_writes_identical_bundles_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    std::fs::write(&cfg, CONFIG).unwrap();
    let mut bundles = Vec::new();
    for workers in ["1", "2", "4"] {
        let out_dir = dir.path().join(format!("out-{workers}"));
        let out = run_into(&cfg, &out_dir, workers);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["report.json", "table.csv", "manifest.json"]
            .iter()
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
            .collect();
        bundles.push(files);
    }
    assert!(bundles.windows(2).all(|w| w[0] == w[1]));
    let report: serde_json::Value = serde_json::from_slice(&bundles[0][0]).unwrap();
    assert_eq!(report["verified"], true);
}

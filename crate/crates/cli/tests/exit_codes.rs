use std::path::Path;
use std::process::{Command, Output};

fn simdim(args: &[&str], out: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simdim"));
    cmd.args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SIMDIM_THREADS")
        .env_remove("SIMDIM_ORTHO_TOL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn analyze_writes_manifest_with_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("cantor.toml");
    let out = simdim(&["analyze", "--config", &cfg], tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
    let text = std::fs::read(&cfg).unwrap();
    assert_eq!(manifest["config_sha256"], simdim::output::sha256_hex(&text));
    assert_eq!(manifest["seed"], 7);
    let names: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["analyze.json", "generations.csv"]);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(simdim(&["analyze"], tmp.path(), &[]).status.code(), Some(2));
    assert_eq!(
        simdim(&["verify", "--filter", "nope"], tmp.path(), &[]).status.code(),
        Some(2)
    );
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "d = 1\n[[atoms]]\nrho = 0.5\nb = [1]\nbogus = 3\n").unwrap();
    let out = simdim(&["analyze", "--config", bad.to_str().unwrap()], tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn infeasible_block_plan_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.toml");
    std::fs::write(
        &cfg,
        "d = 1\n[[atoms]]\nrho = 0.5\nb = [1]\n[[atoms]]\nrho = 0.5\nb = [-1]\n[decompose]\npath_len = 5\nblocks = 3\nk = 4\n",
    )
    .unwrap();
    let out = simdim(&["decompose", "--config", cfg.to_str().unwrap()], tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failing_suite_exits_4_and_filter_limits_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let out = simdim(
        &["verify", "--filter", "sim_group"],
        tmp.path(),
        &[("SIMDIM_ORTHO_TOL", "1e-20")],
    );
    assert_eq!(out.status.code(), Some(4));
    let rep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(rep["suites"].as_array().unwrap().len(), 1);
    let out = simdim(&["verify", "--filter", "sim_group"], tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
}

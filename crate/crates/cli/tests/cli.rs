use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_outshare")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SIMULATE: &str = "[simulate]\nn_markets = 40\nseed = 7\n";

const PLAIN_LOGIT: &str = r#"
[model]
random = []
outside_share = "band"
half_width = 0.05

[grid]
alpha = { lo = 0.5, hi = 1.5, step = 0.25 }
beta = [{ lo = 0.0, hi = 2.0, step = 0.5 }]
"#;

fn simulate(dir: &Path, config: &str) -> String {
    let cfg = write(dir, "sim.toml", config);
    let out = run(&["simulate", "--config", &cfg, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("data.csv").to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_rows_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let data = simulate(dir.path(), SIMULATE);
    let rows = fs::read_to_string(&data).unwrap().lines().count();
    assert_eq!(rows, 1 + 40 * 2);
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["result"]["truths"].as_array().unwrap().len(), 40);
    assert_eq!(truth["config"]["simulate"]["seed"], 7);
    assert!(truth["version"].is_string());
}

#[test]
fn same_seed_same_files() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    simulate(a.path(), SIMULATE);
    simulate(b.path(), SIMULATE);
    for f in ["data.csv", "truth.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", "[simulate]\nn_markets = 5\n");
    let out = run(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_markets") && err.contains("seed"), "{err}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", "[simulate]\nn_markets = 5\nseed = 1\nmarkets = 3\n");
    let out = run(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn plain_logit_identify_is_two_dimensional_and_idempotent() {
    let dir = TempDir::new().unwrap();
    let data = simulate(dir.path(), SIMULATE);
    let cfg = write(dir.path(), "id.toml", PLAIN_LOGIT);
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = run(&["identify", "--config", &cfg, "--data", &data, "--out", out_dir.to_str().unwrap()]);
        assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read_to_string(out_dir.join("identified_set.csv")).unwrap());
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("identified_set.json")).unwrap()).unwrap();
        assert_eq!(report["config"]["model"]["half_width"], 0.05);
    }
    assert_eq!(outputs[0], outputs[1]);
    let header = outputs[0].lines().next().unwrap();
    assert!(header.starts_with("alpha,beta_1,member"), "{header}");
    assert_eq!(outputs[0].lines().count(), 1 + 5 * 5);
}

#[test]
fn contradictory_shares_give_the_empty_set_code() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("market_id,product_id,share,price,x_1,z_1,outside_share\n");
    for m in 0..12 {
        let z = m % 3;
        let s1 = if z == 0 { 0.95 } else { 0.05 };
        csv += &format!("{m},1,{s1},{},1,{z},0.4\n{m},2,{},1.0,1,{z},0.4\n", 1.0 + 0.1 * m as f64, 1.0 - s1);
    }
    let data = write(dir.path(), "data.csv", &csv);
    let cfg = write(
        dir.path(),
        "id.toml",
        &format!("{PLAIN_LOGIT}\n[identify]\nslack = {{ fixed = 0.01 }}\n").replace("\"band\"", "\"singleton\""),
    );
    let out = run(&["identify", "--config", &cfg, "--data", &data, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn self_normalized_critical_value_is_constant() {
    let dir = TempDir::new().unwrap();
    let data = simulate(dir.path(), "[simulate]\nn_markets = 200\nseed = 3\n");
    let cfg = write(
        dir.path(),
        "inf.toml",
        r#"
[model]
outside_share = "band"
half_width = 0.05

[grid]
alpha = { lo = 0.5, hi = 1.5, step = 0.5 }
beta = [{ lo = 0.5, hi = 1.5, step = 0.5 }]
lambda = [{ lo = 0.5, hi = 1.5, step = 0.5 }]

[infer]
pi = 0.1
"#,
    );
    let out = run(&["infer", "--config", &cfg, "--data", &data, "--out", dir.path().to_str().unwrap()]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("confidence_set.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let t = header.iter().position(|h| *h == "t_stat").unwrap();
    let c = header.iter().position(|h| *h == "critical_value").unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 27);
    assert!(rows.iter().all(|r| r[c] == rows[0][c] && r[t].parse::<f64>().is_ok()));
}

#[test]
fn bounds_at_the_median_market_cover_every_object() {
    let dir = TempDir::new().unwrap();
    let data = simulate(dir.path(), "[simulate]\nn_markets = 300\nseed = 5\n");
    let cfg = write(
        dir.path(),
        "b.toml",
        r#"
[model]
outside_share = "band"
half_width = 0.05

[grid]
alpha = { lo = 0.75, hi = 1.25, step = 0.25 }
beta = [{ lo = 0.5, hi = 1.5, step = 0.25 }]
lambda = [{ lo = 0.75, hi = 1.25, step = 0.25 }]

[bounds]
market = "median"
s0_points = 5
"#,
    );
    let out = run(&["bounds", "--config", &cfg, "--data", &data, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for want in ["E11", "E22", "E12", "E21", "M1", "M2", "D12", "D21", "S1", "S2"] {
        assert!(labels.contains(&want), "{want} missing from {labels:?}");
    }
}

#[test]
fn counterexample_curve_is_written() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", "[counterexample]\ndraws = 2000\npoints = 8\n");
    let out = run(&["counterexample", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("counterexample.csv")).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() >= 0.0));
}

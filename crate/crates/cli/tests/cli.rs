use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wtawp"))
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

/// Runs a subcommand and returns the run directory printed on stdout.
fn run_ok(args: &[&str], config: &Path, out: &Path) -> PathBuf {
    let o = bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const SMALL: &str = r#"{
    "dataset": {"kind": "linear_toy", "nodes_per_class": 30},
    "train": {"epochs": 30, "hidden_dim": 8},
    "splits": 2,
    "inits_per_split": 2
}"#;

#[test]
fn missing_config_exits_2_and_names_path() {
    let o = bin().args(["train", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/cfg.json"));
}

#[test]
fn missing_dataset_file_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"dataset": {"kind": "citation", "content": "/no/cora.content", "cites": "/no/cora.cites"}}"#,
    );
    let o = bin().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/cora.content"));
}

#[test]
fn typo_in_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"awp": {"rho": 1.0, "lamdba": 0.5}}"#);
    let o = bin().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_diagnostic_is_a_usage_error() {
    let o = bin().args(["diagnose", "curvature"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"dataset": {"kind": "linear_toy", "nodes_per_class": 20, "noise_std": 3.0},
            "model": {"kind": "mlp3"},
            "train": {"epochs": 50, "lr": 1e300, "dropout": 0.0, "weight_decay": 0.0},
            "splits": 1, "inits_per_split": 1}"#,
    );
    let o = bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn vanilla_toy_train_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"dataset": {"kind": "linear_toy"}, "splits": 2, "inits_per_split": 1}"#);
    let dir = run_ok(&["train"], &cfg, tmp.path());
    let summary: serde_json::Value = serde_json::from_str(&read(&dir.join("summary.json"))).unwrap();
    assert!(summary["test_acc"].as_f64().unwrap() >= 0.90);
    assert_eq!(summary["n_runs"], 2);
    assert!(dir.join("runs/s1_i0/train.csv").exists());
    assert!(dir.join("runs/s1_i0/params.json").exists());
    // The echoed config reproduces the hash directory.
    let echoed: wtawp_cli::ExperimentConfig = serde_json::from_str(&read(&dir.join("config.json"))).unwrap();
    assert!(dir.ends_with(echoed.content_hash()));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = run_ok(&["train"], &cfg, tmp.path());
    let b = run_ok(&["train", "--seed", "5"], &cfg, tmp.path());
    assert_ne!(a, b);
    assert!(read(&b.join("runs.csv")).contains("\n0,5,0,5000,"));
}

#[test]
fn rerun_is_byte_identical_and_jobs_do_not_matter() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = run_ok(&["train"], &cfg, &tmp.path().join("a"));
    let b = run_ok(&["train", "--jobs", "3"], &cfg, &tmp.path().join("b"));
    assert_eq!(read(&a.join("runs.csv")), read(&b.join("runs.csv")));
    assert_eq!(read(&a.join("runs/s0_i1/train.csv")), read(&b.join("runs/s0_i1/train.csv")));
}

#[test]
fn one_cell_sweep_equals_train() {
    let tmp = TempDir::new().unwrap();
    let train_cfg = write_config(
        tmp.path(),
        &SMALL.replace("\"splits\"", "\"awp\": {\"rho\": 0.5, \"lambda\": 0.5, \"projection\": \"sphere\"}, \"splits\""),
    );
    let t = run_ok(&["train"], &train_cfg, tmp.path());
    let sweep_cfg = {
        let p = tmp.path().join("sweep.json");
        let text = read(&train_cfg).replace("\"splits\"", "\"grid\": {\"lambdas\": [0.5], \"rhos\": [0.5]}, \"splits\"");
        std::fs::write(&p, text).unwrap();
        p
    };
    let s = run_ok(&["sweep"], &sweep_cfg, tmp.path());
    let train_summary: serde_json::Value = serde_json::from_str(&read(&t.join("summary.json"))).unwrap();
    let sweep_summary: serde_json::Value = serde_json::from_str(&read(&s.join("summary.json"))).unwrap();
    assert_eq!(train_summary["test_acc"], sweep_summary["aggregates"][0]["mean"]);
    assert_eq!(train_summary["test_acc_std"], sweep_summary["aggregates"][0]["std"]);
}

#[test]
fn sweep_cells_and_resume() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &SMALL.replace(
            "\"splits\"",
            "\"awp\": {\"rho\": 0, \"lambda\": 0, \"projection\": \"sphere\"}, \"grid\": {\"lambdas\": [0, 1], \"rhos\": [0.5, 5]}, \"splits\"",
        ),
    );
    let dir = run_ok(&["sweep"], &cfg, tmp.path());
    let cells = read(&dir.join("cells.csv"));
    assert_eq!(cells.lines().count() - 1, 2 * 2 * 2 * 2);
    let table = read(&dir.join("table.csv"));
    assert_eq!(table.lines().next().unwrap(), "lambda,rho=0.5,rho=5");
    assert!(table.lines().nth(1).unwrap().starts_with("0,"));
    assert!(table.contains(" ± "));
    wtawp_cli::commands::verify_sweep(&dir).unwrap();

    // A finished cell is reused as-is.
    let cell_dirs: Vec<_> = std::fs::read_dir(dir.join("cells")).unwrap().collect();
    assert_eq!(cell_dirs.len(), 16);
    let again = run_ok(&["sweep"], &cfg, tmp.path());
    assert_eq!(read(&dir.join("cells.csv")), read(&again.join("cells.csv")));

    // Tampering with the stored aggregates is caught.
    let agg = read(&dir.join("aggregates.csv"));
    let mut lines: Vec<String> = agg.lines().map(String::from).collect();
    let mut f: Vec<String> = lines[1].split(',').map(String::from).collect();
    f[4] = (f[4].parse::<f64>().unwrap() + 1e-9).to_string();
    lines[1] = f.join(",");
    std::fs::write(dir.join("aggregates.csv"), lines.join("\n") + "\n").unwrap();
    assert!(wtawp_cli::commands::verify_sweep(&dir).is_err());
}

#[test]
fn paired_with_identical_arms_reports_zero_delta() {
    let tmp = TempDir::new().unwrap();
    let arm = r#"{"rho": 0.5, "lambda": 0.5, "projection": "sphere"}"#;
    let cfg = write_config(
        tmp.path(),
        &SMALL.replace(
            "\"splits\"",
            &format!("\"awp\": {arm}, \"paired\": {{\"baseline_awp\": {arm}, \"smoothness\": {{\"n_samples\": 3}}}}, \"splits\""),
        ),
    );
    let dir = run_ok(&["paired"], &cfg, tmp.path());
    let csv = read(&dir.join("paired.csv"));
    assert_eq!(csv.lines().count() - 1, 4);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[6], "0");
        assert_eq!(f[7], f[8]);
    }
    let s: serde_json::Value = serde_json::from_str(&read(&dir.join("summary.json"))).unwrap();
    assert_eq!(s["mean_delta"], 0.0);
    assert_eq!(s["p_value"], 1.0);
    assert!(s["degenerate"].is_string());
}

#[test]
fn attack_clean_column_matches_train() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &SMALL.replace("\"splits\"", "\"attack\": {\"kind\": \"dice\", \"budget_fraction\": 0.1}, \"splits\""),
    );
    let a = run_ok(&["attack"], &cfg, tmp.path());
    let t = run_ok(&["train"], &cfg, tmp.path());
    let train_acc: Vec<String> = read(&t.join("runs.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(6).unwrap().to_string())
        .collect();
    let attack_csv = read(&a.join("attack.csv"));
    let clean: Vec<String> = attack_csv
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("baseline,"))
        .map(|l| l.split(',').nth(6).unwrap().to_string())
        .collect();
    assert_eq!(train_acc, clean);
    let graph = wtawp_core::graph::generate_linear_toy(&wtawp_core::graph::ToyConfig {
        nodes_per_class: 30,
        ..Default::default()
    })
    .unwrap();
    let budget = (0.1 * graph.n_edges() as f64 + 1e-9).floor() as usize;
    for line in attack_csv.lines().skip(1) {
        assert_eq!(line.split(',').nth(5).unwrap(), budget.to_string());
    }
}

#[test]
fn diagnostics_write_their_csvs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &SMALL.replace(
            "\"splits\"",
            "\"diagnose\": {\"smoothness\": {\"n_samples\": 4}, \"landscape\": {\"n_directions\": 3}, \"gradcheck\": {\"instances\": 3}}, \"splits\"",
        ),
    );
    let mut dir = PathBuf::new();
    for which in ["landscape", "smoothness", "bound", "gradcheck", "gapscale"] {
        dir = run_ok(&["diagnose", which], &cfg, tmp.path());
        assert!(dir.join(format!("{which}.csv")).exists(), "{which}");
    }

    // The α = 0 row is the summary's train loss.
    let land: serde_json::Value = serde_json::from_str(&read(&dir.join("landscape_summary.json"))).unwrap();
    let train_loss = land["train_loss"].as_f64().unwrap();
    let csv = read(&dir.join("landscape.csv"));
    let zero_row = csv.lines().find(|l| l.starts_with("0,")).unwrap();
    let mean: f64 = zero_row.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(mean, train_loss);

    // m defaults to sqrt(d), where the chi tail term is exactly 1.
    let bound = read(&dir.join("bound.csv"));
    for row in bound.lines().skip(1) {
        assert_eq!(row.split(',').nth(8).unwrap(), "1");
    }

    let gc = read(&dir.join("gradcheck.csv"));
    assert_eq!(gc.lines().count() - 1, 9);
    assert!(gc.lines().skip(1).all(|l| l.ends_with(",true")));

    // Parameters saved by `train` can be diagnosed directly.
    let t = run_ok(&["train"], &cfg, tmp.path());
    let with_params = write_config(
        tmp.path(),
        &SMALL.replace(
            "\"splits\"",
            &format!(
                "\"diagnose\": {{\"landscape\": {{\"n_directions\": 3}}, \"params\": {:?}}}, \"splits\"",
                t.join("runs/s0_i0/params.json")
            ),
        ),
    );
    let d = run_ok(&["diagnose", "landscape"], &with_params, tmp.path());
    let s: serde_json::Value = serde_json::from_str(&read(&d.join("landscape_summary.json"))).unwrap();
    assert_eq!(s["train_loss"].as_f64().unwrap(), train_loss);
}

#[test]
fn gen_toy_writes_loadable_graph() {
    let tmp = TempDir::new().unwrap();
    let o = bin().arg("gen-toy").arg("--out").arg(tmp.path()).output().unwrap();
    assert!(o.status.success());
    let dir = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    let path = dir.join("graph.json");
    let cfg = write_config(
        tmp.path(),
        &format!("{{\"dataset\": {{\"kind\": \"json\", \"path\": {:?}}}, \"splits\": 1, \"inits_per_split\": 1}}", path),
    );
    let d = run_ok(&["train"], &cfg, tmp.path());
    assert!(d.join("summary.json").exists());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Two 6-node paths with 2-d features; labels split the paths into halves.
fn toy_workspace(dir: &Path) -> PathBuf {
    let mut edges = String::new();
    for base in [0, 10] {
        for i in 0..5 {
            edges += &format!("{} {}\n", base + i, base + i + 1);
        }
    }
    fs::write(dir.join("edges.txt"), edges).unwrap();
    let mut feats = String::new();
    let mut labels = String::new();
    for base in [0u32, 10] {
        for i in 0..6 {
            let id = base + i;
            feats += &format!("{id},{},{}\n", 1 + i % 3, 1 + (i < 3) as u32);
            labels += &format!("{id} {}\n", (i < 3) as u32);
        }
    }
    fs::write(dir.join("features.csv"), feats).unwrap();
    fs::write(dir.join("labels.txt"), labels).unwrap();
    let config = serde_json::json!({
        "dataset_name": "toy",
        "dataset": {"edges": "edges.txt", "features": "features.csv", "labels": "labels.txt"},
        "train": {"embedding_dim": 8, "epochs": 5, "lr": 0.01, "sampler": {"targets_per_batch": 12, "pairs_per_category_per_target": 1}},
        "eval": {
            "classify_runs": 2, "cluster_runs": 2, "linkpred_runs": 1, "linkpred_epochs": 3, "removal_ratios": [0.2],
            "split": {"per_class_train": 2, "num_val": 0, "num_test": 6, "seed": 0},
            "logreg": {"max_iter": 50}
        },
        "grid": {"lrs": [0.01, 0.02], "epochs": [2, 4]},
        "ablation": {"policies": [[1], [1, 2, 3]]},
        "output_dir": dir.join("runs")
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn hopembed(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopembed"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("HOPEMBED_DATA_ROOT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prepare_reports_hop_totals_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_workspace(dir.path());
    let first = hopembed(&config, &["prepare"]);
    assert!(first.status.success(), "{}", stderr(&first));
    // each path of 6 has 2·(6-h) ordered pairs at hop h
    let out = stdout(&first);
    for (h, count) in [(1, 20), (2, 16), (3, 12), (4, 8)] {
        assert!(out.contains(&format!("hop {h}: {count} pairs")), "{out}");
    }
    let second = hopembed(&config, &["prepare"]);
    assert!(second.status.success());
    assert!(stderr(&second).contains("nothing to do"));
    assert_eq!(stdout(&second), out);
}

#[test]
fn train_without_cache_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_workspace(dir.path());
    let o = hopembed(&config, &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hopembed prepare"), "{}", stderr(&o));
}

#[test]
fn corrupted_cache_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_workspace(dir.path());
    assert!(hopembed(&config, &["prepare"]).status.success());
    let cache_dir = dir.path().join("runs/cache");
    for entry in fs::read_dir(&cache_dir).unwrap() {
        let p = entry.unwrap().path();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 2);
        fs::write(&p, bytes).unwrap();
    }
    let o = hopembed(&config, &["train"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_eval_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_workspace(dir.path());
    assert!(hopembed(&config, &["prepare"]).status.success());
    let train = hopembed(&config, &["train"]);
    assert!(train.status.success(), "{}", stderr(&train));
    let report: serde_json::Value = serde_json::from_str(&stdout(&train)).unwrap();
    let run_dir = PathBuf::from(report["embedding_path"].as_str().unwrap()).parent().unwrap().to_path_buf();
    assert!(run_dir.join("checkpoint.hckp").exists());

    let again = hopembed(&config, &["train"]);
    assert!(stderr(&again).contains("reusing"));

    for (task, label) in [("classify", "classify"), ("cluster", "cluster"), ("linkpred", "linkpred@0.2")] {
        let o = hopembed(&config, &["eval", "--task", task]);
        assert!(o.status.success(), "{task}: {}", stderr(&o));
        let m: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(m["task"], label);
        assert!(m["mean"].as_f64().unwrap().is_finite());
        assert!(run_dir.join(format!("metrics-{}.json", label.replace('@', "-"))).exists());
    }

    let out = dir.path().join("exported.txt");
    let o = hopembed(
        &config,
        &["export", "--checkpoint", run_dir.join("checkpoint.hckp").to_str().unwrap(), "--out", out.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out).unwrap(), fs::read(run_dir.join("embeddings.txt")).unwrap());
}

#[test]
fn seeds_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_workspace(dir.path());
    assert!(hopembed(&config, &["prepare"]).status.success());
    let a = hopembed(&config, &["--seed", "1", "train"]);
    let b = hopembed(&config, &["--seed", "2", "train"]);
    let ra: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    let rb: serde_json::Value = serde_json::from_str(&stdout(&b)).unwrap();
    assert_ne!(ra["config_hash"], rb["config_hash"]);
    assert_ne!(ra["epoch_losses"], rb["epoch_losses"]);
}

#[test]
fn grid_and_ablation_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_workspace(dir.path());
    assert!(hopembed(&config, &["prepare", "--ablation"]).status.success());
    let grid = hopembed(&config, &["train", "--grid"]);
    assert!(grid.status.success(), "{}", stderr(&grid));
    let runs: Vec<_> = fs::read_dir(dir.path().join("runs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(runs.iter().any(|n| n.to_string_lossy().starts_with("grid-")));

    let ablate = hopembed(&config, &["ablate"]);
    assert!(ablate.status.success(), "{}", stderr(&ablate));
    let table = stdout(&ablate);
    assert!(table.contains("alpha") && table.lines().count() >= 3, "{table}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = toy_workspace(dir.path());
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    v["train"]["learning_rate"] = serde_json::json!(0.1);
    fs::write(&config, v.to_string()).unwrap();
    let o = hopembed(&config, &["prepare"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_hopembed")).arg("prepare").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

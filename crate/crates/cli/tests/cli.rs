//! End-to-end tests of the command-line surface.

use std::path::Path;
use std::process::{Command, Output};

fn revclust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revclust"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn gen_dataset(dir: &Path, extra: &[&str]) {
    let dir_str = dir.to_str().unwrap();
    let mut args = vec![
        "gen-synthetic",
        "--out",
        dir_str,
        "--blocks",
        "3",
        "--nodes-per-block",
        "8",
        "--p-in",
        "0.9",
        "--p-out",
        "0.05",
        "--feature-dim",
        "6",
        "--noise-scale",
        "0.5",
        "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    let out = revclust(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_writes_results_json_with_summary_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let json_path = tmp.path().join("results.json");
    let out = revclust(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--runs",
        "2",
        "--epochs",
        "6",
        "--hidden",
        "8",
        "--seed",
        "0",
        "--json",
        json_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("resolved config"));
    assert!(text.contains("acc"));

    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(parsed["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(parsed["runs"].as_array().unwrap().len(), 2);
    assert!(parsed["summary"]["acc"]["mean"].is_number());
    assert!(parsed["summary"]["nmi"]["std"].is_number());
    assert_eq!(parsed["loss_curves"].as_array().unwrap().len(), 2);
    assert_eq!(
        parsed["loss_curves"][0].as_array().unwrap().len(),
        6,
        "one loss entry per epoch"
    );
}

#[test]
fn train_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let json_a = tmp.path().join("a.json");
    let json_b = tmp.path().join("b.json");
    for path in [&json_a, &json_b] {
        let out = revclust(&[
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--runs",
            "2",
            "--epochs",
            "5",
            "--hidden",
            "8",
            "--seed",
            "3",
            "--json",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(&json_a).unwrap(),
        std::fs::read(&json_b).unwrap()
    );
}

#[test]
fn negative_alpha_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let out = revclust(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--alpha",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = revclust(&["train", "--dataset", "x", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_single_run_reports_zero_std() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let json_path = tmp.path().join("results.json");
    let out = revclust(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--runs",
        "1",
        "--epochs",
        "0",
        "--high-conf-epoch",
        "0",
        "--hidden",
        "8",
        "--json",
        json_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(parsed["summary"]["acc"]["std"].as_f64().unwrap(), 0.0);
}

#[test]
fn checkpoint_round_trips_through_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let ckpt = tmp.path().join("model.json");
    let out = revclust(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--runs",
        "1",
        "--epochs",
        "5",
        "--hidden",
        "8",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let eval_json = tmp.path().join("eval.json");
    let out = revclust(&[
        "eval",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--json",
        eval_json.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&eval_json).unwrap()).unwrap();
    assert!(parsed["acc"].as_f64().unwrap() > 0.0);
}

#[test]
fn ablate_default_set_has_eight_matching_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let json_path = tmp.path().join("ablate.json");
    let out = revclust(&[
        "ablate",
        "--dataset",
        data.to_str().unwrap(),
        "--runs",
        "1",
        "--epochs",
        "3",
        "--hidden",
        "8",
        "--json",
        json_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let rows = parsed.as_array().unwrap();
    assert_eq!(rows.len(), 8);

    let mut seeds = None;
    for row in rows {
        let summary = &row["summary"];
        // per-variant seeds are identical so rows are comparable
        let these = summary["seeds"].to_string();
        if let Some(s) = &seeds {
            assert_eq!(s, &these);
        } else {
            seeds = Some(these);
        }
        // the text table shows the same numbers the JSON carries
        let acc = summary["summary"]["acc"]["mean"].as_f64().unwrap();
        let std = summary["summary"]["acc"]["std"].as_f64().unwrap();
        let cell = format!("{:.2}±{:.2}", 100.0 * acc, 100.0 * std);
        assert!(
            text.contains(&cell),
            "table missing {cell} for {}",
            row["variant"]
        );
    }
}

#[test]
fn sweep_emits_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let json_path = tmp.path().join("sweep.json");
    let out = revclust(&[
        "sweep",
        "--dataset",
        data.to_str().unwrap(),
        "--parameter",
        "alpha",
        "--values",
        "0.3,0.5,0.7",
        "--runs",
        "1",
        "--epochs",
        "3",
        "--hidden",
        "8",
        "--json",
        json_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 3);
}

#[test]
fn gen_synthetic_is_reloadable_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_dataset(&a, &[]);
    gen_dataset(&b, &[]);
    for file in ["edges.tsv", "features.csv", "labels.txt"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs between identical seeds"
        );
    }
    let graph = revclust_core::graph::load_dataset(&a).unwrap();
    assert_eq!(graph.num_nodes(), 24);
}

#[test]
fn disjoint_blocks_have_block_components() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = revclust(&[
        "gen-synthetic",
        "--out",
        data.to_str().unwrap(),
        "--blocks",
        "3",
        "--nodes-per-block",
        "5",
        "--p-in",
        "1.0",
        "--p-out",
        "0.0",
        "--feature-dim",
        "4",
        "--seed",
        "1",
    ]);
    assert!(out.status.success());
    let graph = revclust_core::graph::load_dataset(&data).unwrap();
    // count connected components with a scan
    let n = graph.num_nodes();
    let mut component = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = count;
        while let Some(v) = stack.pop() {
            let (neigh, _) = graph.adjacency.row(v);
            for &u in neigh {
                if component[u] == usize::MAX {
                    component[u] = count;
                    stack.push(u);
                }
            }
        }
        count += 1;
    }
    assert_eq!(count, 3);
    // components coincide with labels
    let labels = graph.labels.as_ref().unwrap();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(component[i] == component[j], labels[i] == labels[j]);
        }
    }
}

#[test]
fn grad_check_passes_on_default_graph() {
    let out = revclust(&["grad-check"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("gradient check: PASS"));
    assert!(text.contains("max rel error"));
}

#[test]
fn metrics_on_identical_files_are_all_one() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = tmp.path().join("labels.txt");
    std::fs::write(&labels, "0\n0\n1\n1\n2\n2\n").unwrap();
    let out = revclust(&[
        "metrics",
        "--truth",
        labels.to_str().unwrap(),
        "--pred",
        labels.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for key in ["acc", "nmi", "ari", "f1"] {
        assert_eq!(parsed[key].as_f64().unwrap(), 1.0, "{key}");
    }
}

#[test]
fn metrics_length_mismatch_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = tmp.path().join("truth.txt");
    let pred = tmp.path().join("pred.txt");
    std::fs::write(&truth, "0\n1\n").unwrap();
    std::fs::write(&pred, "0\n").unwrap();
    let out = revclust(&[
        "metrics",
        "--truth",
        truth.to_str().unwrap(),
        "--pred",
        pred.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, &[]);
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"alpha": 0.9, "epochs": 4, "hidden": [8]}"#).unwrap();
    let out = revclust(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--alpha",
        "0.25",
        "--runs",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    // flag wins over file
    assert!(text.contains("\"alpha\":0.25"));
    // file wins over default
    assert!(text.contains("\"epochs\":4"));
}

#[test]
fn dataset_resolves_under_env_data_root() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("myset");
    gen_dataset(&data, &[]);
    let out = Command::new(env!("CARGO_BIN_EXE_revclust"))
        .args([
            "train",
            "--dataset",
            "myset",
            "--runs",
            "1",
            "--epochs",
            "2",
            "--hidden",
            "8",
        ])
        .env("REVCLUST_DATA_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_dataset_fails_with_runtime_error() {
    let out = revclust(&["train", "--dataset", "/nonexistent/place", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dataset_name_selects_learning_rate_default() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("eat");
    gen_dataset(&data, &[]);
    let out = revclust(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--runs",
        "1",
        "--epochs",
        "1",
        "--hidden",
        "8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("\"lr\":1e-7"));
}

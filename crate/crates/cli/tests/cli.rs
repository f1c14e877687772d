use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: [&str; 10] =
    ["--set", "dim=8", "--set", "layers=1", "--set", "epochs=1", "--set", "user_batch=256", "--set", "group_batch=64"];

fn igrec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igrec")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = igrec(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![args[0]];
    v.extend(SMALL);
    v.extend(&args[1..]);
    v
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("machine-readable error line");
    serde_json::from_str(line).unwrap()
}

fn world() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", "data", "--seed", "5"], dir.path());
    let root = dir.path().to_path_buf();
    (dir, root)
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn csv_rows(p: impl AsRef<Path>) -> Vec<Vec<String>> {
    read(p).lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn prepare_is_seeded_and_guards_group_items() {
    let (_t, root) = world();
    ok(&["prepare", "--data", "data", "--seed", "7"], &root);
    let first = read(root.join("data/split.tsv"));
    ok(&["prepare", "--data", "data", "--seed", "7"], &root);
    assert_eq!(first, read(root.join("data/split.tsv")));
    assert!(root.join("data/manifest.json").exists());

    let e = error_line(&igrec(&["prepare", "--data", "data", "--synthesize-groups"], &root));
    assert_eq!(e["error"]["kind"], "dataset");
    assert!(e["error"]["message"].as_str().unwrap().contains("refusing"));

    std::fs::remove_file(root.join("data/groups_items.tsv")).unwrap();
    ok(&["prepare", "--data", "data", "--synthesize-groups", "--cap", "5"], &root);
    let gi = read(root.join("data/groups_items.tsv"));
    let mut per_group = std::collections::BTreeMap::new();
    for l in gi.lines() {
        *per_group.entry(l.split('\t').next().unwrap().to_string()).or_insert(0) += 1;
    }
    assert!(!per_group.is_empty() && per_group.values().all(|&n| n <= 5));
}

#[test]
fn train_writes_log_checkpoint_and_is_deterministic() {
    let (_t, root) = world();
    ok(&with_small(&["train", "--data", "data", "--out", "a", "--seed", "3"]), &root);
    ok(&with_small(&["train", "--data", "data", "--out", "b", "--seed", "3"]), &root);
    let log = csv_rows(root.join("a/train_log.csv"));
    assert_eq!(log.len(), 1);
    assert_eq!(std::fs::read(root.join("a/seed-3.ckpt")).unwrap(), std::fs::read(root.join("b/seed-3.ckpt")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&read(root.join("a/manifest.json"))).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["seeds"], serde_json::json!([3]));
    assert_eq!(m["config"]["dim"], 8);
    assert_eq!(m["dataset_fingerprint"].as_str().unwrap().len(), 64);

    ok(&with_small(&["train", "--data", "data", "--out", "c", "--set", "variant=C", "--set", "epochs=3"]), &root);
    let log = csv_rows(root.join("c/train_log.csv"));
    assert_eq!(log.len(), 3);
    assert!(log.iter().all(|r| r[4].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn eval_reports_tasks_seeds_and_popularity() {
    let (_t, root) = world();
    ok(&with_small(&["train", "--data", "data", "--out", "run", "--seeds", "0,1"]), &root);
    ok(&["eval", "--data", "data", "--run", "run", "--out", "ev", "--task", "both", "--seeds", "2"], &root);
    let s: serde_json::Value = serde_json::from_str(&read(root.join("ev/summary.json"))).unwrap();
    assert_eq!(s["results"].as_object().unwrap().len(), 2);
    assert!(s["results"]["user"]["ndcg@10"]["std"].as_f64().unwrap() > 0.0);
    // 2 tasks x 2 metrics x 2 cutoffs x 2 seeds
    assert_eq!(csv_rows(root.join("ev/metrics.csv")).len(), 16);
    let sim = read(root.join("ev/interest_sim.csv"));
    for (p, line) in sim.lines().enumerate() {
        assert_eq!(line.split(',').nth(p).unwrap().parse::<f64>().unwrap(), 1.0);
    }

    ok(&["eval", "--data", "data", "--popularity", "--seeds", "5", "--out", "pop"], &root);
    let s: serde_json::Value = serde_json::from_str(&read(root.join("pop/summary.json"))).unwrap();
    for task in ["user", "group"] {
        assert_eq!(s["results"][task]["ndcg@10"]["std"].as_f64().unwrap(), 0.0);
    }

    let e = error_line(&igrec(&["eval", "--data", "data", "--run", "run", "--out", "x", "--seeds", "3"], &root));
    assert_eq!(e["error"]["kind"], "invalid_argument");
}

#[test]
fn eval_rejects_foreign_checkpoint() {
    let (_t, root) = world();
    ok(&with_small(&["train", "--data", "data", "--out", "run"]), &root);
    ok(&["synth", "--out", "other", "--seed", "6"], &root);
    let e = error_line(&igrec(&["eval", "--data", "other", "--checkpoint", "run/seed-0.ckpt", "--out", "x"], &root));
    assert_eq!(e["error"]["kind"], "checkpoint");
}

#[test]
fn rerun_reproduces_metrics_bytes() {
    let (_t, root) = world();
    ok(&with_small(&["train", "--data", "data", "--out", "run"]), &root);
    ok(&["eval", "--data", "data", "--run", "run", "--out", "ev"], &root);
    ok(&["rerun", "--manifest", "ev/manifest.json", "--out", "ev2"], &root);
    assert_eq!(read(root.join("ev/metrics.csv")), read(root.join("ev2/metrics.csv")));
    ok(&["rerun", "--manifest", "run/manifest.json", "--out", "run2"], &root);
    assert_eq!(
        std::fs::read(root.join("run/seed-0.ckpt")).unwrap(),
        std::fs::read(root.join("run2/seed-0.ckpt")).unwrap()
    );
}

#[test]
fn sweep_single_point_matches_train_and_eval() {
    let (_t, root) = world();
    std::fs::write(root.join("one.toml"), "n_interests = [3]\n").unwrap();
    ok(&with_small(&["sweep", "--data", "data", "--out", "sw", "--grid", "one.toml", "--set", "n_interests=4"]), &root);
    let rows = csv_rows(root.join("sw/sweep.csv"));
    assert_eq!(rows.len(), 1);
    let header: Vec<String> =
        read(root.join("sw/sweep.csv")).lines().next().unwrap().split(',').map(String::from).collect();
    let col = header.iter().position(|h| h == "user_ndcg@10").unwrap();

    ok(&with_small(&["train", "--data", "data", "--out", "run", "--set", "n_interests=3"]), &root);
    ok(&["eval", "--data", "data", "--run", "run", "--out", "ev", "--task", "user"], &root);
    let s: serde_json::Value = serde_json::from_str(&read(root.join("ev/summary.json"))).unwrap();
    let direct = s["results"]["user"]["ndcg@10"]["mean"].as_f64().unwrap();
    assert_eq!(rows[0][col].parse::<f64>().unwrap(), direct);
}

#[test]
fn sweep_interest_axis_shape_and_budget() {
    let (_t, root) = world();
    std::fs::write(root.join("m.toml"), "n_interests = [2, 3, 4, 5, 6, 7, 8]\n").unwrap();
    ok(&with_small(&["sweep", "--data", "data", "--out", "sw", "--grid", "m.toml"]), &root);
    let sens = csv_rows(root.join("sw/sensitivity_n_interests.csv"));
    assert_eq!(sens.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["2", "3", "4", "5", "6", "7", "8"]);
    assert_eq!(csv_rows(root.join("sw/sweep.csv")).len(), 7);

    let e = error_line(&igrec(
        &with_small(&["sweep", "--data", "data", "--out", "x", "--grid", "m.toml", "--budget", "0"]),
        &root,
    ));
    assert_eq!(e["error"]["kind"], "invalid_argument");
    std::fs::write(root.join("bad.toml"), "tau = [0.5, 0.0]\n").unwrap();
    let e = error_line(&igrec(&with_small(&["sweep", "--data", "data", "--out", "x", "--grid", "bad.toml"]), &root));
    assert_eq!(e["error"]["kind"], "config");
    assert!(!root.join("x/sweep.csv").exists());
}

#[test]
fn ablate_deltas_and_generator_table() {
    let (_t, root) = world();
    ok(&with_small(&["ablate", "--data", "data", "--out", "ab", "--variants", "Full,C"]), &root);
    let rows = csv_rows(root.join("ab/ablation.csv"));
    assert_eq!(rows.len(), 2 * 8);
    assert!(rows.iter().filter(|r| r[0] == "Full").all(|r| r[6] == "0"));

    let e = error_line(&igrec(&with_small(&["ablate", "--data", "data", "--out", "x", "--variants", "Z"]), &root));
    assert_eq!(e["error"]["kind"], "config");

    ok(&with_small(&["ablate", "--data", "data", "--out", "gen", "--generators", "fc1,fc2,free_embedding"]), &root);
    let rows = csv_rows(root.join("gen/generators.csv"));
    let params = |g: &str| rows.iter().find(|r| r[0] == g).unwrap()[1].parse::<usize>().unwrap();
    // M = 4, d = 8, 300 users
    assert_eq!(params("self_gating"), 4 * 9 * 8);
    assert_eq!(params("fc1"), 4 * 9 * 8);
    assert_eq!(params("fc2"), 2 * 4 * 9 * 8);
    assert_eq!(params("free_embedding"), 4 * 300 * 8);
}

#[test]
fn config_errors_exit_nonzero_before_compute() {
    let (_t, root) = world();
    for kv in ["eta1=1.5", "threshold=2", "tau=0", "n_interests=0", "bogus=1"] {
        let out = igrec(&["train", "--data", "data", "--out", "x", "--set", kv], &root);
        assert_eq!(out.status.code(), Some(1));
        assert_eq!(error_line(&out)["error"]["kind"], "config", "{kv}");
    }
    assert!(!root.join("x").exists());
    let out = igrec(&["nonsense"], &root);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "usage");
}

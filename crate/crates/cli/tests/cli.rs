use std::path::Path;
use std::process::{Command, Output};

use wgflow_cli::log::{read_rows, HEADER};
use wgflow_cli::RunConfig;

fn wgflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = wgflow(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

const TINY_INDIRECT: &[&str] = &[
    "--set",
    "indirect.iterations=3",
    "--set",
    "indirect.batch_size=120",
    "--set",
    "indirect.particles=3",
    "--set",
    "indirect.eval_every=2",
];

fn args<'a>(cmd: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--out", out];
    v.extend_from_slice(extra);
    v
}

#[test]
fn empty_file_gives_defaults_and_precedence_holds() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.cfg");
    std::fs::write(&empty, "# nothing here\n\n").unwrap();
    assert_eq!(RunConfig::load(Some(&empty), &[]).unwrap(), RunConfig::default());

    let file = dir.path().join("run.cfg");
    std::fs::write(&file, "w2_scale = 0.2  # half the default\nseeds = 3,1\n").unwrap();
    let cfg = RunConfig::load(Some(&file), &["w2_scale=0".into()]).unwrap();
    assert_eq!(cfg.f64("w2_scale"), 0.0);
    assert_eq!(cfg.seeds().unwrap(), vec![1, 3]);
    let cfg = RunConfig::load(Some(&file), &[]).unwrap();
    assert_eq!(cfg.f64("w2_scale"), 0.2);
}

#[test]
fn bad_keys_and_values_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    for (set, needle) in [
        ("w2_scal=1", "w2_scal"),
        ("sample.particles=many", "sample.particles"),
        ("bandwidth=-1", "bandwidth"),
        ("env=pong", "env"),
    ] {
        let res = wgflow(&["sample", "--out", o, "--set", set]);
        assert!(!res.status.success());
        assert!(String::from_utf8_lossy(&res.stderr).contains(needle), "{set}");
    }
    let file = dir.path().join("bad.cfg");
    std::fs::write(&file, "gamma = 0.9\nnot a pair\n").unwrap();
    let err = RunConfig::load(Some(&file), &[]).unwrap_err();
    assert!(format!("{err:#}").contains("line 2"));
}

#[test]
fn sample_run_writes_schema_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    run_ok(&args(
        "sample",
        o,
        &[
            "--set",
            "sample.target=two-modes",
            "--set",
            "sample.steps=40",
            "--set",
            "sample.snapshot_every=20",
        ],
    ));
    assert!(read(&dir.path().join("run.csv")).starts_with(&format!("{HEADER}\n")));
    let rows = read_rows(&dir.path().join("run.csv")).unwrap();
    for metric in ["mean_error", "mode0_fraction", "mode1_fraction", "bandwidth", "lambda"] {
        assert!(rows.iter().any(|r| r.metric == metric && r.iteration == 40), "{metric}");
    }
    let snap = read(&dir.path().join("snapshots/seed0_step20.txt"));
    assert_eq!(snap.lines().count(), 64);
    assert!(snap
        .lines()
        .all(|l| l.split(' ').count() == 1 && l.parse::<f64>().is_ok()));
    assert!(dir.path().join("snapshots/seed0_step40.txt").exists());
    let summary: serde_json::Value = serde_json::from_str(&read(&dir.path().join("summary.json"))).unwrap();
    assert_eq!(summary["status"], "ok");
    assert!(summary["seeds"][0]["final_metrics"]["mean_error"].is_number());
}

#[test]
fn two_seeds_give_disjoint_ordered_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let mut a = args("rl-indirect", o, TINY_INDIRECT);
    a.extend(["--set", "seeds=5,2"]);
    run_ok(&a);
    let rows = read_rows(&dir.path().join("run.csv")).unwrap();
    let keys: Vec<(u64, usize)> = rows.iter().map(|r| (r.seed, r.iteration)).collect();
    assert!(keys.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(keys.first().unwrap().0, 2);
    assert_eq!(keys.last().unwrap(), &(5, 3));
    assert!(rows.iter().any(|r| r.metric == "eval_return" && r.iteration == 2));
    assert!(rows.iter().all(|r| r.run_id == "rl-indirect"));
    assert!(dir.path().join("checkpoints/seed2.txt").exists());
}

#[test]
fn parallel_seeds_match_sequential_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (s, p) = (dir.path().join("s"), dir.path().join("p"));
    let mut a = args("rl-indirect", s.to_str().unwrap(), TINY_INDIRECT);
    a.extend(["--set", "seeds=0,1,2"]);
    run_ok(&a);
    let mut b = args("rl-indirect", p.to_str().unwrap(), TINY_INDIRECT);
    b.extend(["--set", "seeds=0,1,2", "--parallel-seeds", "2"]);
    run_ok(&b);
    assert_eq!(read(&s.join("run.csv")), read(&p.join("run.csv")));
    assert!(std::fs::read_dir(&p)
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".part")));
}

#[test]
fn interrupted_run_leaves_parseable_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let mut a = args("rl-indirect", o, TINY_INDIRECT);
    a.extend(["--set", "debug.abort_after=2"]);
    let res = wgflow(&a);
    assert_eq!(res.status.code(), Some(130));
    let rows = read_rows(&dir.path().join("run.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.iteration).max(), Some(2));
    assert!(!dir.path().join("summary.json").exists());
}

#[test]
fn summary_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut first = args(
        "regress",
        a.to_str().unwrap(),
        &["--set", "regress.steps=30", "--set", "regress.particles=3"],
    );
    first.extend(["--set", "log_every=10"]);
    run_ok(&first);
    let summary: serde_json::Value = serde_json::from_str(&read(&a.join("summary.json"))).unwrap();
    let overrides: Vec<String> = summary["config"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| format!("{k}={}", v.as_str().unwrap()))
        .collect();
    let mut second = vec!["regress".to_string(), "--out".into(), b.to_str().unwrap().into()];
    for o in &overrides {
        second.extend(["--set".to_string(), o.clone()]);
    }
    let second: Vec<&str> = second.iter().map(String::as_str).collect();
    run_ok(&second);
    assert_eq!(read(&a.join("run.csv")), read(&b.join("run.csv")));
    let rows = read_rows(&a.join("run.csv")).unwrap();
    assert!(rows.iter().any(|r| r.metric == "test_ll" && r.iteration == 30));
}

#[test]
fn single_value_sweep_equals_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let (sweep, plain) = (dir.path().join("sweep"), dir.path().join("plain"));
    let mut a = args("sweep", sweep.to_str().unwrap(), TINY_INDIRECT);
    a.extend(["--set", "sweep.key=indirect.alpha", "--set", "sweep.values=6"]);
    run_ok(&a);
    let mut b = args("rl-indirect", plain.to_str().unwrap(), TINY_INDIRECT);
    b.extend(["--set", "indirect.alpha=6", "--set", "run_id=indirect.alpha=6"]);
    run_ok(&b);
    assert_eq!(
        read(&sweep.join("indirect.alpha=6/run.csv")),
        read(&plain.join("run.csv"))
    );
    let index: serde_json::Value = serde_json::from_str(&read(&sweep.join("sweep.json"))).unwrap();
    assert_eq!(index["runs"][0]["status"], "ok");
}

#[test]
fn sweep_rejects_bad_values_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let res = wgflow(&[
        "sweep",
        "--out",
        o,
        "--set",
        "sweep.key=indirect.particles",
        "--set",
        "sweep.values=2,x",
    ]);
    assert!(!res.status.success());
    assert!(!dir.path().join("indirect.particles=2").exists());
}

#[test]
fn direct_run_logs_goal_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let set = [
        "env=multigoal",
        "direct.epochs=2",
        "direct.epoch_steps=20",
        "direct.hidden=8,8",
        "direct.particles=4",
        "direct.batch_size=8",
        "direct.eval_episodes=2",
        "direct.final_eval_episodes=4",
    ];
    let mut a = vec!["rl-direct", "--out", o];
    for s in &set {
        a.extend(["--set", s]);
    }
    run_ok(&a);
    let rows = read_rows(&dir.path().join("run.csv")).unwrap();
    let total: f64 = rows
        .iter()
        .filter(|r| r.metric.starts_with("final_goal"))
        .map(|r| r.value)
        .sum();
    assert!(total <= 1.0 + 1e-12);
    assert_eq!(rows.iter().filter(|r| r.metric.starts_with("final_goal")).count(), 4);
    assert!(rows.iter().any(|r| r.metric == "v_loss"));
    let last = rows.last().unwrap();
    assert_eq!((last.iteration, last.env_steps), (2, 40));
}

#[test]
fn seed_errors_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let res = wgflow(&["regress", "--out", o, "--set", "regress.data=/nonexistent.csv"]);
    assert!(!res.status.success());
    let summary: serde_json::Value = serde_json::from_str(&read(&dir.path().join("summary.json"))).unwrap();
    assert_eq!(summary["status"], "failed");
    assert!(summary["seeds"][0]["error"].as_str().unwrap().contains("nonexistent"));
}

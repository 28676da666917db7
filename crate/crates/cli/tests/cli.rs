use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rollin_core::metrics::{read_csv, read_summary_csv, SummaryRow};

fn rollin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rollin")).args(args).output().expect("spawn rollin")
}

fn ok(args: &[&str]) -> Output {
    let out = rollin(args);
    assert!(
        out.status.success(),
        "rollin {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn solution(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap()
}

const TINY: &[&str] = &["--batch", "16", "--steps", "40", "--log-interval", "10", "--reward", "easy"];

#[test]
fn solve_two_state_matches_hand_solution() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["solve", "--mdp", s(&bundled("two_state.json")), "--alpha", "0.1", "--out", s(dir.path())]);
    let sol = solution(dir.path());
    // transitions ignore the action, so V = (I - gamma P)^-1 c with c the soft max of each reward row
    let a = 0.1f64;
    let c0 = a * ((1.0 / a).exp() + 1.0).ln();
    let c1 = a * (1.0 + (0.5 / a).exp()).ln();
    let v0 = (6.0 * c0 + 4.0 * c1) / 5.0;
    let v1 = 4.0 * c1 / 3.0 + v0 / 3.0;
    let v: Vec<f64> = serde_json::from_value(sol["v_star"].clone()).unwrap();
    assert!((v[0] - v0).abs() < 1e-8, "{v:?} vs {v0}");
    assert!((v[1] - v1).abs() < 1e-8, "{v:?} vs {v1}");
    let pi: Vec<Vec<f64>> = serde_json::from_value(sol["pi_star"].clone()).unwrap();
    let expect = 1.0 / (1.0 + (-1.0f64 / a).exp());
    assert!((pi[0][0] - expect).abs() < 1e-10);
    assert!(dir.path().join("effective_config.toml").exists());
}

#[test]
fn solve_zero_discount_returns_reward() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(bundled("two_state.json")).unwrap().replace("\"discount\": 0.5", "\"discount\": 0.0");
    let mdp = dir.path().join("myopic.json");
    fs::write(&mdp, text).unwrap();
    ok(&["solve", "--mdp", s(&mdp), "--out", s(dir.path())]);
    let q: Vec<Vec<f64>> = serde_json::from_value(solution(dir.path())["q_star"].clone()).unwrap();
    assert_eq!(q, vec![vec![1.0, 0.0], vec![0.0, 0.5]]);
}

#[test]
fn malformed_mdp_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = dir.path().join("bad.json");
    fs::write(
        &mdp,
        r#"{"n_states": 2, "n_actions": 1, "discount": 1.0,
            "transition": [[[0.7, 0.7]], [[-0.1, 1.1]]],
            "reward": [[0.0], [0.0]], "init_dist": [0.4, 0.4]}"#,
    )
    .unwrap();
    let out = rollin(&["solve", "--mdp", s(&mdp), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["discount 1", "row sum 1.4 at (0,0)", "negative probability -0.1 at (1,0) -> 0", "initial distribution sums to 0.8"] {
        assert!(err.contains(needle), "missing {needle:?} in:\n{err}");
    }
    assert!(!dir.path().join("solution.json").exists());
}

#[test]
fn zero_steps_writes_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--seed", "1", "--steps", "0", "--batch", "8", "--out", s(dir.path())]);
    let text = fs::read_to_string(dir.path().join("seed_1.csv")).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    assert!(text.starts_with("gradient_step,"));
}

#[test]
fn train_summary_recomputes_from_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seeds", "0..3", "--out", s(dir.path())];
    args.extend_from_slice(TINY);
    ok(&args);
    let runs: Vec<_> = (0..3)
        .map(|seed| read_csv(fs::File::open(dir.path().join(format!("seed_{seed}.csv"))).unwrap()).unwrap())
        .collect();
    for rows in &runs {
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.last().unwrap().gradient_step, 40);
    }
    let summary = read_summary_csv(fs::File::open(dir.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(summary.len(), 1);
    let again = SummaryRow::from_runs(&summary[0].label, summary[0].beta, &runs);
    assert!((again.kappa_mean - summary[0].kappa_mean).abs() < 1e-12);
    assert!((again.return_mean - summary[0].return_mean).abs() < 1e-12);
    assert!((again.entreg_return_mean - summary[0].entreg_return_mean).abs() < 1e-12);
    assert!((again.success_rate_mean - summary[0].success_rate_mean).abs() < 1e-12);
}

#[test]
fn sweep_rows_and_beta_zero_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let mut args = vec!["sweep", "--seeds", "5", "--out", s(&sweep)];
    args.extend_from_slice(TINY);
    ok(&args);
    let summary = read_summary_csv(fs::File::open(sweep.join("summary.csv")).unwrap()).unwrap();
    let betas: Vec<f64> = summary.iter().map(|r| r.beta).collect();
    assert_eq!(betas, vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 0.9]);

    let base = dir.path().join("base");
    let mut args = vec!["train", "--seed", "5", "--method", "baseline", "--out", s(&base)];
    args.extend_from_slice(TINY);
    ok(&args);
    let a = fs::read(sweep.join("beta_0").join("seed_5.csv")).unwrap();
    let b = fs::read(base.join("seed_5.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn injected_fault_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "verify", "--suite", "contraction", "--instances", "2", "--no-fourroom", "--inject-fault", "--out",
        s(dir.path()),
    ];
    let out = rollin(&args);
    assert_eq!(out.status.code(), Some(1));
    let report: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report.iter().any(|r| r["pass"] == false));
}

#[test]
fn verify_report_is_deterministic() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        ok(&[
            "verify", "--suite", "all", "--instances", "3", "--mc-samples", "20000", "--no-fourroom", "--seed", "11",
            "--threads", threads, "--out", s(dir.path()),
        ]);
        fs::read(dir.path().join("report.json")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn train_output_independent_of_threads() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["train", "--seeds", "2,9", "--beta", "0.5", "--threads", threads, "--out", s(dir.path())];
        args.extend_from_slice(TINY);
        ok(&args);
        (fs::read(dir.path().join("seed_2.csv")).unwrap(), fs::read(dir.path().join("seed_9.csv")).unwrap())
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn config_file_values_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "[train]\nseeds = [3]\nbatch = 8\nsteps = 20\nlog_interval = 5\nbeta = 0.3\n").unwrap();
    let out = dir.path().join("out");
    ok(&["train", "--config", s(&config), "--steps", "10", "--out", s(&out)]);
    let rows = read_csv(fs::File::open(out.join("seed_3.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    let eff = fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(eff.contains("steps = 10"), "{eff}");
    assert!(eff.contains("beta = 0.3"), "{eff}");
}

#[test]
fn curriculum_export_round_trips() {
    let out = ok(&["curriculum-export", "--reward", "hard", "--beta", "0.75"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["contexts"].as_array().unwrap().len(), 17);
    assert_eq!(v["beta"], 0.75);
}

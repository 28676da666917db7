//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! The full-scale table reproduction only runs with `ROLLIN_FULL_SCALE=1`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rollin_core::exact::{exact_q_values, mixture_distributions, visitation_distribution};
use rollin_core::fourroom::{default_layout, FourRoomEnv, RewardVariant};
use rollin_core::instances::{random_mdp, random_policy};
use rollin_core::metrics::median;
use rollin_core::sampling::{est_ent_q, sam_sa, sample_mixture_initial, MixtureMode, MixtureSpec, RngStream, SnapshotChain};
use rollin_core::spg::{train_fourroom, Method, TrainConfig};
use rollin_core::tabular::StateDistribution;
use rollin_core::verify::{run_suite, CheckReport, Suite, SuiteConfig};

const SEED: u64 = 20240;
const SAMPLES: usize = 1_000_000;
/// Fixed seeds for the stochastic training comparison.
const TREND_SEEDS: [u64; 5] = [101, 102, 103, 104, 105];

struct Verdict {
    pass: Option<bool>,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass: Some(pass), detail }
    }
}

fn suites(list: &[Suite], config: &SuiteConfig) -> Vec<CheckReport> {
    list.iter()
        .flat_map(|&s| run_suite(s, SEED, config).expect("suite runs"))
        .collect()
}

fn summarize(reports: &[CheckReport]) -> Verdict {
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}[{}]", r.name, r.instance.label))
        .collect();
    let mut names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let counts: Vec<String> = names
        .iter()
        .map(|n| format!("{n}={}", reports.iter().filter(|r| r.name == *n).count()))
        .collect();
    Verdict::new(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks ({})", reports.len(), counts.join(", "))
        } else {
            format!("{} of {} failed: {}", failed.len(), reports.len(), failed.join(" "))
        },
    )
}

fn exact_identities() -> Verdict {
    let reports = suites(
        &[Suite::FixedPoint, Suite::Suboptimality, Suite::Contraction],
        &SuiteConfig { fourroom: false, ..Default::default() },
    );
    summarize(&reports)
}

fn gradient_correctness() -> Verdict {
    let reports = suites(&[Suite::Gradient], &SuiteConfig { mc_samples: SAMPLES, ..Default::default() });
    let mut v = summarize(&reports);
    let worst_z = reports
        .iter()
        .filter_map(|r| r.extras.get("mc_max_z"))
        .fold(0.0f64, |m, &z| m.max(z));
    v.detail.push_str(&format!("; max MC z-score {worst_z:.2}"));
    v
}

fn tv(counts: &[usize], exact: &StateDistribution) -> f64 {
    let n: usize = counts.iter().sum();
    0.5 * counts
        .iter()
        .zip(exact.probs())
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .sum::<f64>()
}

fn sampler_laws() -> Verdict {
    let mut rng = RngStream::new(SEED, &[3, 0]);
    let mdp = random_mdp(&mut rng, 4, 3, 0.9);
    let policy = random_policy(&mut rng, 4, 3, 1.0);
    let table = policy.table();
    let alpha = 0.1;

    let d = visitation_distribution(&mdp, &policy, mdp.init_dist()).unwrap();
    let mut rng = RngStream::new(SEED, &[3, 1]);
    let mut counts = vec![0usize; 4];
    for _ in 0..SAMPLES {
        counts[sam_sa(&mdp, &table, &mut rng).0] += 1;
    }
    let tv_samsa = tv(&counts, &d);

    let q = exact_q_values(&mdp, &policy, alpha).unwrap();
    let mut worst_z = 0.0f64;
    for (i, &q_exact) in q.iter().enumerate() {
        let mut rng = RngStream::new(SEED, &[3, 2, i as u64]);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..SAMPLES {
            let x = est_ent_q(&mdp, &table, alpha, i / 3, i % 3, &mut rng);
            sum += x;
            sq += x * x;
        }
        let n = SAMPLES as f64;
        let mean = sum / n;
        let se = ((sq / n - mean * mean) * n / (n - 1.0)).sqrt() / n.sqrt();
        worst_z = worst_z.max((mean - q_exact).abs() / se);
    }

    let beta = 0.75;
    let mut chain = SnapshotChain::new();
    chain.push(policy.clone());
    let spec = MixtureSpec {
        dynamics: mdp.dynamics(),
        rho: mdp.init_dist(),
        beta,
        gamma: mdp.discount(),
        mode: MixtureMode::Recursive,
    };
    let target = mixture_distributions(&mdp, &[policy], mdp.init_dist(), beta, 1).unwrap();
    let mut rng = RngStream::new(SEED, &[3, 3]);
    let mut counts = vec![0usize; 4];
    for _ in 0..SAMPLES {
        counts[sample_mixture_initial(&chain, 1, &spec, &mut rng).unwrap()] += 1;
    }
    let tv_mix = tv(&counts, &target[1]);

    Verdict::new(
        tv_samsa <= 0.005 && worst_z <= 3.0 && tv_mix <= 0.01,
        format!("sam_sa TV {tv_samsa:.2e} (<= 5e-3), est_ent_q max z {worst_z:.2} over 12 pairs (<= 3), depth-1 mixture TV {tv_mix:.2e} (<= 1e-2)"),
    )
}

fn bound_suites() -> Verdict {
    summarize(&suites(
        &[Suite::PolicyContext, Suite::AdjacentValue, Suite::Mismatch],
        &SuiteConfig::default(),
    ))
}

struct Runs {
    kappa: Vec<f64>,
    ret: Vec<f64>,
    /// Step of the last context switch per seed.
    last_switch: Vec<usize>,
}

fn final_kappas(config: &TrainConfig, seeds: &[u64]) -> Runs {
    let env = FourRoomEnv::new(default_layout(), config.reward);
    let mut runs = Runs { kappa: vec![], ret: vec![], last_switch: vec![] };
    for &seed in seeds {
        let out = train_fourroom(&env, config, seed).expect("training runs");
        runs.kappa.push(out.final_kappa);
        runs.ret.push(out.rows.last().map_or(0.0, |r| r.mean_undiscounted_return));
        runs.last_switch.push(out.switches.last().map_or(0, |s| s.0));
    }
    runs
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn trend(base: TrainConfig, seeds: &[u64]) -> (Runs, Runs) {
    let rollin = TrainConfig { method: Method::Rollin, beta: 0.75, ..base.clone() };
    let baseline = TrainConfig { method: Method::Baseline, beta: 0.0, ..base };
    (final_kappas(&rollin, seeds), final_kappas(&baseline, seeds))
}

fn scaled_trend() -> Verdict {
    let base = TrainConfig {
        reward: RewardVariant::Hard,
        alpha: 0.001,
        batch: 500,
        horizon: 50,
        steps: 10_000,
        log_interval: 500,
        exact_value: false,
        ..Default::default()
    };
    let (r, b) = trend(base, &TREND_SEEDS);
    let (mr, mb) = (median(&r.kappa), median(&b.kappa));
    let gap = mean(&r.kappa) - mean(&b.kappa);
    Verdict::new(
        mr > mb && gap >= 1.0 / 16.0 - 1e-12,
        format!(
            "final kappa rollin {:?} (median {mr}), baseline {:?} (median {mb}); mean gap {gap:.4} (>= 0.0625); \
             last switch step rollin {:?}, baseline {:?}",
            r.kappa, b.kappa, r.last_switch, b.last_switch
        ),
    )
}

fn full_scale() -> Verdict {
    if std::env::var("ROLLIN_FULL_SCALE").as_deref() != Ok("1") {
        return Verdict {
            pass: None,
            detail: "set ROLLIN_FULL_SCALE=1 to run (hours)".into(),
        };
    }
    let seeds: Vec<u64> = (0..10).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for (alpha, target_rollin, target_base) in [(0.001, 1.0, 0.856), (0.01, 0.5625, 0.5)] {
        let base = TrainConfig { alpha, exact_value: false, ..Default::default() };
        let (r, b) = trend(base, &seeds);
        let (mr, mb) = (mean(&r.kappa), mean(&b.kappa));
        let (rr, rb) = (r.ret, b.ret);
        let within = (mr - target_rollin).abs() <= 2.0 / 16.0 && (mb - target_base).abs() <= 2.0 / 16.0;
        let returns = mr < mb || mean(&rr) >= mean(&rb);
        ok &= within && returns;
        lines.push(format!("alpha {alpha}: rollin {mr:.4} (target {target_rollin}), baseline {mb:.4} (target {target_base}), return {:.3} vs {:.3}", mean(&rr), mean(&rb)));
    }
    Verdict::new(ok, lines.join("; "))
}

fn rollin_bin(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_rollin")).args(args).output().expect("spawn rollin");
    // exit code 1 only reports failed checks; determinism compares reports regardless
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn read_all(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| fs::read(dir.join(n)).expect("output file")).collect()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let train = |tag: &str, threads: &str| {
        let out = tmp.path().join(tag);
        let o = out.to_str().unwrap();
        rollin_bin(&[
            "train", "--seeds", "0..3", "--beta", "0.75", "--batch", "64", "--steps", "300", "--log-interval", "25",
            "--threads", threads, "--out", o,
        ]);
        read_all(&out, &["seed_0.csv", "seed_1.csv", "seed_2.csv", "summary.csv"])
    };
    let verify = |tag: &str, threads: &str| {
        let out = tmp.path().join(tag);
        let o = out.to_str().unwrap();
        rollin_bin(&[
            "verify", "--suite", "all", "--instances", "10", "--mc-samples", "50000", "--seed", "3", "--threads",
            threads, "--out", o,
        ]);
        read_all(&out, &["report.json"])
    };
    let t1 = train("t1", "1");
    let same = t1 == train("t1b", "1");
    let threads = t1 == train("t4", "4");
    let v1 = verify("v1", "1");
    let vsame = v1 == verify("v1b", "1");
    let vthreads = v1 == verify("v4", "4");
    Verdict::new(
        same && threads && vsame && vthreads,
        format!("train rerun {same}, train 1 vs 4 threads {threads}, verify rerun {vsame}, verify 1 vs 4 threads {vthreads}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Duration); 7] = [
        ("exact identities", exact_identities, Duration::from_secs(10)),
        ("gradient correctness", gradient_correctness, Duration::from_secs(120)),
        ("sampler laws", sampler_laws, Duration::from_secs(180)),
        ("bound suites", bound_suites, Duration::from_secs(60)),
        ("scaled trend", scaled_trend, Duration::from_secs(1800)),
        ("full-scale table", full_scale, Duration::MAX),
        ("determinism", determinism, Duration::MAX),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = run();
        let elapsed = t.elapsed();
        let status = match v.pass {
            None => "SKIP",
            Some(true) => "PASS",
            Some(false) => "FAIL",
        };
        if v.pass == Some(false) {
            failures += 1;
        }
        // runtime targets are reported, not enforced: they assume a desktop, not CI
        let over = if elapsed > *budget { " [over runtime target]" } else { "" };
        println!("{status} criterion {} {name} ({:.1}s{over}): {}", i + 1, elapsed.as_secs_f64(), v.detail);
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

//! `rollin` command-line driver.
//!
//! Every command reads an optional TOML config (one section per command), applies
//! command-line overrides on top, echoes the effective config into the output
//! directory and writes CSV / JSON results there.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rollin_core::exact::soft_value_iteration;
use rollin_core::fourroom::{default_layout, FourRoomEnv, GridLayout, RewardVariant};
use rollin_core::metrics::{write_csv, write_summary_csv, MetricsRow, SummaryRow};
use rollin_core::rollin::Curriculum;
use rollin_core::sampling::MixtureMode;
use rollin_core::spg::{train_fourroom, Method, TrainConfig};
use rollin_core::tabular::{validate_mdp, MdpDocument, TabularMdp};
use rollin_core::verify::{injected_fault, run_suite, CheckReport, Suite, SuiteConfig};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Parser)]
#[command(name = "rollin", version, about = "Tabular curriculum RL: exact solvers, SPG training, bound checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Soft value iteration on a serialized MDP.
    Solve(SolveArgs),
    /// Four-room training, one CSV per seed plus a summary.
    Train(TrainArgs),
    /// Train over a grid of beta values.
    Sweep(SweepArgs),
    /// Numerical check suites.
    Verify(VerifyArgs),
    /// Write the curriculum as JSON.
    CurriculumExport(ExportArgs),
}

/// Seed selection: a single `N`, a half-open range `N..M`, an inclusive
/// `N..=M`, or a comma list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl std::str::FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("bad seed {x:?}: {e}"));
        let seeds = if let Some((a, b)) = s.split_once("..=") {
            (num(a)?..=num(b)?).collect()
        } else if let Some((a, b)) = s.split_once("..") {
            (num(a)?..num(b)?).collect()
        } else {
            s.split(',').map(num).collect::<std::result::Result<Vec<_>, _>>()?
        };
        if seeds.is_empty() {
            return Err(format!("seed range {s:?} is empty"));
        }
        Ok(SeedList(seeds))
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; command-line flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// MDP JSON file.
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_parser = ["easy", "hard"])]
    pub reward: Option<String>,
    #[arg(long, value_parser = ["baseline", "rollin"])]
    pub method: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub log_interval: Option<usize>,
    #[arg(long, value_parser = ["recursive", "shallow"])]
    pub mixture: Option<String>,
    #[arg(long)]
    pub switch_threshold: Option<f64>,
    /// Layout JSON (defaults to the bundled four-room layout).
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Fill the wall_time_s column (makes output non-reproducible).
    #[arg(long)]
    pub wall_time: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Comma-separated beta grid.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random instances per check family.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Monte Carlo draws for the unbiasedness check.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Skip the four-room instances.
    #[arg(long)]
    pub no_fourroom: bool,
    /// Append a deliberately broken check (exercises failure handling).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long, value_parser = ["easy", "hard"])]
    pub reward: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub switch_threshold: Option<f64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// config file sections

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub solve: Option<SolveConfig>,
    pub train: Option<TrainSection>,
    pub sweep: Option<SweepSection>,
    pub verify: Option<VerifyConfig>,
    pub curriculum: Option<ExportConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub mdp: Option<PathBuf>,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub out: PathBuf,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            mdp: None,
            alpha: 0.1,
            tol: 1e-10,
            max_iter: 10_000_000,
            out: PathBuf::from("out/solve"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub layout: Option<PathBuf>,
    #[serde(flatten)]
    pub run: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            out: PathBuf::from("out/train"),
            layout: None,
            run: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub layout: Option<PathBuf>,
    #[serde(flatten)]
    pub run: TrainConfig,
}

/// The beta grid of the sweep tables.
pub const DEFAULT_BETAS: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 0.9];

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            betas: DEFAULT_BETAS.to_vec(),
            seeds: (0..10).collect(),
            out: PathBuf::from("out/sweep"),
            layout: None,
            run: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub suite: String,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(flatten)]
    pub suite_config: SuiteConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            suite: "all".into(),
            seed: 0,
            out: PathBuf::from("out/verify"),
            suite_config: SuiteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportConfig {
    pub layout: Option<PathBuf>,
    pub reward: RewardVariant,
    pub beta: f64,
    pub switch_threshold: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            layout: None,
            reward: RewardVariant::Hard,
            beta: 0.75,
            switch_threshold: 0.5,
        }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn write_effective<T: Serialize>(dir: &Path, section: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut table = toml::Table::new();
    table.insert(section.to_string(), toml::Value::try_from(value)?);
    fs::write(dir.join(EFFECTIVE_CONFIG), toml::to_string(&table)?)?;
    Ok(())
}

fn load_layout(path: Option<&Path>) -> Result<GridLayout> {
    match path {
        None => Ok(default_layout()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading layout {}", p.display()))?;
            Ok(GridLayout::from_json(&text)?)
        }
    }
}

/// Runs `f` on a dedicated pool when a thread count is given.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?.install(f)),
    }
}

// ---------------------------------------------------------------------------
// solve

/// Resolved solve settings: defaults < config file < flags.
pub fn resolve_solve(args: &SolveArgs) -> Result<SolveConfig> {
    let mut c = load_config(args.common.config.as_deref())?.solve.unwrap_or_default();
    if let Some(p) = &args.mdp {
        c.mdp = Some(p.clone());
    }
    if let Some(v) = args.alpha {
        c.alpha = v;
    }
    if let Some(v) = args.tol {
        c.tol = v;
    }
    if let Some(v) = args.max_iter {
        c.max_iter = v;
    }
    if let Some(p) = &args.common.out {
        c.out = p.clone();
    }
    Ok(c)
}

/// Loads and validates an MDP file; the error lists every violation.
pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: MdpDocument = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let report = validate_mdp(&doc);
    if !report.is_ok() {
        bail!("{} is not a valid MDP:\n{report}", path.display());
    }
    Ok(TabularMdp::from_document(&doc)?)
}

pub fn cmd_solve(config: &SolveConfig) -> Result<PathBuf> {
    let path = config.mdp.as_deref().context("no MDP file given (--mdp)")?;
    let mdp = load_mdp(path)?;
    let solution = soft_value_iteration(&mdp, config.alpha, config.tol, config.max_iter)?;
    write_effective(&config.out, "solve", config)?;
    let out = config.out.join("solution.json");
    fs::write(&out, solution.to_json()?)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// train / sweep

fn apply_train_flags(run: &mut TrainConfig, seeds: &mut Vec<u64>, layout: &mut Option<PathBuf>, f: &TrainFlags) -> Result<()> {
    if let Some(s) = &f.seeds {
        *seeds = s.0.clone();
    }
    if let Some(s) = f.seed {
        *seeds = vec![s];
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = f.$field {
                run.$field = v;
            }
        };
    }
    set!(beta);
    set!(alpha);
    set!(gamma);
    set!(steps);
    set!(batch);
    set!(horizon);
    set!(lr);
    set!(log_interval);
    set!(switch_threshold);
    if let Some(r) = &f.reward {
        run.reward = r.parse()?;
    }
    if let Some(m) = &f.method {
        run.method = m.parse()?;
    }
    if let Some(m) = &f.mixture {
        run.mixture = m.parse::<MixtureMode>()?;
    }
    if f.wall_time {
        run.record_wall_time = true;
    }
    if let Some(p) = &f.layout {
        *layout = Some(p.clone());
    }
    run.validate()?;
    Ok(())
}

pub fn resolve_train(args: &TrainArgs) -> Result<TrainSection> {
    let mut c = load_config(args.common.config.as_deref())?.train.unwrap_or_default();
    apply_train_flags(&mut c.run, &mut c.seeds, &mut c.layout, &args.flags)?;
    if let Some(p) = &args.common.out {
        c.out = p.clone();
    }
    if c.seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(c)
}

pub fn resolve_sweep(args: &SweepArgs) -> Result<SweepSection> {
    let mut c = load_config(args.common.config.as_deref())?.sweep.unwrap_or_default();
    apply_train_flags(&mut c.run, &mut c.seeds, &mut c.layout, &args.flags)?;
    if let Some(b) = &args.betas {
        c.betas = b.clone();
    }
    if let Some(p) = &args.common.out {
        c.out = p.clone();
    }
    if c.seeds.is_empty() || c.betas.is_empty() {
        bail!("sweep needs at least one seed and one beta");
    }
    Ok(c)
}

pub fn seed_csv_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

fn run_label(run: &TrainConfig) -> String {
    let method = match run.method {
        Method::Baseline => "baseline",
        Method::Rollin => "rollin",
    };
    format!("{method}/{:?}/alpha={}/beta={}", run.reward, run.alpha, run.effective_beta()).to_lowercase()
}

/// Trains every seed (in parallel), writes `seed_N.csv` into `dir` and returns
/// the per-seed rows in seed order.
fn train_seeds(env: &FourRoomEnv, run: &TrainConfig, seeds: &[u64], dir: &Path) -> Result<Vec<Vec<MetricsRow>>> {
    fs::create_dir_all(dir)?;
    let runs: Vec<Vec<MetricsRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let out = train_fourroom(env, run, seed)?;
            let file = fs::File::create(dir.join(seed_csv_name(seed)))?;
            write_csv(&out.rows, std::io::BufWriter::new(file))?;
            Ok(out.rows)
        })
        .collect::<Result<_>>()?;
    Ok(runs)
}

pub fn cmd_train(config: &TrainSection, threads: Option<usize>) -> Result<SummaryRow> {
    let layout = load_layout(config.layout.as_deref())?;
    let env = FourRoomEnv::new(layout, config.run.reward);
    write_effective(&config.out, "train", config)?;
    let runs = with_threads(threads, || train_seeds(&env, &config.run, &config.seeds, &config.out))??;
    let summary = SummaryRow::from_runs(&run_label(&config.run), config.run.effective_beta(), &runs);
    write_summary_csv(std::slice::from_ref(&summary), fs::File::create(config.out.join("summary.csv"))?)?;
    Ok(summary)
}

pub fn beta_dir_name(beta: f64) -> String {
    format!("beta_{beta}")
}

pub fn cmd_sweep(config: &SweepSection, threads: Option<usize>) -> Result<Vec<SummaryRow>> {
    let layout = load_layout(config.layout.as_deref())?;
    let env = FourRoomEnv::new(layout, config.run.reward);
    write_effective(&config.out, "sweep", config)?;
    let summaries = with_threads(threads, || {
        config
            .betas
            .iter()
            .map(|&beta| {
                // beta = 0 runs the rollin code path, which is exactly the baseline
                let run = TrainConfig {
                    beta,
                    method: Method::Rollin,
                    ..config.run.clone()
                };
                run.validate()?;
                let runs = train_seeds(&env, &run, &config.seeds, &config.out.join(beta_dir_name(beta)))?;
                Ok(SummaryRow::from_runs(&run_label(&run), beta, &runs))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    write_summary_csv(&summaries, fs::File::create(config.out.join("summary.csv"))?)?;
    Ok(summaries)
}

// ---------------------------------------------------------------------------
// verify

pub fn resolve_verify(args: &VerifyArgs) -> Result<VerifyConfig> {
    let mut c = load_config(args.common.config.as_deref())?.verify.unwrap_or_default();
    if let Some(s) = &args.suite {
        c.suite = s.clone();
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(n) = args.instances {
        c.suite_config.instances = n;
        c.suite_config.q_pairs = 10 * n;
    }
    if let Some(n) = args.mc_samples {
        c.suite_config.mc_samples = n;
    }
    if args.no_fourroom {
        c.suite_config.fourroom = false;
    }
    if let Some(p) = &args.common.out {
        c.out = p.clone();
    }
    c.suite.parse::<Suite>()?;
    Ok(c)
}

/// Runs the selected suites, writes `report.json`, and returns the reports.
pub fn cmd_verify(config: &VerifyConfig, inject_fault: bool, threads: Option<usize>) -> Result<Vec<CheckReport>> {
    let suite: Suite = config.suite.parse()?;
    let mut reports = with_threads(threads, || run_suite(suite, config.seed, &config.suite_config))??;
    if inject_fault {
        reports.push(injected_fault(config.seed)?);
    }
    write_effective(&config.out, "verify", config)?;
    fs::write(config.out.join("report.json"), serde_json::to_string_pretty(&reports)?)?;
    Ok(reports)
}

/// One line per check family: count, failures, worst slack.
pub fn verify_table(reports: &[CheckReport]) -> String {
    let mut names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    names.dedup();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = format!("{:<24} {:>6} {:>6} {:>14}\n", "check", "runs", "failed", "max lhs-rhs");
    for name in names {
        if !seen.insert(name) {
            continue;
        }
        let group: Vec<&CheckReport> = reports.iter().filter(|r| r.name == name).collect();
        let failed = group.iter().filter(|r| !r.pass).count();
        let worst = group.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!("{name:<24} {:>6} {failed:>6} {worst:>14.3e}\n", group.len()));
    }
    for r in reports.iter().filter(|r| !r.pass) {
        out.push_str(&format!(
            "FAIL {} [{}] lhs={:e} rhs={:e} tol={:e}\n",
            r.name, r.instance.label, r.lhs, r.rhs, r.tolerance
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// curriculum export

pub fn cmd_curriculum_export(args: &ExportArgs) -> Result<String> {
    let mut c = load_config(args.config.as_deref())?.curriculum.unwrap_or_default();
    if let Some(p) = &args.layout {
        c.layout = Some(p.clone());
    }
    if let Some(r) = &args.reward {
        c.reward = r.parse()?;
    }
    if let Some(b) = args.beta {
        c.beta = b;
    }
    if let Some(t) = args.switch_threshold {
        c.switch_threshold = t;
    }
    let layout = load_layout(c.layout.as_deref())?;
    let contexts = rollin_core::fourroom::curriculum_goals(&layout, c.reward);
    let curriculum = Curriculum::new(contexts, c.beta, c.switch_threshold)?;
    let text = curriculum.to_json()?;
    if let Some(p) = &args.out {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, &text)?;
    }
    Ok(text)
}

/// Entry point; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve(args) => {
            let config = resolve_solve(&args)?;
            let out = cmd_solve(&config)?;
            println!("wrote {}", out.display());
        }
        Command::Train(args) => {
            let config = resolve_train(&args)?;
            let s = cmd_train(&config, args.common.threads)?;
            println!(
                "{}: {} seeds, final kappa {:.4} +- {:.4} (median {:.4}), return {:.4} +- {:.4}",
                s.label, s.n_seeds, s.kappa_mean, s.kappa_stderr, s.kappa_median, s.return_mean, s.return_stderr
            );
        }
        Command::Sweep(args) => {
            let config = resolve_sweep(&args)?;
            for s in cmd_sweep(&config, args.common.threads)? {
                println!("beta {:<5} kappa {:.4} +- {:.4}  return {:.4} +- {:.4}", s.beta, s.kappa_mean, s.kappa_stderr, s.return_mean, s.return_stderr);
            }
        }
        Command::Verify(args) => {
            let config = resolve_verify(&args)?;
            let reports = cmd_verify(&config, args.inject_fault, args.common.threads)?;
            print!("{}", verify_table(&reports));
            let failed = reports.iter().filter(|r| !r.pass).count();
            println!("{} checks, {failed} failed; report in {}", reports.len(), config.out.join("report.json").display());
            if failed > 0 {
                return Ok(1);
            }
        }
        Command::CurriculumExport(args) => {
            let text = cmd_curriculum_export(&args)?;
            if args.out.is_none() {
                println!("{text}");
            }
        }
    }
    Ok(0)
}

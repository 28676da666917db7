//! Numerical checks of the identities and explicit-constant bounds behind the
//! curriculum analysis, with the exact solvers as oracle.
//!
//! Contexts are encoded as raw reward tables with Euclidean distance, so the
//! reward is 1-Lipschitz in the context by construction (`max|r - r'| <= ||r - r'||_2`,
//! which every pairwise check also records).

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{
    dot, exact_gradient, exact_policy_evaluation, mismatch_ratio, mixture_distributions, policy_kl,
    soft_bellman, soft_value_iteration, sup_dist, visitation_distribution, SoftSolution,
};
use crate::fourroom::{build_dynamics, curriculum_goals, default_layout, reward_table, GridLayout, RewardVariant};
use crate::instances::{random_chain, random_mdp, random_policy, random_rewards};
use crate::sampling::RngStream;
use crate::spg::{accumulate_score, alg4_sample};
use crate::tabular::{SoftmaxPolicy, StateDistribution, TabularMdp};

/// VI tolerance used by every check that needs `Q*`.
pub const VI_TOL: f64 = 1e-12;
const VI_MAX_ITER: usize = 10_000_000;

/// What a check was run on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub label: String,
    pub seed: Option<u64>,
    pub n_states: usize,
    pub n_actions: usize,
    pub alpha: Option<f64>,
    pub gamma: f64,
    pub beta: Option<f64>,
}

impl Instance {
    fn of(label: impl Into<String>, seed: Option<u64>, mdp: &TabularMdp) -> Self {
        Self {
            label: label.into(),
            seed,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            alpha: None,
            gamma: mdp.discount(),
            beta: None,
        }
    }

    fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    fn beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }
}

/// Outcome of one check: `pass` iff the stated relation between `lhs` and `rhs`
/// holds within `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub instance: Instance,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(name: &str, instance: Instance, lhs: f64, rhs: f64, tolerance: f64, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            instance,
            lhs,
            rhs,
            tolerance,
            pass,
            extras: BTreeMap::new(),
        }
    }

    fn extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.to_string(), value);
        self
    }

    /// Inequality report: passes iff `lhs <= rhs + tolerance`.
    fn upper(name: &str, instance: Instance, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let pass = lhs <= rhs + tolerance;
        Self::new(name, instance, lhs, rhs, tolerance, pass)
    }

    /// Identity report: passes iff `|lhs - rhs| <= tolerance`.
    fn equal(name: &str, instance: Instance, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let pass = (lhs - rhs).abs() <= tolerance;
        Self::new(name, instance, lhs, rhs, tolerance, pass)
    }
}

/// `||r - r'||_2` over the flattened tables.
pub fn context_distance(r: &[f64], r2: &[f64]) -> f64 {
    r.iter().zip(r2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn solve(mdp: &TabularMdp, alpha: f64) -> Result<SoftSolution> {
    soft_value_iteration(mdp, alpha, VI_TOL, VI_MAX_ITER)
}

/// `V*(rho) - V^pi(rho) = (1/(1-gamma)) sum_s d^pi_rho(s) alpha KL(pi(.|s) || pi*(.|s))`.
pub fn check_suboptimality_identity(mdp: &TabularMdp, alpha: f64, policy: &SoftmaxPolicy) -> Result<CheckReport> {
    let star = solve(mdp, alpha)?;
    check_suboptimality_with(mdp, alpha, policy, &star, Instance::of("", None, mdp))
}

fn check_suboptimality_with(
    mdp: &TabularMdp,
    alpha: f64,
    policy: &SoftmaxPolicy,
    star: &SoftSolution,
    instance: Instance,
) -> Result<CheckReport> {
    let rho = mdp.init_dist();
    let v_pi = exact_policy_evaluation(mdp, policy, alpha)?;
    let lhs = star.value(rho) - dot(rho.probs(), &v_pi);
    let d = visitation_distribution(mdp, policy, rho)?;
    let kl = policy_kl(policy, &star.policy());
    let rhs = alpha * dot(d.probs(), &kl) / (1.0 - mdp.discount());
    Ok(CheckReport::equal("suboptimality_identity", instance.alpha(alpha), lhs, rhs, 1e-8))
}

/// `||T Q1 - T Q2||_inf <= gamma ||Q1 - Q2||_inf`.
pub fn check_contraction(mdp: &TabularMdp, alpha: f64, q1: &[f64], q2: &[f64]) -> Result<CheckReport> {
    let t1 = soft_bellman(mdp, alpha, q1)?;
    let t2 = soft_bellman(mdp, alpha, q2)?;
    let lhs = sup_dist(&t1, &t2);
    let rhs = mdp.discount() * sup_dist(q1, q2);
    Ok(CheckReport::upper(
        "contraction",
        Instance::of("", None, mdp).alpha(alpha),
        lhs,
        rhs,
        1e-12,
    ))
}

/// Optimal Q and policy move at most `||r - r'||_2 / (1-gamma)` and
/// `||r - r'||_2 / (alpha (1-gamma))` between two contexts on shared dynamics.
///
/// `lhs`/`rhs` carry the Q bound; the policy bound is in the extras and also
/// gates `pass`.
pub fn check_policy_context_bound(mdp: &TabularMdp, r: &[f64], r2: &[f64], alpha: f64) -> Result<CheckReport> {
    let a = solve(&mdp.with_reward(r.into())?, alpha)?;
    let b = solve(&mdp.with_reward(r2.into())?, alpha)?;
    Ok(policy_context_report(mdp, r, r2, alpha, &a, &b, Instance::of("", None, mdp)))
}

fn policy_context_report(
    mdp: &TabularMdp,
    r: &[f64],
    r2: &[f64],
    alpha: f64,
    a: &SoftSolution,
    b: &SoftSolution,
    instance: Instance,
) -> CheckReport {
    let dist = context_distance(r, r2);
    let sup_r = sup_dist(r, r2);
    let horizon = 1.0 / (1.0 - mdp.discount());
    let q_lhs = sup_dist(&a.q_star, &b.q_star);
    let q_rhs = dist * horizon;
    let pi_lhs = sup_dist(&a.pi_star, &b.pi_star);
    let pi_rhs = dist * horizon / alpha;
    let tol = 1e-8;
    let pass = q_lhs <= q_rhs + tol && pi_lhs <= pi_rhs + tol && sup_r <= dist + 1e-15;
    CheckReport::new("policy_context_bound", instance.alpha(alpha), q_lhs, q_rhs, tol, pass)
        .extra("pi_lhs", pi_lhs)
        .extra("pi_rhs", pi_rhs)
        .extra("context_distance", dist)
        .extra("reward_sup_diff", sup_r)
        .extra("lipschitz_r", 1.0)
}

/// Under reward `r_k`, the previous context's optimal policy loses at most
/// `2 ||r_k - r_{k-1}||_2 / (1-gamma)^2` against the current optimum.
pub fn check_adjacent_value_bound(
    mdp: &TabularMdp,
    r_prev: &[f64],
    r_cur: &[f64],
    alpha: f64,
) -> Result<CheckReport> {
    let prev = solve(&mdp.with_reward(r_prev.into())?, alpha)?;
    let cur = solve(&mdp.with_reward(r_cur.into())?, alpha)?;
    adjacent_value_report(mdp, r_prev, r_cur, alpha, &prev, &cur, Instance::of("", None, mdp))
}

fn adjacent_value_report(
    mdp: &TabularMdp,
    r_prev: &[f64],
    r_cur: &[f64],
    alpha: f64,
    prev: &SoftSolution,
    cur: &SoftSolution,
    instance: Instance,
) -> Result<CheckReport> {
    let under_cur = mdp.with_reward(r_cur.into())?;
    let rho = mdp.init_dist().probs();
    let v_cur = dot(rho, &exact_policy_evaluation(&under_cur, &cur.policy(), alpha)?);
    let v_prev = dot(rho, &exact_policy_evaluation(&under_cur, &prev.policy(), alpha)?);
    let dist = context_distance(r_prev, r_cur);
    let g = 1.0 - mdp.discount();
    Ok(
        CheckReport::upper("adjacent_value_bound", instance.alpha(alpha), v_cur - v_prev, 2.0 * dist / (g * g), 1e-8)
            .extra("context_distance", dist)
            .extra("reward_sup_diff", sup_dist(r_prev, r_cur)),
    )
}

/// With `mu_j` from the exact mixture recursion and `d_j = d^{pi_j}_{mu_j}`:
/// `||d_k / mu_k||_inf <= ||d_k - d_{k-1}||_1 / min_s mu_k(s) + 1/beta`.
///
/// `policies[j]` is the (near-)optimal policy of context `j`, `j = 0..=k`; `rho`
/// is `mdp.init_dist()`. The extras record the ratio obtained with `rho` alone.
pub fn check_mismatch_decomposition(mdp: &TabularMdp, policies: &[SoftmaxPolicy], beta: f64, k: usize) -> Result<CheckReport> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0,1], got {beta}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("the decomposition needs k >= 1".into()));
    }
    if policies.len() < k + 1 {
        return Err(Error::ChainTooShort { len: policies.len(), k: k + 1 });
    }
    let rho = mdp.init_dist();
    let mus = mixture_distributions(mdp, policies, rho, beta, k)?;
    let (mu_k, mu_prev) = (&mus[k], &mus[k - 1]);
    let d_k = visitation_distribution(mdp, &policies[k], mu_k)?;
    let d_prev = visitation_distribution(mdp, &policies[k - 1], mu_prev)?;
    let lhs = mismatch_ratio(&d_k, mu_k)?;
    let l1: f64 = d_k.probs().iter().zip(d_prev.probs()).map(|(a, b)| (a - b).abs()).sum();
    let rhs = l1 / mu_k.min() + 1.0 / beta;
    let d_rho = visitation_distribution(mdp, &policies[k], rho)?;
    let rho_ratio = mismatch_ratio(&d_rho, rho)?;
    Ok(
        CheckReport::upper("mismatch_decomposition", Instance::of("", None, mdp).beta(beta), lhs, rhs, 1e-8)
            .extra("k", k as f64)
            .extra("d_diff_l1", l1)
            .extra("mu_min", mu_k.min())
            .extra("ratio_under_rho", rho_ratio),
    )
}

/// Exact gradient against central differences (`lhs`, bound 1e-6) and, when
/// `n_samples > 0`, the random-horizon estimator's mean against the exact gradient
/// (extras `mc_max_z`, must stay within 3 standard errors). `rho` is `mdp.init_dist()`.
pub fn check_gradient_suite(
    mdp: &TabularMdp,
    alpha: f64,
    policy: &SoftmaxPolicy,
    n_samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let rho = mdp.init_dist();
    let exact = exact_gradient(mdp, policy, alpha, rho)?;
    let fd = finite_difference_gradient(mdp, policy, alpha, 1e-5)?;
    let fd_err = sup_dist(&exact, &fd);
    let mut report = CheckReport::upper(
        "gradient",
        Instance::of("", Some(seed), mdp).alpha(alpha),
        fd_err,
        1e-6,
        0.0,
    );
    let row_sum = exact
        .chunks(mdp.n_actions())
        .map(|row| row.iter().sum::<f64>().abs())
        .fold(0.0, f64::max);
    report = report.extra("row_sum_max", row_sum);
    report.pass &= row_sum <= 1e-10;
    if n_samples > 0 {
        let (mean, se) = monte_carlo_gradient(mdp, policy, alpha, n_samples, seed);
        let z = mean
            .iter()
            .zip(&se)
            .zip(&exact)
            .map(|((m, s), e)| if *s > 0.0 { (m - e).abs() / s } else if (m - e).abs() < 1e-12 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max);
        report = report.extra("mc_samples", n_samples as f64).extra("mc_max_z", z);
        report.pass &= z <= 3.0;
    }
    Ok(report)
}

/// Central differences of `V^pi(rho)` in every coordinate of `theta`.
pub fn finite_difference_gradient(mdp: &TabularMdp, policy: &SoftmaxPolicy, alpha: f64, h: f64) -> Result<Vec<f64>> {
    let (ns, na) = (policy.n_states(), policy.n_actions());
    let rho = mdp.init_dist().probs();
    let value = |theta: Vec<f64>| -> Result<f64> {
        let p = SoftmaxPolicy::new(ns, na, theta)?;
        Ok(dot(rho, &exact_policy_evaluation(mdp, &p, alpha)?))
    };
    (0..ns * na)
        .map(|i| {
            let mut plus = policy.theta().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            Ok((value(plus)? - value(minus)?) / (2.0 * h))
        })
        .collect()
}

/// Per-coordinate mean and standard error of single-draw random-horizon
/// gradient estimates. Chunks are independent streams, summed in chunk order, so
/// the result does not depend on the thread count.
pub fn monte_carlo_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    const CHUNK: usize = 50_000;
    let len = mdp.n_states() * mdp.n_actions();
    let table = policy.table();
    let rho = mdp.init_dist();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, &[0x6d63, c as u64]);
            let mut sum = vec![0.0; len];
            let mut sum_sq = vec![0.0; len];
            let mut g = vec![0.0; len];
            let count = CHUNK.min(n_samples - c * CHUNK);
            for _ in 0..count {
                let smp = alg4_sample(mdp, &table, alpha, &mut rng, |r| rho.sample(r.random::<f64>()));
                let na = mdp.n_actions();
                let row = smp.state * na..(smp.state + 1) * na;
                g[row.clone()].iter_mut().for_each(|x| *x = 0.0);
                accumulate_score(&mut g, &table, smp.state, smp.action, smp.weight);
                for i in row.clone() {
                    sum[i] += g[i];
                    sum_sq[i] += g[i] * g[i];
                }
            }
            (sum, sum_sq)
        })
        .collect();
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    for (s, sq) in &partial {
        for i in 0..len {
            sum[i] += s[i];
            sum_sq[i] += sq[i];
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let se = mean
        .iter()
        .zip(&sum_sq)
        .map(|(m, sq)| (((sq / n - m * m) * n / (n - 1.0)).max(0.0) / n).sqrt())
        .collect();
    (mean, se)
}

/// Identities of a converged solution: `V* = alpha logsumexp(Q*/alpha)` and
/// `pi* = exp((Q* - V*)/alpha)`; `lhs` is the larger deviation.
pub fn check_fixed_point(mdp: &TabularMdp, alpha: f64) -> Result<CheckReport> {
    let star = solve(mdp, alpha)?;
    Ok(fixed_point_report(mdp, alpha, &star, Instance::of("", None, mdp)))
}

fn fixed_point_report(mdp: &TabularMdp, alpha: f64, star: &SoftSolution, instance: Instance) -> CheckReport {
    let na = mdp.n_actions();
    let mut v_err: f64 = 0.0;
    let mut pi_err: f64 = 0.0;
    for s in 0..mdp.n_states() {
        let row = &star.q_star[s * na..(s + 1) * na];
        let scaled: Vec<f64> = row.iter().map(|q| q / alpha).collect();
        let v = alpha * crate::tabular::log_sum_exp(&scaled);
        v_err = v_err.max((v - star.v_star[s]).abs());
        for a in 0..na {
            let p = ((row[a] - star.v_star[s]) / alpha).exp();
            pi_err = pi_err.max((p - star.pi_star[s * na + a]).abs());
        }
    }
    // the solution must also be a fixed point of the soft Bellman operator
    let bellman = soft_bellman(mdp, alpha, &star.q_star).map(|t| sup_dist(&t, &star.q_star)).unwrap_or(f64::NAN);
    let mut report = CheckReport::upper("fixed_point", instance.alpha(alpha), v_err.max(pi_err), 0.0, 1e-10)
        .extra("v_identity_err", v_err)
        .extra("pi_identity_err", pi_err)
        .extra("bellman_residual", bellman)
        .extra("iterations", star.iterations as f64);
    report.pass &= bellman <= VI_TOL;
    report
}

/// A deliberately broken check: the suboptimality identity with the entropy
/// weight on its right-hand side doubled. It must fail; used to exercise failure
/// reporting end to end.
pub fn injected_fault(seed: u64) -> Result<CheckReport> {
    let mut rng = RngStream::new(seed, &[0xfa17]);
    let mdp = random_mdp(&mut rng, 4, 3, 0.9);
    let alpha = 0.1;
    let star = solve(&mdp, alpha)?;
    let policy = random_policy(&mut rng, 4, 3, 2.0);
    let mut r = check_suboptimality_with(&mdp, alpha, &policy, &star, Instance::of("injected-fault", Some(seed), &mdp))?;
    r.name = "injected_fault".into();
    r.rhs *= 2.0;
    r.pass = (r.lhs - r.rhs).abs() <= r.tolerance;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    All,
    Suboptimality,
    Contraction,
    PolicyContext,
    AdjacentValue,
    Mismatch,
    Gradient,
    FixedPoint,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::FixedPoint,
        Suite::Suboptimality,
        Suite::Contraction,
        Suite::PolicyContext,
        Suite::AdjacentValue,
        Suite::Mismatch,
        Suite::Gradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Suboptimality => "suboptimality",
            Suite::Contraction => "contraction",
            Suite::PolicyContext => "policy-context",
            Suite::AdjacentValue => "adjacent-value",
            Suite::Mismatch => "mismatch",
            Suite::Gradient => "gradient",
            Suite::FixedPoint => "fixed-point",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(Suite::All)
            .chain(Suite::ALL)
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

/// Sizes of the generated instance sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub instances: usize,
    pub q_pairs: usize,
    pub gradient_instances: usize,
    /// Monte Carlo draws for the unbiasedness check (0 disables it).
    pub mc_samples: usize,
    pub fourroom: bool,
    /// Smoothing weight of the four-room initial distribution
    /// `(1 - eps) delta_start + eps uniform`.
    pub fourroom_smoothing: f64,
    pub fourroom_alpha: f64,
    pub fourroom_gamma: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            q_pairs: 1000,
            gradient_instances: 20,
            mc_samples: 1_000_000,
            fourroom: true,
            fourroom_smoothing: 0.1,
            fourroom_alpha: 0.01,
            fourroom_gamma: 0.9,
        }
    }
}

const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];
const ALPHAS: [f64; 3] = [0.01, 0.1, 0.5];
const BETAS: [f64; 3] = [0.25, 0.5, 0.75];

/// Deterministic instance `i` of a suite: sizes, discount and temperature cycle
/// through the documented grids.
fn instance_params(rng: &mut RngStream, i: usize) -> (usize, usize, f64, f64) {
    let ns = rng.random_range(2..=6);
    let na = rng.random_range(2..=4);
    (ns, na, GAMMAS[i % 3], ALPHAS[(i / 3) % 3])
}

/// Runs one suite (or all) and returns its reports in a fixed order.
pub fn run_suite(suite: Suite, seed: u64, config: &SuiteConfig) -> Result<Vec<CheckReport>> {
    if suite == Suite::All {
        let mut out = Vec::new();
        for s in Suite::ALL {
            out.extend(run_suite(s, seed, config)?);
        }
        return Ok(out);
    }
    let per_instance = |tag: u64, n: usize, f: &(dyn Fn(usize, &mut RngStream) -> Result<Vec<CheckReport>> + Sync)| {
        let nested: Vec<Vec<CheckReport>> = (0..n)
            .into_par_iter()
            .map(|i| f(i, &mut RngStream::new(seed, &[tag, i as u64])))
            .collect::<Result<_>>()?;
        Ok::<_, Error>(nested.into_iter().flatten().collect::<Vec<_>>())
    };
    let mut reports = match suite {
        Suite::FixedPoint => per_instance(1, config.instances, &|i, rng| {
            let (ns, na, gamma, alpha) = instance_params(rng, i);
            let mdp = random_mdp(rng, ns, na, gamma);
            let star = solve(&mdp, alpha)?;
            let mut r = fixed_point_report(&mdp, alpha, &star, Instance::of(format!("random#{i}"), Some(seed), &mdp));
            // cross-solver: evaluating pi* reproduces V*
            let v = exact_policy_evaluation(&mdp, &star.policy(), alpha)?;
            let cross = sup_dist(&v, &star.v_star);
            r = r.extra("policy_eval_vs_vstar", cross);
            r.pass &= cross <= 10.0 * VI_TOL * (1.0 + star.v_star.iter().fold(0.0f64, |m, x| m.max(x.abs())));
            Ok(vec![r])
        })?,
        Suite::Suboptimality => per_instance(2, config.instances, &|i, rng| {
            let (ns, na, gamma, alpha) = instance_params(rng, i);
            let mdp = random_mdp(rng, ns, na, gamma);
            let star = solve(&mdp, alpha)?;
            let scale = [1.0, 3.0, 10.0][i % 3];
            let inst = |what: &str| Instance::of(format!("random#{i}/{what}"), Some(seed), &mdp);
            Ok(vec![
                check_suboptimality_with(&mdp, alpha, &random_policy(rng, ns, na, scale), &star, inst("random-theta"))?,
                check_suboptimality_with(&mdp, alpha, &SoftmaxPolicy::zeros(ns, na), &star, inst("uniform"))?,
                check_suboptimality_with(&mdp, alpha, &star.policy(), &star, inst("optimal"))?,
            ])
        })?,
        Suite::Contraction => {
            let n_mdps = config.q_pairs.div_ceil(100).max(1);
            per_instance(3, n_mdps, &|i, rng| {
                let (ns, na, gamma, alpha) = instance_params(rng, i);
                let mdp = random_mdp(rng, ns, na, gamma);
                let pairs = (config.q_pairs - i * 100).min(100);
                let mut out = Vec::with_capacity(pairs + 2);
                let draw = |rng: &mut RngStream| (0..ns * na).map(|_| rng.random_range(-10.0..=10.0)).collect::<Vec<f64>>();
                for j in 0..pairs {
                    let (q1, q2) = (draw(rng), draw(rng));
                    let mut r = check_contraction(&mdp, alpha, &q1, &q2)?;
                    r.instance.label = format!("random#{i}/pair{j}");
                    r.instance.seed = Some(seed);
                    out.push(r);
                }
                if i == 0 {
                    let q = draw(rng);
                    let mut same = check_contraction(&mdp, alpha, &q, &q)?;
                    same.instance.label = "identical".into();
                    let c = 0.37;
                    let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
                    let mut shift = check_contraction(&mdp, alpha, &q, &shifted)?;
                    shift.instance.label = "constant-shift".into();
                    // a constant shift passes through the soft maximum unchanged
                    let exact = (shift.lhs - gamma * c).abs();
                    shift = shift.extra("shift_identity_err", exact);
                    shift.pass &= exact <= 1e-12;
                    same.pass &= same.lhs == 0.0;
                    out.push(same);
                    out.push(shift);
                }
                Ok(out)
            })?
        }
        Suite::PolicyContext | Suite::AdjacentValue => {
            let adjacent = suite == Suite::AdjacentValue;
            let mut reports = per_instance(if adjacent { 5 } else { 4 }, config.instances, &|i, rng| {
                let (_, na, gamma, alpha) = instance_params(rng, i);
                let ns = 5;
                let mdp = random_mdp(rng, ns, na, gamma);
                let r: Vec<f64> = mdp.reward_table().to_vec();
                let r2: Vec<f64> = match i {
                    0 => r.clone(),
                    1 if !adjacent => r.iter().map(|x| (x + 0.01f64).min(1.0)).collect(),
                    _ => {
                        let eps = [0.01, 0.05, 0.2, 1.0][i % 4];
                        r.iter()
                            .map(|x| (x + eps * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0))
                            .collect()
                    }
                };
                let a = solve(&mdp.with_reward(r.clone().into())?, alpha)?;
                let b = solve(&mdp.with_reward(r2.clone().into())?, alpha)?;
                let inst = Instance::of(format!("random#{i}"), Some(seed), &mdp);
                Ok(vec![if adjacent {
                    adjacent_value_report(&mdp, &r, &r2, alpha, &a, &b, inst)?
                } else {
                    policy_context_report(&mdp, &r, &r2, alpha, &a, &b, inst)
                }])
            })?;
            if config.fourroom {
                reports.extend(fourroom_pair_checks(adjacent, config)?);
            }
            reports
        }
        Suite::Mismatch => {
            let mut reports = per_instance(6, config.instances, &|i, rng| {
                let beta = BETAS[i % 3];
                let alpha = ALPHAS[(i / 3) % 3];
                let k = 1 + (i / 9) % 3;
                let mdp = random_chain(rng, 6, 3, 2, 0.9);
                let policies = (0..=k)
                    .map(|j| {
                        let shared = i % 10 == 0 && j > 0;
                        let reward = if shared { mdp.reward_table().clone() } else { random_rewards(rng, 18) };
                        solve(&mdp.with_reward(reward)?, alpha).map(|s| s.policy())
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut r = check_mismatch_decomposition(&mdp, &policies, beta, k)?;
                r.instance.label = format!("chain#{i}");
                r.instance.seed = Some(seed);
                r.instance.alpha = Some(alpha);
                Ok(vec![r])
            })?;
            if config.fourroom {
                reports.extend(fourroom_mismatch_checks(config)?);
            }
            reports
        }
        Suite::Gradient => {
            let mut reports = per_instance(7, config.gradient_instances, &|i, rng| {
                let ns = rng.random_range(2..=5);
                let na = rng.random_range(2..=4);
                let gamma = [0.5, 0.9, 0.0][i % 3];
                let alpha = [0.0, 0.05, 0.5][(i / 3) % 3];
                let mdp = random_mdp(rng, ns, na, gamma);
                let policy = random_policy(rng, ns, na, 5.0);
                let mut r = check_gradient_suite(&mdp, alpha, &policy, 0, seed)?;
                r.instance.label = format!("random#{i}");
                Ok(vec![r])
            })?;
            if config.mc_samples > 0 {
                let mut rng = RngStream::new(seed, &[8]);
                let mdp = random_mdp(&mut rng, 4, 3, 0.9);
                let policy = random_policy(&mut rng, 4, 3, 1.0);
                let mut r = check_gradient_suite(&mdp, 0.1, &policy, config.mc_samples, seed)?;
                r.instance.label = "unbiased/random-theta".into();
                reports.push(r);
                let star = solve(&mdp, 0.1)?;
                let mut r = check_gradient_suite(&mdp, 0.1, &star.policy(), config.mc_samples / 4, seed ^ 1)?;
                r.instance.label = "unbiased/optimal".into();
                r = r.extra("exact_grad_max", exact_gradient(&mdp, &star.policy(), 0.1, mdp.init_dist())?.iter().fold(0.0f64, |m, g| m.max(g.abs())));
                reports.push(r);
            }
            reports
        }
        Suite::All => unreachable!(),
    };
    for r in &mut reports {
        if r.instance.seed.is_none() {
            r.instance.seed = Some(seed);
        }
    }
    Ok(reports)
}

/// Four-room curriculum as contexts over a shared MDP with the smoothed start
/// distribution; returns the MDP and the curriculum reward tables.
pub fn fourroom_contexts(
    layout: &GridLayout,
    variant: RewardVariant,
    gamma: f64,
    smoothing: f64,
) -> Result<(TabularMdp, Vec<Arc<[f64]>>)> {
    let dynamics = Arc::new(build_dynamics(layout));
    let n = layout.n_states();
    let start = StateDistribution::point_mass(n, layout.state(layout.start()))?;
    let rho = start.mix(&StateDistribution::uniform(n), 1.0 - smoothing)?;
    let rewards: Vec<Arc<[f64]>> = curriculum_goals(layout, variant)
        .iter()
        .map(|ctx| reward_table(layout, ctx))
        .collect();
    let mdp = TabularMdp::new(dynamics, rewards[0].clone(), gamma, rho)?;
    Ok((mdp, rewards))
}

fn fourroom_solutions(config: &SuiteConfig, variant: RewardVariant, count: usize) -> Result<(TabularMdp, Vec<Arc<[f64]>>, Vec<SoftSolution>)> {
    let (mdp, rewards) = fourroom_contexts(&default_layout(), variant, config.fourroom_gamma, config.fourroom_smoothing)?;
    let solutions = rewards[..count]
        .par_iter()
        .map(|r| solve(&mdp.with_reward(r.clone())?, config.fourroom_alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok((mdp, rewards, solutions))
}

fn fourroom_pair_checks(adjacent: bool, config: &SuiteConfig) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for variant in [RewardVariant::Easy, RewardVariant::Hard] {
        let n = default_layout().curriculum().len();
        let (mdp, rewards, sols) = fourroom_solutions(config, variant, n)?;
        for k in 1..n {
            let inst = Instance::of(format!("fourroom/{variant:?}/pair{}-{k}", k - 1).to_lowercase(), None, &mdp);
            let alpha = config.fourroom_alpha;
            let (r_prev, r_cur) = (&rewards[k - 1][..], &rewards[k][..]);
            let mut rep = if adjacent {
                adjacent_value_report(&mdp, r_prev, r_cur, alpha, &sols[k - 1], &sols[k], inst)?
            } else {
                policy_context_report(&mdp, r_prev, r_cur, alpha, &sols[k - 1], &sols[k], inst)
            };
            // one goal step moves each reward by at most 1 - decay inside the
            // threshold, or by decay^threshold where it drops to zero
            let sup = sup_dist(r_prev, r_cur);
            let bound = (1.0 - variant.decay()).max(variant.decay().powi(variant.threshold() as i32));
            rep = rep.extra("reward_sup_bound", bound);
            rep.pass &= sup <= bound + 1e-15;
            out.push(rep);
        }
    }
    Ok(out)
}

fn fourroom_mismatch_checks(config: &SuiteConfig) -> Result<Vec<CheckReport>> {
    let (mdp, rewards, sols) = fourroom_solutions(config, RewardVariant::Hard, 3)?;
    let policies: Vec<SoftmaxPolicy> = sols.iter().map(SoftSolution::policy).collect();
    let mut out = Vec::new();
    for k in 1..3 {
        let mut r = check_mismatch_decomposition(&mdp, &policies, 0.75, k)?;
        r.instance.label = format!("fourroom/hard/prefix{k}");
        r.instance.alpha = Some(config.fourroom_alpha);
        if k == 1 {
            // initialization condition of the base case: reported, not asserted
            let d0 = visitation_distribution(&mdp, &policies[0], mdp.init_dist())?;
            let l1 = d0.probs().iter().zip(mdp.init_dist().probs()).map(|(a, b)| (a - b).abs()).sum();
            r = r
                .extra("init_rho_vs_d0_l1", l1)
                .extra("init_context_distance", context_distance(&rewards[0], &rewards[1]));
        }
        out.push(r);
    }
    Ok(out)
}

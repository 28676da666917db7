//! Exact (non-sampled) solvers for entropy-regularized tabular MDPs.
//!
//! Everything here is deterministic and dense: soft value iteration, linear-solve
//! policy evaluation, discounted state visitation, the closed-form softmax policy
//! gradient and the density mismatch ratio. The stochastic estimators in
//! [`crate::sampling`] and [`crate::spg`] are tested against these.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{log_sum_exp, SoftmaxPolicy, StateDistribution, TabularMdp};

/// Fixed point of the soft Bellman optimality operator.
///
/// Tables are `S x A` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSolution {
    pub n_states: usize,
    pub n_actions: usize,
    pub alpha: f64,
    pub q_star: Vec<f64>,
    pub v_star: Vec<f64>,
    pub pi_star: Vec<f64>,
    /// Final sup-norm change `||Q_{t+1} - Q_t||_inf`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct SolutionDocument {
    q_star: Vec<Vec<f64>>,
    v_star: Vec<f64>,
    pi_star: Vec<Vec<f64>>,
    residual: f64,
    iterations: usize,
}

impl SoftSolution {
    /// Softmax policy with `theta = Q*/alpha`, which induces exactly `pi_star`.
    pub fn policy(&self) -> SoftmaxPolicy {
        let theta = self.q_star.iter().map(|q| q / self.alpha).collect();
        SoftmaxPolicy::new(self.n_states, self.n_actions, theta)
            .expect("finite Q yields finite parameters")
    }

    /// `V*(mu) = sum_s mu(s) V*(s)`.
    pub fn value(&self, mu: &StateDistribution) -> f64 {
        dot(mu.probs(), &self.v_star)
    }

    pub fn to_json(&self) -> Result<String> {
        let na = self.n_actions;
        let doc = SolutionDocument {
            q_star: self.q_star.chunks(na).map(<[f64]>::to_vec).collect(),
            v_star: self.v_star.clone(),
            pi_star: self.pi_star.chunks(na).map(<[f64]>::to_vec).collect(),
            residual: self.residual,
            iterations: self.iterations,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// `alpha * log sum_a exp(q(s,a)/alpha)` for every state.
pub fn soft_values(q: &[f64], n_actions: usize, alpha: f64) -> Vec<f64> {
    let mut scaled = vec![0.0; n_actions];
    q.chunks(n_actions)
        .map(|row| {
            for (x, &qa) in scaled.iter_mut().zip(row) {
                *x = qa / alpha;
            }
            alpha * log_sum_exp(&scaled)
        })
        .collect()
}

/// One application of the soft Bellman optimality operator:
/// `(TQ)(s,a) = r(s,a) + gamma * sum_s' P(s'|s,a) * alpha * log sum_a' exp(Q(s',a')/alpha)`.
pub fn soft_bellman(mdp: &TabularMdp, alpha: f64, q: &[f64]) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if q.len() != ns * na {
        return Err(Error::ShapeMismatch(format!("Q has {} entries, expected {}", q.len(), ns * na)));
    }
    let v = soft_values(q, na, alpha);
    Ok(backup(mdp, &v))
}

/// `Q(s,a) = r(s,a) + gamma * sum_s' P(s'|s,a) V(s')`.
pub fn backup(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let dyns = mdp.dynamics();
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let (next, probs) = dyns.successors(s, a);
            let ev: f64 = next.iter().zip(probs).map(|(&s2, &p)| p * v[s2]).sum();
            out[s * na + a] = mdp.reward(s, a) + gamma * ev;
        }
    }
    out
}

/// Soft value iteration from `Q = 0`.
///
/// Stops once `||Q_{t+1} - Q_t||_inf <= tol * (1 - gamma) / gamma`, which by the
/// contraction bound certifies `||Q - Q*||_inf <= tol`.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SoftSolution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let threshold = tol * (1.0 - gamma) / gamma;

    let mut q = vec![0.0; ns * na];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = soft_bellman(mdp, alpha, &q)?;
        residual = sup_dist(&next, &q);
        q = next;
        if !residual.is_finite() {
            return Err(Error::NonFinite("soft value iteration"));
        }
        if residual <= threshold {
            return Ok(finish_solution(mdp, alpha, q, residual, it));
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

fn finish_solution(
    mdp: &TabularMdp,
    alpha: f64,
    q: Vec<f64>,
    residual: f64,
    iterations: usize,
) -> SoftSolution {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let v = soft_values(&q, na, alpha);
    let mut pi = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            pi[s * na + a] = ((q[s * na + a] - v[s]) / alpha).exp();
        }
    }
    SoftSolution {
        n_states: ns,
        n_actions: na,
        alpha,
        q_star: q,
        v_star: v,
        pi_star: pi,
        residual,
        iterations,
    }
}

/// Entropy-regularized value `V^pi` by solving `(I - gamma P_pi) V = r_pi`.
pub fn exact_policy_evaluation(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_policy_shape(mdp, policy)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {alpha}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.discount();
    let p_pi = policy_transition_matrix(mdp, policy);
    let mut rhs = DVector::zeros(ns);
    for s in 0..ns {
        let probs = policy.probs(s);
        let logs = policy.log_probs(s);
        rhs[s] = (0..na)
            .map(|a| probs[a] * (mdp.reward(s, a) - alpha * logs[a]))
            .sum();
    }
    let system = DMatrix::identity(ns, ns) - p_pi * gamma;
    let v = solve(system, rhs)?;
    Ok(v.iter().copied().collect())
}

/// Entropy-regularized `Q^pi(s,a) = r(s,a) + gamma * E[V^pi(s')]`; the entropy of the
/// first action is excluded, matching the soft Q-function convention.
pub fn exact_q_values(mdp: &TabularMdp, policy: &SoftmaxPolicy, alpha: f64) -> Result<Vec<f64>> {
    let v = exact_policy_evaluation(mdp, policy, alpha)?;
    Ok(backup(mdp, &v))
}

/// Discounted state visitation `d = (1 - gamma) mu + gamma P_pi^T d`.
pub fn visitation_distribution(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    mu: &StateDistribution,
) -> Result<StateDistribution> {
    check_policy_shape(mdp, policy)?;
    let ns = mdp.n_states();
    if mu.len() != ns {
        return Err(Error::ShapeMismatch(format!(
            "mu has length {}, expected {ns}",
            mu.len()
        )));
    }
    let gamma = mdp.discount();
    let p_pi = policy_transition_matrix(mdp, policy);
    let system = DMatrix::identity(ns, ns) - p_pi.transpose() * gamma;
    let rhs = DVector::from_iterator(ns, mu.probs().iter().map(|m| (1.0 - gamma) * m));
    let d = solve(system, rhs)?;
    StateDistribution::with_tolerance(d.iter().copied().collect(), 1e-10)
}

/// Closed-form `dV^pi(mu)/dtheta(s,a) = d_mu(s) pi(a|s) A(s,a) / (1 - gamma)` with
/// `A(s,a) = Q(s,a) - alpha log pi(a|s) - V(s)`.
pub fn exact_gradient(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    alpha: f64,
    mu: &StateDistribution,
) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let v = exact_policy_evaluation(mdp, policy, alpha)?;
    let q = backup(mdp, &v);
    let d = visitation_distribution(mdp, policy, mu)?;
    let scale = 1.0 / (1.0 - mdp.discount());
    let mut grad = vec![0.0; ns * na];
    for s in 0..ns {
        let probs = policy.probs(s);
        let logs = policy.log_probs(s);
        for a in 0..na {
            let adv = q[s * na + a] - alpha * logs[a] - v[s];
            grad[s * na + a] = scale * d.probs()[s] * probs[a] * adv;
        }
    }
    Ok(grad)
}

/// `max_{s : d(s) > 0} d(s) / mu(s)`.
pub fn mismatch_ratio(d: &StateDistribution, mu: &StateDistribution) -> Result<f64> {
    if d.len() != mu.len() {
        return Err(Error::ShapeMismatch("distributions differ in length".into()));
    }
    let mut worst: f64 = 0.0;
    for (s, (&ds, &ms)) in d.probs().iter().zip(mu.probs()).enumerate() {
        if ds > 0.0 {
            if ms <= 0.0 {
                return Err(Error::InfiniteRatio { state: s });
            }
            worst = worst.max(ds / ms);
        }
    }
    Ok(worst)
}

/// `KL(pi(.|s) || other(.|s))` per state, computed in log space.
pub fn policy_kl(pi: &SoftmaxPolicy, other: &SoftmaxPolicy) -> Vec<f64> {
    (0..pi.n_states())
        .map(|s| {
            let probs = pi.probs(s);
            let lp = pi.log_probs(s);
            let lq = other.log_probs(s);
            probs
                .iter()
                .zip(lp.iter().zip(&lq))
                .map(|(p, (a, b))| p * (a - b))
                .sum()
        })
        .collect()
}

/// Exact ROLLIN initial distributions `mu_0 = rho`,
/// `mu_j = beta * d^{pi_{j-1}}_{mu_{j-1}} + (1 - beta) * rho` for `j = 1..=k`.
///
/// `policies[j]` is the policy rolled in from context `j`; returns `k + 1` entries.
pub fn mixture_distributions(
    mdp: &TabularMdp,
    policies: &[SoftmaxPolicy],
    rho: &StateDistribution,
    beta: f64,
    k: usize,
) -> Result<Vec<StateDistribution>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0,1], got {beta}")));
    }
    if policies.len() < k {
        return Err(Error::ChainTooShort {
            len: policies.len(),
            k,
        });
    }
    let mut out = vec![rho.clone()];
    for policy in policies.iter().take(k) {
        let prev = out.last().expect("nonempty");
        let d = visitation_distribution(mdp, policy, prev)?;
        out.push(d.mix(rho, beta)?);
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_policy_shape(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::ShapeMismatch(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

fn policy_transition_matrix(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let dyns = mdp.dynamics();
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        let probs = policy.probs(s);
        for (a, &pa) in probs.iter().enumerate().take(na) {
            let (next, tp) = dyns.successors(s, a);
            for (&s2, &t) in next.iter().zip(tp) {
                p[(s, s2)] += pa * t;
            }
        }
    }
    p
}

fn solve(system: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    if system.iter().chain(rhs.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("linear system"));
    }
    let x = system.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x)
}

//! Stochastic softmax policy-gradient machinery.
//!
//! Two estimators live here: the fixed-horizon REINFORCE estimator used by the
//! gridworld experiments ([`reinforce_gradient`]) and the random-horizon estimator
//! ([`alg4_gradient`]) whose expectation is the exact gradient. All updates use
//! ascent on the entropy-regularized return.

mod train;

pub use train::{run_trainer, train_fourroom, FourRoomTrainer, Method, TrainConfig, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{dot, exact_policy_evaluation};
use crate::sampling::{est_ent_q, sam_sa_from, RngStream};
use crate::tabular::{PolicyTable, SoftmaxPolicy, TabularMdp, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    Ascent,
    Descent,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        }
    }
}

/// A batch gradient estimate plus batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    /// `S x A` row-major.
    pub grad: Vec<f64>,
    pub batch_size: usize,
    pub mean_return: f64,
    pub mean_entreg_return: f64,
    pub successes: usize,
}

/// Discounted entropy-regularized returns-to-go
/// `R_t = r_t - alpha log pi(a_t|s_t) + gamma R_{t+1}`, one backward pass.
pub fn returns_to_go(traj: &Trajectory, policy: &PolicyTable, alpha: f64, gamma: f64) -> Vec<f64> {
    let n = traj.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let (s, a) = (traj.states[t], traj.actions[t]);
        acc = traj.rewards[t] - alpha * policy.log_prob(s, a) + gamma * acc;
        out[t] = acc;
    }
    out
}

/// REINFORCE estimate
/// `(1/(B T)) sum_b sum_t grad log pi(a_t|s_t) R_t` over equal-length trajectories.
///
/// The softmax score of `(s, a)` is `e_a - pi(.|s)` on row `s`, so the estimate is
/// accumulated as per-action return sums minus `pi` times per-state return sums.
pub fn reinforce_gradient(
    batch: &[Trajectory],
    policy: &PolicyTable,
    alpha: f64,
    gamma: f64,
) -> Result<GradEstimate> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory batch".into()))?;
    let horizon = first.len();
    if horizon == 0 {
        return Err(Error::InvalidArgument("trajectories must have at least one step".into()));
    }
    if let Some((index, t)) = batch.iter().enumerate().find(|(_, t)| t.len() != horizon) {
        return Err(Error::RaggedBatch {
            index,
            len: t.len(),
            expected: horizon,
        });
    }
    let na = policy.n_actions();
    let ns = policy.prob_table().len() / na;
    let mut per_action = vec![0.0; ns * na];
    let mut per_state = vec![0.0; ns];
    let (mut total_return, mut total_entreg) = (0.0, 0.0);
    for traj in batch {
        let ret = returns_to_go(traj, policy, alpha, gamma);
        for (t, &r) in ret.iter().enumerate() {
            let (s, a) = (traj.states[t], traj.actions[t]);
            per_action[s * na + a] += r;
            per_state[s] += r;
        }
        total_return += traj.rewards.iter().sum::<f64>();
        total_entreg += ret[0];
    }
    let scale = 1.0 / (batch.len() * horizon) as f64;
    let mut grad = vec![0.0; ns * na];
    for s in 0..ns {
        if per_state[s] == 0.0 && per_action[s * na..(s + 1) * na].iter().all(|&x| x == 0.0) {
            continue;
        }
        let probs = policy.probs(s);
        for a in 0..na {
            grad[s * na + a] = scale * (per_action[s * na + a] - probs[a] * per_state[s]);
        }
    }
    let b = batch.len() as f64;
    Ok(GradEstimate {
        grad,
        batch_size: batch.len(),
        mean_return: total_return / b,
        mean_entreg_return: total_entreg / b,
        successes: 0,
    })
}

/// One draw of the random-horizon estimator: the sampled pair and the scalar
/// weight `(Q_hat - alpha log pi(a|s)) / (1 - gamma)` multiplying the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alg4Sample {
    pub state: usize,
    pub action: usize,
    pub q_hat: f64,
    pub weight: f64,
}

pub fn alg4_sample<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    alpha: f64,
    rng: &mut R,
    init: impl FnMut(&mut R) -> usize,
) -> Alg4Sample {
    let (s, a) = sam_sa_from(mdp, policy, rng, init);
    let q_hat = est_ent_q(mdp, policy, alpha, s, a, rng);
    Alg4Sample {
        state: s,
        action: a,
        q_hat,
        weight: (q_hat - alpha * policy.log_prob(s, a)) / (1.0 - mdp.discount()),
    }
}

/// Random-horizon estimate of `dV^pi(rho)/dtheta`, unbiased for [`crate::exact::exact_gradient`].
pub fn alg4_gradient<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
    alpha: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    let rho = mdp.init_dist().clone();
    alg4_gradient_from(mdp, &policy.table(), alpha, batch_size, rng, |r| {
        rho.sample(r.random::<f64>())
    })
}

/// [`alg4_gradient`] with initial states drawn by `init` instead of `rho`.
pub fn alg4_gradient_from<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    alpha: f64,
    batch_size: usize,
    rng: &mut R,
    mut init: impl FnMut(&mut R) -> usize,
) -> Result<GradEstimate> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {alpha}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut grad = vec![0.0; ns * na];
    let (mut total_q, mut total_r) = (0.0, 0.0);
    for _ in 0..batch_size {
        let sample = alg4_sample(mdp, policy, alpha, rng, &mut init);
        accumulate_score(&mut grad, policy, sample.state, sample.action, sample.weight);
        total_q += sample.q_hat;
        total_r += mdp.reward(sample.state, sample.action);
    }
    let b = batch_size as f64;
    grad.iter_mut().for_each(|g| *g /= b);
    Ok(GradEstimate {
        grad,
        batch_size,
        mean_return: total_r / b,
        mean_entreg_return: total_q / b,
        successes: 0,
    })
}

/// `grad[s, .] += weight * (e_a - pi(.|s))`.
#[inline]
pub fn accumulate_score(grad: &mut [f64], policy: &PolicyTable, s: usize, a: usize, weight: f64) {
    let na = policy.n_actions();
    let probs = policy.probs(s);
    let row = &mut grad[s * na..(s + 1) * na];
    for (g, p) in row.iter_mut().zip(probs) {
        *g -= weight * p;
    }
    row[a] += weight;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a flat parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

/// Bias-corrected Adam update of `theta` in place.
pub fn adam_step(state: &mut AdamState, theta: &mut [f64], grad: &[f64], direction: Direction) -> Result<()> {
    if theta.len() != grad.len() || grad.len() != state.first_moment.len() {
        return Err(Error::ShapeMismatch(format!(
            "theta {}, grad {}, moments {}",
            theta.len(),
            grad.len(),
            state.first_moment.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    let sign = direction.sign();
    for ((th, g), (m, v)) in theta
        .iter_mut()
        .zip(grad)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let (m_hat, v_hat) = (*m / c1, *v / c2);
        *th += sign * lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Plain step `theta += eta * grad` (ascent).
pub fn sgd_step(theta: &mut [f64], grad: &[f64], eta: f64, direction: Direction) -> Result<()> {
    if theta.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!("theta {}, grad {}", theta.len(), grad.len())));
    }
    let sign = direction.sign();
    for (th, g) in theta.iter_mut().zip(grad) {
        *th += sign * eta * g;
    }
    Ok(())
}

/// Two-phase schedule: steps `t <= t1` use batch `b1` and step size `eta`, later
/// steps use batch `b2` and step size `1 / (t - t1 + t0)`. Steps are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub t1: usize,
    pub b1: usize,
    pub b2: usize,
    pub eta: f64,
    pub t0: usize,
    pub total_steps: usize,
    pub log_interval: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t1: 0,
            b1: 64,
            b2: 64,
            eta: 0.1,
            t0: 100,
            total_steps: 2000,
            log_interval: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b1 == 0 || self.b2 == 0 || self.t0 == 0 || self.log_interval == 0 {
            return Err(Error::InvalidArgument(
                "schedule batch sizes, t0 and log interval must be positive".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if self.t1 > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "t1 = {} exceeds total_steps = {}",
                self.t1, self.total_steps
            )));
        }
        Ok(())
    }

    /// `(batch, step size)` at 1-based step `t`.
    pub fn at(&self, t: usize) -> (usize, f64) {
        if t <= self.t1 {
            (self.b1, self.eta)
        } else {
            (self.b2, 1.0 / (t - self.t1 + self.t0) as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueLogRow {
    pub step: usize,
    pub batch: usize,
    pub eta: f64,
    pub exact_value: f64,
}

#[derive(Debug, Clone)]
pub struct TwoPhaseOutcome {
    pub policy: SoftmaxPolicy,
    pub log: Vec<ValueLogRow>,
}

/// Two-phase stochastic policy gradient on one MDP. Step `t` draws from
/// `RngStream::new(seed, &[t])`; the exact value `V^pi(rho)` is logged every
/// `log_interval` steps.
pub fn two_phase_run(
    mdp: &TabularMdp,
    alpha: f64,
    schedule: &ScheduleConfig,
    theta0: &SoftmaxPolicy,
    seed: u64,
) -> Result<TwoPhaseOutcome> {
    schedule.validate()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut policy = theta0.clone();
    let mut log = Vec::with_capacity(schedule.total_steps / schedule.log_interval);
    for t in 1..=schedule.total_steps {
        let (batch, eta) = schedule.at(t);
        let mut rng = RngStream::new(seed, &[t as u64]);
        let estimate = alg4_gradient(mdp, &policy, alpha, batch, &mut rng)?;
        let mut theta = policy.into_theta();
        sgd_step(&mut theta, &estimate.grad, eta, Direction::Ascent)?;
        policy = SoftmaxPolicy::new(ns, na, theta)?;
        if t % schedule.log_interval == 0 {
            let v = exact_policy_evaluation(mdp, &policy, alpha)?;
            log.push(ValueLogRow {
                step: t,
                batch,
                eta,
                exact_value: dot(mdp.init_dist().probs(), &v),
            });
        }
    }
    Ok(TwoPhaseOutcome { policy, log })
}

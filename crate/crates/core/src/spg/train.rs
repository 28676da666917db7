//! Gridworld training loop: batched fixed-horizon rollouts, REINFORCE, Adam, and
//! the success-rate curriculum switch.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, reinforce_gradient, AdamConfig, AdamState, Direction};
use crate::error::{Error, Result};
use crate::exact::exact_policy_evaluation;
use crate::fourroom::{FourRoomEnv, RewardVariant, N_ACTIONS, REWARD_ACTION};
use crate::metrics::MetricsRow;
use crate::rollin::{draw_initial, rollin_driver, ContextTrainer, DriverConfig, StepContext, StepOutcome, SwitchRule};
use crate::sampling::{rollout, MixtureMode, MixtureSpec, RngStream};
use crate::tabular::{SoftmaxPolicy, StateDistribution, TabularMdp, Trajectory};

/// Stream label separating training rollouts from other consumers of a seed.
const TRAIN_STREAM: u64 = 0x7472_6169_6e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Curriculum switching only; every episode starts at the start cell.
    Baseline,
    /// Curriculum switching plus mixture roll-in initial states.
    #[default]
    Rollin,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "rollin" => Ok(Self::Rollin),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub reward: RewardVariant,
    pub method: Method,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub batch: usize,
    pub horizon: usize,
    pub steps: usize,
    pub lr: f64,
    pub switch_threshold: f64,
    pub log_interval: usize,
    pub mixture: MixtureMode,
    /// Log `V^pi(rho)` of the current context (one dense solve per logged row).
    pub exact_value: bool,
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            reward: RewardVariant::Hard,
            method: Method::Rollin,
            alpha: 0.001,
            beta: 0.75,
            gamma: 0.99,
            batch: 2000,
            horizon: 50,
            steps: 50_000,
            lr: 0.001,
            switch_threshold: 0.5,
            log_interval: 100,
            mixture: MixtureMode::Recursive,
            exact_value: true,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0,1], got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0,1), got {}", self.gamma));
        }
        if self.batch == 0 || self.horizon == 0 || self.log_interval == 0 {
            return bad("batch, horizon and log_interval must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.switch_threshold) {
            return bad(format!("switch threshold must lie in [0,1], got {}", self.switch_threshold));
        }
        Ok(())
    }

    /// Mixture weight actually used: the baseline never rolls in.
    pub fn effective_beta(&self) -> f64 {
        match self.method {
            Method::Baseline => 0.0,
            Method::Rollin => self.beta,
        }
    }
}

/// Per-step gridworld trainer driven by [`rollin_driver`].
pub struct FourRoomTrainer<'a> {
    env: &'a FourRoomEnv,
    config: &'a TrainConfig,
    seed: u64,
    adam: AdamState,
    rho: StateDistribution,
    initial_states: Option<Vec<usize>>,
}

impl<'a> FourRoomTrainer<'a> {
    pub fn new(env: &'a FourRoomEnv, config: &'a TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n_states = env.layout().n_states();
        Ok(Self {
            env,
            config,
            seed,
            adam: AdamState::new(
                n_states * N_ACTIONS,
                AdamConfig {
                    lr: config.lr,
                    ..AdamConfig::default()
                },
            ),
            rho: StateDistribution::point_mass(n_states, env.start_state())?,
            initial_states: None,
        })
    }

    /// Keep every sampled initial state (for distribution checks).
    pub fn record_initial_states(mut self) -> Self {
        self.initial_states = Some(Vec::new());
        self
    }

    pub fn initial_states(&self) -> Option<&[usize]> {
        self.initial_states.as_deref()
    }

    /// Samples the batch for `ctx` under `policy`: trajectories and success flags.
    pub fn sample_batch(&self, ctx: &StepContext<'_>, policy: &SoftmaxPolicy) -> Vec<(Trajectory, bool)> {
        let k = ctx.state.k();
        let table = policy.table();
        let reward = self.env.reward_table(k);
        let goal = self.env.goal_state(k);
        let spec = MixtureSpec {
            dynamics: self.env.dynamics(),
            rho: &self.rho,
            beta: ctx.beta,
            gamma: self.config.gamma,
            mode: self.config.mixture,
        };
        let start = self.env.start_state();
        (0..self.config.batch)
            .into_par_iter()
            .map(|b| {
                let mut rng = RngStream::new(self.seed, &[TRAIN_STREAM, ctx.step as u64, b as u64]);
                let s0 = if k == 0 || ctx.beta == 0.0 {
                    start
                } else {
                    draw_initial(ctx.state, &spec, &mut rng)
                };
                let traj = rollout(
                    self.env.dynamics(),
                    |s, a| reward[s * N_ACTIONS + a],
                    &table,
                    s0,
                    self.config.horizon,
                    &mut rng,
                );
                let success = traj
                    .actions
                    .iter()
                    .zip(&traj.states)
                    .any(|(&a, &s)| s == goal && a == REWARD_ACTION);
                (traj, success)
            })
            .collect()
    }
}

impl ContextTrainer for FourRoomTrainer<'_> {
    fn step(&mut self, ctx: &StepContext<'_>, policy: &SoftmaxPolicy) -> Result<(SoftmaxPolicy, StepOutcome)> {
        let sampled = self.sample_batch(ctx, policy);
        let successes = sampled.iter().filter(|(_, ok)| *ok).count();
        let batch: Vec<Trajectory> = sampled.into_iter().map(|(t, _)| t).collect();
        if let Some(log) = self.initial_states.as_mut() {
            log.extend(batch.iter().map(|t| t.states[0]));
        }
        let table = policy.table();
        let estimate = reinforce_gradient(&batch, &table, self.config.alpha, self.config.gamma)?;
        let mut theta = policy.theta().to_vec();
        adam_step(&mut self.adam, &mut theta, &estimate.grad, Direction::Ascent)?;
        let next = SoftmaxPolicy::new(policy.n_states(), policy.n_actions(), theta)?;
        let exact_value = if ctx.log_this_step && self.config.exact_value {
            let mdp = TabularMdp::new(
                self.env.dynamics().clone(),
                self.env.reward_table(ctx.state.k()).clone(),
                self.config.gamma,
                self.rho.clone(),
            )?;
            Some(exact_policy_evaluation(&mdp, &next, self.config.alpha)?[self.env.start_state()])
        } else {
            None
        };
        Ok((
            next,
            StepOutcome {
                success_rate: successes as f64 / batch.len() as f64,
                mean_return: estimate.mean_return,
                mean_entreg_return: estimate.mean_entreg_return,
                exact_value,
                value_gap: None,
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub final_kappa: f64,
    pub final_context: usize,
    pub switches: Vec<(usize, usize)>,
    pub policy: SoftmaxPolicy,
    pub chain_intact: bool,
}

/// Trains on the environment's curriculum from `theta = 0`; one metrics row per
/// log interval.
pub fn train_fourroom(env: &FourRoomEnv, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let mut trainer = FourRoomTrainer::new(env, config, seed)?;
    run_trainer(env, config, &mut trainer)
}

/// [`train_fourroom`] with a caller-built trainer.
pub fn run_trainer(env: &FourRoomEnv, config: &TrainConfig, trainer: &mut FourRoomTrainer<'_>) -> Result<TrainOutcome> {
    let driver = DriverConfig {
        total_steps: config.steps,
        log_interval: config.log_interval,
        beta: config.effective_beta(),
        switch_rule: SwitchRule::SuccessRate {
            threshold: config.switch_threshold,
        },
        stop_at_final: false,
        record_wall_time: config.record_wall_time,
    };
    let theta0 = SoftmaxPolicy::zeros(env.layout().n_states(), N_ACTIONS);
    let out = rollin_driver(env.n_contexts() - 1, &driver, trainer, theta0)?;
    Ok(TrainOutcome {
        final_kappa: out.state.kappa(),
        final_context: out.state.k(),
        chain_intact: out.state.chain().is_intact(),
        switches: out.switches,
        rows: out.rows,
        policy: out.policy,
    })
}

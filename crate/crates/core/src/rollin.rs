//! Curriculum driver: trains one parameter table through an ordered list of
//! contexts, switching when the switch rule fires and snapshotting the policy of
//! every completed context for the mixture roll-in.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{dot, exact_policy_evaluation, soft_value_iteration};
use crate::metrics::MetricsRow;
use crate::sampling::{mixture_draw, MixtureMode, MixtureSpec, RngStream, SnapshotChain};
use crate::spg::{alg4_gradient, alg4_gradient_from, sgd_step, Direction, ScheduleConfig};
use crate::tabular::{SoftmaxPolicy, TabularMdp};

/// Success-rate threshold used by the gridworld experiments.
pub const DEFAULT_SWITCH_THRESHOLD: f64 = 0.5;

/// Ordered contexts `omega_0..omega_K` with the mixture weight and switch threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum<C> {
    pub contexts: Vec<C>,
    pub beta: f64,
    #[serde(default = "default_threshold")]
    pub switch_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_SWITCH_THRESHOLD
}

impl<C> Curriculum<C> {
    pub fn new(contexts: Vec<C>, beta: f64, switch_threshold: f64) -> Result<Self> {
        let c = Self {
            contexts,
            beta,
            switch_threshold,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(Error::InvalidArgument("curriculum has no contexts".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.switch_threshold) {
            return Err(Error::InvalidArgument(format!(
                "switch threshold must lie in [0,1], got {}",
                self.switch_threshold
            )));
        }
        Ok(())
    }

    /// Index of the final context, `K`.
    pub fn final_index(&self) -> usize {
        self.contexts.len() - 1
    }
}

impl<C: Serialize> Curriculum<C> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl<C: for<'de> Deserialize<'de>> Curriculum<C> {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

/// Strict threshold test: a rate exactly at the threshold does not switch.
pub fn should_switch(rate: f64, threshold: f64) -> bool {
    rate > threshold
}

/// When to leave the current context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SwitchRule {
    /// Batch success rate strictly above the threshold.
    SuccessRate { threshold: f64 },
    /// Exact `V*(rho) - V^pi(rho) <= eps` (small MDPs only).
    ValueGap { eps: f64 },
}

impl Default for SwitchRule {
    fn default() -> Self {
        SwitchRule::SuccessRate {
            threshold: DEFAULT_SWITCH_THRESHOLD,
        }
    }
}

impl SwitchRule {
    pub fn fires(&self, outcome: &StepOutcome) -> bool {
        match *self {
            SwitchRule::SuccessRate { threshold } => should_switch(outcome.success_rate, threshold),
            SwitchRule::ValueGap { eps } => outcome.value_gap.is_some_and(|g| g <= eps),
        }
    }
}

/// Progress through a curriculum.
#[derive(Debug, Clone)]
pub struct CurriculumState {
    k: usize,
    k_final: usize,
    chain: SnapshotChain,
    steps_per_context: Vec<usize>,
}

impl CurriculumState {
    pub fn new(k_final: usize) -> Self {
        Self {
            k: 0,
            k_final,
            chain: SnapshotChain::new(),
            steps_per_context: vec![0; k_final + 1],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn k_final(&self) -> usize {
        self.k_final
    }

    /// `k / K`; a single-context curriculum counts as complete.
    pub fn kappa(&self) -> f64 {
        if self.k_final == 0 {
            1.0
        } else {
            self.k as f64 / self.k_final as f64
        }
    }

    pub fn is_final(&self) -> bool {
        self.k == self.k_final
    }

    pub fn chain(&self) -> &SnapshotChain {
        &self.chain
    }

    pub fn steps_per_context(&self) -> &[usize] {
        &self.steps_per_context
    }

    /// Freezes `policy` onto the chain and moves to the next context. Training
    /// continues from the same parameters (warm start).
    pub fn advance_context(&mut self, policy: &SoftmaxPolicy) -> Result<()> {
        if self.k >= self.k_final {
            return Err(Error::CurriculumFinished(self.k));
        }
        self.chain.push(policy.clone());
        self.k += 1;
        Ok(())
    }

    fn count_step(&mut self) -> usize {
        self.steps_per_context[self.k] += 1;
        self.steps_per_context[self.k]
    }
}

/// Per-step information handed to a [`ContextTrainer`].
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Global 1-based gradient step.
    pub step: usize,
    /// 1-based step within the current context.
    pub context_step: usize,
    pub state: &'a CurriculumState,
    pub beta: f64,
    pub log_this_step: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_entreg_return: f64,
    pub exact_value: Option<f64>,
    pub value_gap: Option<f64>,
}

/// One gradient step on the current context.
pub trait ContextTrainer {
    fn step(&mut self, ctx: &StepContext<'_>, policy: &SoftmaxPolicy) -> Result<(SoftmaxPolicy, StepOutcome)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub total_steps: usize,
    pub log_interval: usize,
    pub beta: f64,
    pub switch_rule: SwitchRule,
    /// End the run once the switch rule fires on the final context.
    pub stop_at_final: bool,
    pub record_wall_time: bool,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            log_interval: 100,
            beta: 0.75,
            switch_rule: SwitchRule::default(),
            stop_at_final: false,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriverOutcome {
    pub policy: SoftmaxPolicy,
    pub state: CurriculumState,
    pub rows: Vec<MetricsRow>,
    /// `(step, k)` at every switch, in order.
    pub switches: Vec<(usize, usize)>,
    pub steps_run: usize,
}

/// Runs `trainer` through the curriculum. A row is logged after every
/// `log_interval`-th step and at an early stop; `kappa` in a row is the progress
/// after that step's switch decision.
pub fn rollin_driver<T: ContextTrainer + ?Sized>(
    k_final: usize,
    config: &DriverConfig,
    trainer: &mut T,
    theta0: SoftmaxPolicy,
) -> Result<DriverOutcome> {
    if config.log_interval == 0 {
        return Err(Error::InvalidArgument("log interval must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0,1], got {}", config.beta)));
    }
    let started = Instant::now();
    let mut state = CurriculumState::new(k_final);
    let mut policy = theta0;
    let mut rows = Vec::with_capacity(config.total_steps / config.log_interval + 1);
    let mut switches = Vec::new();
    let mut steps_run = 0;
    for step in 1..=config.total_steps {
        let log_this_step = step % config.log_interval == 0;
        let context_step = state.count_step();
        let ctx = StepContext {
            step,
            context_step,
            state: &state,
            beta: config.beta,
            log_this_step,
        };
        let (next, outcome) = trainer.step(&ctx, &policy)?;
        policy = next;
        steps_run = step;
        let fired = config.switch_rule.fires(&outcome);
        let stop = fired && state.is_final() && config.stop_at_final;
        if fired && !state.is_final() {
            state.advance_context(&policy)?;
            switches.push((step, state.k()));
        }
        if log_this_step || stop {
            rows.push(MetricsRow {
                gradient_step: step,
                context_index: state.k(),
                kappa: state.kappa(),
                success_rate: outcome.success_rate,
                mean_undiscounted_return: outcome.mean_return,
                mean_discounted_entreg_return: outcome.mean_entreg_return,
                exact_value: outcome.exact_value,
                wall_time_s: config.record_wall_time.then(|| started.elapsed().as_secs_f64()),
            });
        }
        if stop {
            break;
        }
    }
    Ok(DriverOutcome {
        policy,
        state,
        rows,
        switches,
        steps_run,
    })
}

/// Exact-model trainer: random-horizon SPG with the two-phase schedule restarted
/// in each context, initial states drawn from the mixture `mu_k`.
///
/// Step `t` draws from `RngStream::new(seed, &[t])`, so a single-context run is
/// bit-identical to [`crate::spg::two_phase_run`].
pub struct ExactSpgTrainer {
    contexts: Vec<TabularMdp>,
    alpha: f64,
    schedule: ScheduleConfig,
    mode: MixtureMode,
    seed: u64,
    optimal_values: Vec<f64>,
    gap_eps: Option<f64>,
}

impl ExactSpgTrainer {
    /// `contexts` must share dynamics, discount and initial distribution.
    pub fn new(
        contexts: Vec<TabularMdp>,
        alpha: f64,
        schedule: ScheduleConfig,
        mode: MixtureMode,
        seed: u64,
        gap_eps: Option<f64>,
    ) -> Result<Self> {
        schedule.validate()?;
        let first = contexts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no contexts".into()))?;
        let checksum = first.dynamics().checksum();
        for m in &contexts[1..] {
            if m.dynamics().checksum() != checksum
                || m.discount() != first.discount()
                || m.init_dist() != first.init_dist()
            {
                return Err(Error::InvalidArgument(
                    "contexts must share dynamics, discount and initial distribution".into(),
                ));
            }
        }
        let optimal_values = if alpha > 0.0 {
            contexts
                .iter()
                .map(|m| soft_value_iteration(m, alpha, 1e-10, 1_000_000).map(|s| s.value(m.init_dist())))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        if gap_eps.is_some() && optimal_values.is_empty() {
            return Err(Error::InvalidArgument("value-gap switching needs alpha > 0".into()));
        }
        Ok(Self {
            contexts,
            alpha,
            schedule,
            mode,
            seed,
            optimal_values,
            gap_eps,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn optimal_values(&self) -> &[f64] {
        &self.optimal_values
    }
}

impl ContextTrainer for ExactSpgTrainer {
    fn step(&mut self, ctx: &StepContext<'_>, policy: &SoftmaxPolicy) -> Result<(SoftmaxPolicy, StepOutcome)> {
        let k = ctx.state.k();
        let mdp = &self.contexts[k];
        let (batch, eta) = self.schedule.at(ctx.context_step);
        let mut rng = RngStream::new(self.seed, &[ctx.step as u64]);
        let estimate = if k == 0 || ctx.beta == 0.0 {
            alg4_gradient(mdp, policy, self.alpha, batch, &mut rng)?
        } else {
            let spec = MixtureSpec {
                dynamics: mdp.dynamics(),
                rho: mdp.init_dist(),
                beta: ctx.beta,
                gamma: mdp.discount(),
                mode: self.mode,
            };
            let chain = ctx.state.chain();
            alg4_gradient_from(mdp, &policy.table(), self.alpha, batch, &mut rng, |r: &mut RngStream| {
                mixture_draw(chain, k, &spec, r)
            })?
        };
        let mut theta = policy.theta().to_vec();
        sgd_step(&mut theta, &estimate.grad, eta, Direction::Ascent)?;
        let next = SoftmaxPolicy::new(policy.n_states(), policy.n_actions(), theta)?;

        let mut outcome = StepOutcome {
            success_rate: 0.0,
            mean_return: estimate.mean_return,
            mean_entreg_return: estimate.mean_entreg_return,
            exact_value: None,
            value_gap: None,
        };
        if ctx.log_this_step || self.gap_eps.is_some() {
            let v = dot(mdp.init_dist().probs(), &exact_policy_evaluation(mdp, &next, self.alpha)?);
            outcome.exact_value = ctx.log_this_step.then_some(v);
            if let Some(&v_star) = self.optimal_values.get(k) {
                let gap = v_star - v;
                outcome.value_gap = Some(gap);
                // no goal to hit here; the logged rate is the 0/1 outcome of the gap test
                if let Some(eps) = self.gap_eps {
                    outcome.success_rate = f64::from(u8::from(gap <= eps));
                }
            }
        }
        Ok((next, outcome))
    }
}

/// Draws an initial state from `mu_k` for context `k` given the current chain;
/// `beta = 0` or `k = 0` short-circuits to `rho` without consuming the mixture coin.
pub fn draw_initial<R: Rng + ?Sized>(
    state: &CurriculumState,
    spec: &MixtureSpec<'_>,
    rng: &mut R,
) -> usize {
    if state.k() == 0 || spec.beta == 0.0 {
        spec.rho.sample(rng.random::<f64>())
    } else {
        mixture_draw(state.chain(), state.k(), spec, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::random_mdp;
    use crate::spg::two_phase_run;

    #[test]
    fn switch_boundary() {
        assert!(should_switch(0.51, 0.5));
        assert!(!should_switch(0.50, 0.5));
        assert!(!should_switch(0.0, 0.5));
    }

    #[test]
    fn kappa_values() {
        let mut st = CurriculumState::new(16);
        let p = SoftmaxPolicy::zeros(2, 2);
        st.advance_context(&p).unwrap();
        assert_eq!(st.chain().len(), 1);
        assert_eq!(st.kappa(), 1.0 / 16.0);
        for _ in 1..7 {
            st.advance_context(&p).unwrap();
        }
        assert_eq!(st.k(), 7);
        st.advance_context(&p).unwrap();
        assert_eq!(st.kappa(), 0.5);
        st.advance_context(&p).unwrap();
        assert_eq!(st.kappa(), 0.5625);
        for _ in 9..16 {
            st.advance_context(&p).unwrap();
        }
        assert!(matches!(st.advance_context(&p), Err(Error::CurriculumFinished(16))));
        assert_eq!(st.kappa(), 1.0);
        assert!(st.chain().is_intact());
    }

    #[test]
    fn curriculum_json_roundtrip() {
        let c = Curriculum::new(vec![[0usize, 0], [0, 1]], 0.75, 0.5).unwrap();
        let text = c.to_json().unwrap();
        assert!(text.contains("\"contexts\"") && text.contains("\"beta\"") && text.contains("\"switch_threshold\""));
        assert_eq!(Curriculum::<[usize; 2]>::from_json(&text).unwrap(), c);
        assert!(Curriculum::<[usize; 2]>::new(vec![], 0.5, 0.5).is_err());
        assert!(Curriculum::new(vec![1], 1.5, 0.5).is_err());
    }

    #[test]
    fn single_context_matches_two_phase() {
        let mut rng = RngStream::new(5, &[]);
        let mdp = random_mdp(&mut rng, 3, 2, 0.8);
        let schedule = ScheduleConfig {
            total_steps: 60,
            log_interval: 20,
            b2: 16,
            ..Default::default()
        };
        let theta0 = SoftmaxPolicy::zeros(3, 2);
        let plain = two_phase_run(&mdp, 0.1, &schedule, &theta0, 11).unwrap();
        let mut trainer =
            ExactSpgTrainer::new(vec![mdp.clone()], 0.1, schedule, MixtureMode::Recursive, 11, None).unwrap();
        let config = DriverConfig {
            total_steps: 60,
            log_interval: 20,
            beta: 0.75,
            ..Default::default()
        };
        let out = rollin_driver(0, &config, &mut trainer, theta0).unwrap();
        assert_eq!(out.policy, plain.policy);
        let values: Vec<f64> = out.rows.iter().map(|r| r.exact_value.unwrap()).collect();
        let expect: Vec<f64> = plain.log.iter().map(|r| r.exact_value).collect();
        assert_eq!(values, expect);
        assert!(out.rows.iter().all(|r| r.kappa == 1.0));
    }

    #[test]
    fn value_gap_curriculum_advances_monotonically() {
        let mut rng = RngStream::new(6, &[]);
        let base = random_mdp(&mut rng, 3, 2, 0.5);
        let contexts: Vec<TabularMdp> = (0..3)
            .map(|_| base.with_reward(crate::instances::random_rewards(&mut rng, 6)).unwrap())
            .collect();
        let schedule = ScheduleConfig {
            t1: 200,
            b1: 64,
            eta: 1.0,
            total_steps: 3000,
            b2: 32,
            t0: 10,
            ..Default::default()
        };
        let mut trainer = ExactSpgTrainer::new(contexts, 0.1, schedule, MixtureMode::Recursive, 1, Some(0.05)).unwrap();
        let config = DriverConfig {
            total_steps: 3000,
            log_interval: 50,
            beta: 0.5,
            switch_rule: SwitchRule::ValueGap { eps: 0.05 },
            stop_at_final: true,
            record_wall_time: false,
        };
        let out = rollin_driver(2, &config, &mut trainer, SoftmaxPolicy::zeros(3, 2)).unwrap();
        let kappas: Vec<f64> = out.rows.iter().map(|r| r.kappa).collect();
        assert!(kappas.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(out.state.k(), 2, "{:?}", out.switches);
        assert!(out.steps_run < 3000);
        assert!(out.state.chain().is_intact());
    }
}

//! Seeded random problem instances for property tests and the verification suite.

use std::sync::Arc;

use rand::Rng;

use crate::tabular::{Dynamics, SoftmaxPolicy, StateDistribution, TabularMdp};

/// Random dense MDP: transition rows and the initial distribution are normalized
/// uniform draws (so every entry is positive), rewards are uniform in `[0, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, gamma: f64) -> TabularMdp {
    let mut dense = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        dense.extend(random_simplex(rng, n_states));
    }
    let dynamics = Dynamics::from_dense(n_states, n_actions, &dense).expect("normalized rows");
    let reward = random_rewards(rng, n_states * n_actions);
    let init = StateDistribution::with_tolerance(random_simplex(rng, n_states), 1e-12)
        .expect("normalized draw");
    TabularMdp::new(Arc::new(dynamics), reward, gamma, init).expect("valid by construction")
}

/// Sparse random chain: each `(s, a)` moves to one of at most `fanout` states.
/// Still ergodic enough for visitation checks because `rho` has full support.
pub fn random_chain<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    fanout: usize,
    gamma: f64,
) -> TabularMdp {
    let mut dense = vec![0.0; n_states * n_actions * n_states];
    for row in dense.chunks_mut(n_states) {
        let weights = random_simplex(rng, fanout.max(1));
        for w in weights {
            let s2 = rng.random_range(0..n_states);
            row[s2] += w;
        }
        let sum: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    let dynamics = Dynamics::from_dense(n_states, n_actions, &dense).expect("normalized rows");
    let reward = random_rewards(rng, n_states * n_actions);
    TabularMdp::new(
        Arc::new(dynamics),
        reward,
        gamma,
        StateDistribution::uniform(n_states),
    )
    .expect("valid by construction")
}

pub fn random_rewards<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Arc<[f64]> {
    (0..len).map(|_| rng.random::<f64>()).collect::<Vec<_>>().into()
}

/// Uniform parameters in `[-scale, scale]`.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, scale: f64) -> SoftmaxPolicy {
    let theta = (0..n_states * n_actions)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    SoftmaxPolicy::new(n_states, n_actions, theta).expect("finite")
}

/// Normalized vector of `n` strictly positive entries.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

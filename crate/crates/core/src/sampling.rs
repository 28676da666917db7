//! Seeded stochastic primitives: geometric horizons, rollouts, random-horizon
//! state-action sampling, unbiased soft-Q estimation and the recursive mixture
//! initial-state sampler.
//!
//! Every draw goes through an [`RngStream`] keyed by `(master_seed, labels)`, so a
//! trajectory's randomness depends only on its labels and never on which worker
//! thread produced it.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Dynamics, PolicyTable, SoftmaxPolicy, StateDistribution, TabularMdp, Trajectory};

/// Deterministic random stream derived from a master seed and a label path.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, labels: &[u64]) -> Self {
        let mut state = splitmix64(master_seed ^ 0x5851_f42d_4c95_7f2d);
        for &label in labels {
            state = splitmix64(state ^ splitmix64(label.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        let mut key = [0u8; 32];
        let mut x = state;
        for chunk in key.chunks_mut(8) {
            x = splitmix64(x);
            chunk.copy_from_slice(&x.to_le_bytes());
        }
        Self {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `H ~ Geom(1 - gamma)` on `{0, 1, 2, ...}`: `P(H = h) = (1 - gamma) gamma^h`.
pub fn sample_geometric<R: Rng + ?Sized>(rng: &mut R, gamma: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "geometric parameter gamma must lie in [0,1), got {gamma}"
        )));
    }
    Ok(geometric(rng, gamma))
}

/// Inversion on a single uniform: `H = floor(ln U / ln gamma)` with `U` in `(0, 1]`,
/// so `P(H >= h) = P(U <= gamma^h) = gamma^h`.
#[inline]
pub(crate) fn geometric<R: Rng + ?Sized>(rng: &mut R, gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 0;
    }
    let u = 1.0 - rng.random::<f64>();
    let h = (u.ln() / gamma.ln()).floor();
    if h >= usize::MAX as f64 {
        usize::MAX
    } else {
        h as usize
    }
}

#[inline]
fn step<R: Rng + ?Sized>(dynamics: &Dynamics, table: &PolicyTable, s: usize, a: usize, rng: &mut R) -> (usize, usize) {
    let s2 = dynamics.sample_next(s, a, rng.random::<f64>());
    let a2 = table.sample_action(s2, rng.random::<f64>());
    (s2, a2)
}

/// Rolls `policy` for exactly `horizon` steps from `s0`; no early termination.
pub fn rollout<R: Rng + ?Sized>(
    dynamics: &Dynamics,
    reward: impl Fn(usize, usize) -> f64,
    policy: &PolicyTable,
    s0: usize,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = s0;
    states.push(s);
    for _ in 0..horizon {
        let a = policy.sample_action(s, rng.random::<f64>());
        rewards.push(reward(s, a));
        actions.push(a);
        s = dynamics.sample_next(s, a, rng.random::<f64>());
        states.push(s);
    }
    Trajectory {
        states,
        actions,
        rewards,
    }
}

/// Runs `policy` from `s0` for `h` transitions and returns the final state.
pub fn roll_in<R: Rng + ?Sized>(dynamics: &Dynamics, policy: &PolicyTable, s0: usize, h: usize, rng: &mut R) -> usize {
    let mut s = s0;
    for _ in 0..h {
        let a = policy.sample_action(s, rng.random::<f64>());
        s = dynamics.sample_next(s, a, rng.random::<f64>());
    }
    s
}

/// SamSA with initial states from `rho = mdp.init_dist()`: the returned state is
/// distributed as the discounted visitation `d^pi_rho`.
pub fn sam_sa<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &PolicyTable, rng: &mut R) -> (usize, usize) {
    let rho = mdp.init_dist();
    sam_sa_from(mdp, policy, rng, |r| rho.sample(r.random::<f64>()))
}

/// SamSA with an arbitrary initial-state sampler.
pub fn sam_sa_from<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    rng: &mut R,
    mut init: impl FnMut(&mut R) -> usize,
) -> (usize, usize) {
    let h = geometric(rng, mdp.discount());
    let s0 = init(rng);
    let a0 = policy.sample_action(s0, rng.random::<f64>());
    let dynamics = mdp.dynamics();
    let (mut s, mut a) = (s0, a0);
    for _ in 0..h {
        (s, a) = step(dynamics, policy, s, a, rng);
    }
    (s, a)
}

/// EstEntQ: unbiased estimate of the soft Q-value `Q^pi(s, a)`.
///
/// Draws `H ~ Geom(1 - sqrt(gamma))` and weights step `h + 1` by
/// `gamma^((h+1)/2)`; since `P(H >= h + 1) = gamma^((h+1)/2)` the expected weight
/// of step `h + 1` is exactly `gamma^(h+1)`.
pub fn est_ent_q<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    alpha: f64,
    s: usize,
    a: usize,
    rng: &mut R,
) -> f64 {
    let sqrt_gamma = mdp.discount().sqrt();
    let dynamics = mdp.dynamics();
    let mut q = mdp.reward(s, a);
    let h = geometric(rng, sqrt_gamma);
    let (mut s, mut a) = (s, a);
    let mut weight = 1.0;
    for _ in 0..h {
        (s, a) = step(dynamics, policy, s, a, rng);
        weight *= sqrt_gamma;
        q += weight * (mdp.reward(s, a) - alpha * policy.log_prob(s, a));
    }
    q
}

/// A frozen policy on the snapshot chain, with its sampling table and a checksum
/// taken at capture.
#[derive(Debug)]
pub struct Snapshot {
    policy: SoftmaxPolicy,
    table: PolicyTable,
    checksum: u64,
}

impl Snapshot {
    pub fn policy(&self) -> &SoftmaxPolicy {
        &self.policy
    }

    pub fn table(&self) -> &PolicyTable {
        &self.table
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn is_intact(&self) -> bool {
        self.policy.checksum() == self.checksum
    }
}

/// Frozen policies of completed contexts, oldest first.
#[derive(Debug, Clone, Default)]
pub struct SnapshotChain {
    entries: Vec<Arc<Snapshot>>,
}

impl SnapshotChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, policy: SoftmaxPolicy) {
        let table = policy.table();
        let checksum = policy.checksum();
        self.entries.push(Arc::new(Snapshot {
            policy,
            table,
            checksum,
        }));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Snapshot> {
        self.entries.get(i).map(Arc::as_ref)
    }

    pub fn policies(&self) -> Vec<SoftmaxPolicy> {
        self.entries.iter().map(|e| e.policy.clone()).collect()
    }

    pub fn checksums(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.checksum).collect()
    }

    /// True iff every entry still hashes to its capture-time checksum.
    pub fn is_intact(&self) -> bool {
        self.entries.iter().all(|e| e.is_intact())
    }
}

/// How the previous context's visitation is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureMode {
    /// `mu_k = beta d^{pi_{k-1}}_{mu_{k-1}} + (1 - beta) rho`, recursing down the chain.
    #[default]
    Recursive,
    /// Roll the previous snapshot from `rho` directly: `beta d^{pi_{k-1}}_rho + (1 - beta) rho`.
    Shallow,
}

impl std::str::FromStr for MixtureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(Self::Recursive),
            "shallow" => Ok(Self::Shallow),
            other => Err(Error::InvalidArgument(format!("unknown mixture mode {other:?}"))),
        }
    }
}

/// Parameters of the mixture initial-state law.
#[derive(Debug, Clone, Copy)]
pub struct MixtureSpec<'a> {
    pub dynamics: &'a Dynamics,
    pub rho: &'a StateDistribution,
    pub beta: f64,
    pub gamma: f64,
    pub mode: MixtureMode,
}

/// Draws an initial state for context `k` from `mu_k`.
pub fn sample_mixture_initial<R: Rng + ?Sized>(
    chain: &SnapshotChain,
    k: usize,
    spec: &MixtureSpec<'_>,
    rng: &mut R,
) -> Result<usize> {
    if chain.len() < k {
        return Err(Error::ChainTooShort { len: chain.len(), k });
    }
    if !(0.0..=1.0).contains(&spec.beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0,1], got {}", spec.beta)));
    }
    Ok(mixture_draw(chain, k, spec, rng))
}

pub(crate) fn mixture_draw<R: Rng + ?Sized>(chain: &SnapshotChain, k: usize, spec: &MixtureSpec<'_>, rng: &mut R) -> usize {
    match spec.mode {
        MixtureMode::Recursive => {
            // Unwind the recursion: descend while the beta-coin succeeds, then roll
            // the snapshots back up from the level where it stopped.
            let mut level = k;
            while level > 0 && rng.random::<f64>() < spec.beta {
                level -= 1;
            }
            let mut s = spec.rho.sample(rng.random::<f64>());
            for j in level..k {
                let h = geometric(rng, spec.gamma);
                s = roll_in(spec.dynamics, chain.entries[j].table(), s, h, rng);
            }
            s
        }
        MixtureMode::Shallow => {
            let rolled = k > 0 && rng.random::<f64>() < spec.beta;
            let s = spec.rho.sample(rng.random::<f64>());
            if rolled {
                let h = geometric(rng, spec.gamma);
                roll_in(spec.dynamics, chain.entries[k - 1].table(), s, h, rng)
            } else {
                s
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_q_values, visitation_distribution};
    use crate::instances::{random_mdp, random_policy};

    fn single_state(reward: f64, gamma: f64) -> TabularMdp {
        let dyns = Dynamics::deterministic(1, 1, |_, _| 0).unwrap();
        TabularMdp::new(
            Arc::new(dyns),
            vec![reward].into(),
            gamma,
            StateDistribution::point_mass(1, 0).unwrap(),
        )
        .unwrap()
    }

    fn empirical(counts: &[u64]) -> StateDistribution {
        let n: u64 = counts.iter().sum();
        StateDistribution::with_tolerance(counts.iter().map(|&c| c as f64 / n as f64).collect(), 1e-9)
            .unwrap()
    }

    #[test]
    fn streams_are_reproducible_and_label_sensitive() {
        let a: Vec<u64> = (0..4).map(|_| RngStream::new(7, &[1, 2]).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(RngStream::new(7, &[1, 2]).next_u64(), RngStream::new(7, &[2, 1]).next_u64());
        assert_ne!(RngStream::new(7, &[1]).next_u64(), RngStream::new(8, &[1]).next_u64());
    }

    #[test]
    fn geometric_degenerate_and_rejects() {
        let mut rng = RngStream::new(1, &[]);
        for _ in 0..1000 {
            assert_eq!(sample_geometric(&mut rng, 0.0).unwrap(), 0);
        }
        assert!(sample_geometric(&mut rng, 1.0).is_err());
        assert!(sample_geometric(&mut rng, -0.1).is_err());
    }

    #[test]
    fn geometric_mean_and_pmf() {
        let n = 1_000_000;
        let mut rng = RngStream::new(2, &[0]);
        let draws: Vec<usize> = (0..n).map(|_| geometric(&mut rng, 0.5)).collect();
        let mean = draws.iter().sum::<usize>() as f64 / n as f64;
        // Var = gamma / (1 - gamma)^2 = 2
        let se = (2.0 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");

        let mut counts = [0u64; 3];
        for _ in 0..n {
            let h = geometric(&mut rng, 0.9);
            if h < 3 {
                counts[h] += 1;
            }
        }
        for (h, &expect) in [0.1, 0.09, 0.081].iter().enumerate() {
            let p = counts[h] as f64 / n as f64;
            let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
            assert!((p - expect).abs() < 3.0 * sigma, "h={h}: {p} vs {expect}");
        }
    }

    #[test]
    fn rollout_shapes_and_self_loop() {
        let mdp = single_state(0.3, 0.9);
        let table = SoftmaxPolicy::zeros(1, 1).table();
        let mut rng = RngStream::new(3, &[]);
        let t = rollout(mdp.dynamics(), |s, a| mdp.reward(s, a), &table, 0, 1, &mut rng);
        assert_eq!((t.states.len(), t.actions.len(), t.rewards.len()), (2, 1, 1));
        let t = rollout(mdp.dynamics(), |s, a| mdp.reward(s, a), &table, 0, 25, &mut rng);
        assert!(t.states.iter().all(|&s| s == 0));
        assert!(t.validate(1, 1).is_ok());
    }

    #[test]
    fn rollout_stationary_frequencies() {
        // symmetric two-state chain: action 0 stays, action 1 switches
        let dyns = Dynamics::deterministic(2, 2, |s, a| if a == 0 { s } else { 1 - s }).unwrap();
        let table = SoftmaxPolicy::zeros(2, 2).table();
        let mut rng = RngStream::new(4, &[]);
        let n = 1_000_000;
        let t = rollout(&dyns, |_, _| 0.0, &table, 0, n, &mut rng);
        let frac = t.states[1..].iter().filter(|&&s| s == 0).count() as f64 / n as f64;
        // each state is an i.i.d. fair coin given the previous one, so sigma = 0.5/sqrt(n)
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn sam_sa_myopic_and_absorbing() {
        let mut rng = RngStream::new(5, &[]);
        let mdp = random_mdp(&mut rng, 3, 2, 0.5).with_discount(0.0).unwrap();
        let table = SoftmaxPolicy::zeros(3, 2).table();
        let mut counts = [0u64; 3];
        for _ in 0..200_000 {
            counts[sam_sa(&mdp, &table, &mut rng).0] += 1;
        }
        assert!(empirical(&counts).total_variation(mdp.init_dist()) < 0.01);

        let absorbing = single_state(0.5, 0.95);
        let t1 = SoftmaxPolicy::zeros(1, 1).table();
        for _ in 0..1000 {
            assert_eq!(sam_sa(&absorbing, &t1, &mut rng), (0, 0));
        }
    }

    #[test]
    fn sam_sa_matches_visitation() {
        let mut rng = RngStream::new(6, &[]);
        let mdp = random_mdp(&mut rng, 4, 3, 0.8);
        let policy = random_policy(&mut rng, 4, 3, 1.5);
        let d = visitation_distribution(&mdp, &policy, mdp.init_dist()).unwrap();
        let table = policy.table();
        let mut counts = [0u64; 4];
        for _ in 0..1_000_000 {
            counts[sam_sa(&mdp, &table, &mut rng).0] += 1;
        }
        let tv = empirical(&counts).total_variation(&d);
        assert!(tv < 0.005, "tv {tv}");
    }

    #[test]
    fn est_ent_q_myopic_and_closed_form() {
        let mut rng = RngStream::new(7, &[]);
        let myopic = single_state(0.4, 0.0);
        let table = SoftmaxPolicy::zeros(1, 1).table();
        for _ in 0..100 {
            assert_eq!(est_ent_q(&myopic, &table, 0.1, 0, 0, &mut rng), 0.4);
        }

        let mdp = single_state(1.0, 0.81);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| est_ent_q(&mdp, &table, 0.0, 0, 0, &mut rng)).collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - 5.2631578947).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn est_ent_q_unbiased_random_mdp() {
        let mut rng = RngStream::new(8, &[]);
        let mdp = random_mdp(&mut rng, 4, 2, 0.9);
        let policy = random_policy(&mut rng, 4, 2, 1.0);
        let q = exact_q_values(&mdp, &policy, 0.1).unwrap();
        let table = policy.table();
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| est_ent_q(&mdp, &table, 0.1, 2, 1, &mut rng))
            .collect();
        let (mean, se) = mean_se(&draws);
        assert!((mean - q[2 * 2 + 1]).abs() < 3.0 * se, "{mean} vs {}", q[5]);
    }

    #[test]
    fn mixture_degenerate_laws() {
        let mut rng = RngStream::new(9, &[]);
        let mdp = random_mdp(&mut rng, 3, 2, 0.9);
        let mut chain = SnapshotChain::new();
        chain.push(random_policy(&mut rng, 3, 2, 2.0));
        chain.push(random_policy(&mut rng, 3, 2, 2.0));
        for (beta, k) in [(0.0, 2), (0.75, 0)] {
            let spec = MixtureSpec {
                dynamics: mdp.dynamics(),
                rho: mdp.init_dist(),
                beta,
                gamma: 0.9,
                mode: MixtureMode::Recursive,
            };
            let mut counts = [0u64; 3];
            for _ in 0..200_000 {
                counts[sample_mixture_initial(&chain, k, &spec, &mut rng).unwrap()] += 1;
            }
            assert!(empirical(&counts).total_variation(mdp.init_dist()) < 0.01);
        }
        let spec = MixtureSpec {
            dynamics: mdp.dynamics(),
            rho: mdp.init_dist(),
            beta: 0.5,
            gamma: 0.9,
            mode: MixtureMode::Recursive,
        };
        assert!(matches!(
            sample_mixture_initial(&chain, 3, &spec, &mut rng),
            Err(Error::ChainTooShort { len: 2, k: 3 })
        ));
    }

    #[test]
    fn snapshot_chain_checksums() {
        let mut chain = SnapshotChain::new();
        chain.push(SoftmaxPolicy::zeros(2, 2));
        assert_eq!(chain.len(), 1);
        assert!(chain.is_intact());
        assert_eq!(chain.checksums()[0], SoftmaxPolicy::zeros(2, 2).checksum());
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}

//! Finite MDPs, softmax policies and state distributions.
//!
//! States and actions are flat `usize` indices. Transition rows are stored in
//! compressed sparse form so that deterministic gridworlds with a hundred
//! actions stay cheap to roll out and to solve.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks on probability vectors.
pub const PROB_TOL: f64 = 1e-12;

/// A single invariant violation found by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    Discount(f64),
    NonFinite(String),
    NegativeProbability { s: usize, a: usize, next: usize, p: f64 },
    RowSum { s: usize, a: usize, sum: f64 },
    RewardOutOfRange { s: usize, a: usize, value: f64 },
    InitNegative { s: usize, p: f64 },
    InitSum(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::Discount(g) => write!(f, "discount {g} not in [0,1)"),
            Violation::NonFinite(what) => write!(f, "non-finite entry in {what}"),
            Violation::NegativeProbability { s, a, next, p } => {
                write!(f, "negative probability {p} at ({s},{a}) -> {next}")
            }
            Violation::RowSum { s, a, sum } => write!(f, "row sum {sum} at ({s},{a})"),
            Violation::RewardOutOfRange { s, a, value } => {
                write!(f, "reward out of [0,1]: {value} at ({s},{a})")
            }
            Violation::InitNegative { s, p } => write!(f, "negative initial probability {p} at {s}"),
            Violation::InitSum(sum) => write!(f, "initial distribution sums to {sum}"),
        }
    }
}

/// Outcome of [`validate_mdp`]: empty means ok.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// JSON document form of a [`TabularMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub init_dist: Vec<f64>,
}

/// Checks every [`TabularMdp`] invariant and reports all violations with indices.
pub fn validate_mdp(doc: &MdpDocument) -> ValidationReport {
    let mut violations = Vec::new();
    let (ns, na) = (doc.n_states, doc.n_actions);
    if ns == 0 || na == 0 {
        violations.push(Violation::Shape(format!("n_states={ns}, n_actions={na} must be positive")));
        return ValidationReport { violations };
    }
    if !(0.0..1.0).contains(&doc.discount) {
        violations.push(Violation::Discount(doc.discount));
    }

    if doc.transition.len() != ns {
        violations.push(Violation::Shape(format!(
            "transition has {} state rows, expected {ns}",
            doc.transition.len()
        )));
    }
    for (s, per_action) in doc.transition.iter().enumerate() {
        if per_action.len() != na {
            violations.push(Violation::Shape(format!(
                "transition[{s}] has {} actions, expected {na}",
                per_action.len()
            )));
            continue;
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != ns {
                violations.push(Violation::Shape(format!(
                    "transition[{s}][{a}] has length {}, expected {ns}",
                    row.len()
                )));
                continue;
            }
            if row.iter().any(|p| !p.is_finite()) {
                violations.push(Violation::NonFinite(format!("transition[{s}][{a}]")));
                continue;
            }
            for (next, &p) in row.iter().enumerate() {
                if p < 0.0 {
                    violations.push(Violation::NegativeProbability { s, a, next, p });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                violations.push(Violation::RowSum { s, a, sum });
            }
        }
    }

    if doc.reward.len() != ns {
        violations.push(Violation::Shape(format!(
            "reward has {} rows, expected {ns}",
            doc.reward.len()
        )));
    }
    for (s, row) in doc.reward.iter().enumerate() {
        if row.len() != na {
            violations.push(Violation::Shape(format!(
                "reward[{s}] has length {}, expected {na}",
                row.len()
            )));
            continue;
        }
        for (a, &value) in row.iter().enumerate() {
            // NaN fails the range test as well
            if !(0.0..=1.0).contains(&value) {
                violations.push(Violation::RewardOutOfRange { s, a, value });
            }
        }
    }

    if doc.init_dist.len() != ns {
        violations.push(Violation::Shape(format!(
            "init_dist has length {}, expected {ns}",
            doc.init_dist.len()
        )));
    } else {
        violations.extend(distribution_violations(&doc.init_dist));
    }

    ValidationReport { violations }
}

fn distribution_violations(probs: &[f64]) -> Vec<Violation> {
    let mut out = Vec::new();
    if probs.iter().any(|p| !p.is_finite()) {
        out.push(Violation::NonFinite("distribution".into()));
        return out;
    }
    for (s, &p) in probs.iter().enumerate() {
        if p < 0.0 {
            out.push(Violation::InitNegative { s, p });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        out.push(Violation::InitSum(sum));
    }
    out
}

/// Transition kernel shared by every context of a contextual MDP.
///
/// Rows are kept in CSR form: `(s, a)` owns entries `offsets[s*A+a]..offsets[s*A+a+1]`
/// of `next` / `probs`, zero entries omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    n_states: usize,
    n_actions: usize,
    offsets: Vec<usize>,
    next: Vec<usize>,
    probs: Vec<f64>,
}

impl Dynamics {
    /// Builds from a dense row-major `S*A*S` table.
    pub fn from_dense(n_states: usize, n_actions: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n_states * n_actions * n_states {
            return Err(Error::ShapeMismatch(format!(
                "dense transition has {} entries, expected {}",
                dense.len(),
                n_states * n_actions * n_states
            )));
        }
        let mut offsets = Vec::with_capacity(n_states * n_actions + 1);
        let mut next = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        let mut violations = Vec::new();
        for (row_idx, row) in dense.chunks(n_states).enumerate() {
            let (s, a) = (row_idx / n_actions, row_idx % n_actions);
            let mut sum = 0.0;
            for (s2, &p) in row.iter().enumerate() {
                if !(p >= 0.0 && p.is_finite()) {
                    violations.push(Violation::NegativeProbability { s, a, next: s2, p });
                }
                if p > 0.0 {
                    next.push(s2);
                    probs.push(p);
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                violations.push(Violation::RowSum { s, a, sum });
            }
            offsets.push(next.len());
        }
        if !violations.is_empty() {
            return Err(Error::InvalidMdp(ValidationReport { violations }));
        }
        Ok(Self {
            n_states,
            n_actions,
            offsets,
            next,
            probs,
        })
    }

    /// Deterministic kernel: `(s, a)` moves to `step(s, a)` with probability one.
    pub fn deterministic(
        n_states: usize,
        n_actions: usize,
        step: impl Fn(usize, usize) -> usize,
    ) -> Result<Self> {
        let mut next = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let s2 = step(s, a);
                if s2 >= n_states {
                    return Err(Error::ShapeMismatch(format!(
                        "successor {s2} of ({s},{a}) out of range"
                    )));
                }
                next.push(s2);
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            offsets: (0..=n_states * n_actions).collect(),
            probs: vec![1.0; next.len()],
            next,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Nonzero successors of `(s, a)` as parallel slices of states and probabilities.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> (&[usize], &[f64]) {
        let row = s * self.n_actions + a;
        let (lo, hi) = (self.offsets[row], self.offsets[row + 1]);
        (&self.next[lo..hi], &self.probs[lo..hi])
    }

    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        let (next, probs) = self.successors(s, a);
        next.iter()
            .zip(probs)
            .filter(|(&n, _)| n == s2)
            .map(|(_, &p)| p)
            .sum()
    }

    /// Inverse-CDF draw of a successor given a uniform `u` in `[0, 1)`.
    #[inline]
    pub fn sample_next(&self, s: usize, a: usize, u: f64) -> usize {
        let (next, probs) = self.successors(s, a);
        if next.len() == 1 {
            return next[0];
        }
        let mut acc = 0.0;
        for (&n, &p) in next.iter().zip(probs) {
            acc += p;
            if u < acc {
                return n;
            }
        }
        *next.last().expect("transition row is nonempty")
    }

    pub fn is_deterministic(&self) -> bool {
        self.offsets.windows(2).all(|w| w[1] - w[0] == 1)
    }

    /// Dense `S*A*S` row-major table.
    pub fn to_dense(&self) -> Vec<f64> {
        let ns = self.n_states;
        let mut out = vec![0.0; ns * self.n_actions * ns];
        for row in 0..ns * self.n_actions {
            for k in self.offsets[row]..self.offsets[row + 1] {
                out[row * ns + self.next[k]] += self.probs[k];
            }
        }
        out
    }

    /// Content hash, used to confirm that contexts share identical dynamics.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.n_states.hash(&mut h);
        self.n_actions.hash(&mut h);
        self.offsets.hash(&mut h);
        self.next.hash(&mut h);
        for p in &self.probs {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Probability vector over states (initial distributions, visitation distributions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateDistribution {
    probs: Vec<f64>,
}

impl StateDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, PROB_TOL)
    }

    /// Like [`StateDistribution::new`] with a custom sum tolerance; tiny negative
    /// round-off (above `-tol`) is clamped to zero.
    pub fn with_tolerance(mut probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < -tol) {
            return Err(Error::InvalidDistribution(
                "entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        for p in &mut probs {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        Ok(Self { probs })
    }

    pub fn point_mass(n_states: usize, s: usize) -> Result<Self> {
        if s >= n_states {
            return Err(Error::InvalidArgument(format!("state {s} out of range")));
        }
        let mut probs = vec![0.0; n_states];
        probs[s] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize) -> Self {
        Self {
            probs: vec![1.0 / n_states as f64; n_states],
        }
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &Self, weight: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch("mixing distributions of different sizes".into()));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| weight * p + (1.0 - weight) * q)
            .collect();
        Self::with_tolerance(probs, 1e-10)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_full_support(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Inverse-CDF draw given a uniform `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (s, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = s;
                if u < acc {
                    return s;
                }
            }
        }
        last
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for StateDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<StateDistribution> for Vec<f64> {
    fn from(d: StateDistribution) -> Self {
        d.probs
    }
}

/// Finite discounted MDP. Cloning is cheap: dynamics and rewards are shared.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    dynamics: Arc<Dynamics>,
    reward: Arc<[f64]>,
    discount: f64,
    init_dist: StateDistribution,
}

impl TabularMdp {
    pub fn new(
        dynamics: Arc<Dynamics>,
        reward: Arc<[f64]>,
        discount: f64,
        init_dist: StateDistribution,
    ) -> Result<Self> {
        let (ns, na) = (dynamics.n_states(), dynamics.n_actions());
        let mut violations = Vec::new();
        if reward.len() != ns * na {
            violations.push(Violation::Shape(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                ns * na
            )));
        }
        for (i, &value) in reward.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                violations.push(Violation::RewardOutOfRange {
                    s: i / na,
                    a: i % na,
                    value,
                });
            }
        }
        if !(0.0..1.0).contains(&discount) {
            violations.push(Violation::Discount(discount));
        }
        if init_dist.len() != ns {
            violations.push(Violation::Shape(format!(
                "init_dist has length {}, expected {ns}",
                init_dist.len()
            )));
        }
        if !violations.is_empty() {
            return Err(Error::InvalidMdp(ValidationReport { violations }));
        }
        Ok(Self {
            dynamics,
            reward,
            discount,
            init_dist,
        })
    }

    /// Builds from dense tables: `transition[s][a][s']`, `reward[s][a]`.
    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let report = validate_mdp(doc);
        if !report.is_ok() {
            return Err(Error::InvalidMdp(report));
        }
        let dense: Vec<f64> = doc.transition.iter().flatten().flatten().copied().collect();
        let dynamics = Dynamics::from_dense(doc.n_states, doc.n_actions, &dense)?;
        let reward: Vec<f64> = doc.reward.iter().flatten().copied().collect();
        Self::new(
            Arc::new(dynamics),
            reward.into(),
            doc.discount,
            StateDistribution::new(doc.init_dist.clone())?,
        )
    }

    pub fn to_document(&self) -> MdpDocument {
        let (ns, na) = (self.n_states(), self.n_actions());
        let dense = self.dynamics.to_dense();
        MdpDocument {
            n_states: ns,
            n_actions: na,
            discount: self.discount,
            transition: dense
                .chunks(ns * na)
                .map(|per_state| per_state.chunks(ns).map(<[f64]>::to_vec).collect())
                .collect(),
            reward: self.reward.chunks(na).map(<[f64]>::to_vec).collect(),
            init_dist: self.init_dist.probs().to_vec(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// Same dynamics and discount, different reward table.
    pub fn with_reward(&self, reward: Arc<[f64]>) -> Result<Self> {
        Self::new(
            self.dynamics.clone(),
            reward,
            self.discount,
            self.init_dist.clone(),
        )
    }

    pub fn with_init_dist(&self, init_dist: StateDistribution) -> Result<Self> {
        Self::new(
            self.dynamics.clone(),
            self.reward.clone(),
            self.discount,
            init_dist,
        )
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.dynamics.clone(),
            self.reward.clone(),
            discount,
            self.init_dist.clone(),
        )
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.dynamics.n_states()
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.dynamics.n_actions()
    }

    #[inline]
    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn dynamics(&self) -> &Arc<Dynamics> {
        &self.dynamics
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions() + a]
    }

    pub fn reward_table(&self) -> &Arc<[f64]> {
        &self.reward
    }

    pub fn init_dist(&self) -> &StateDistribution {
        &self.init_dist
    }

    /// Re-validates every invariant.
    pub fn validate(&self) -> ValidationReport {
        validate_mdp(&self.to_document())
    }
}

/// Reward family over shared dynamics: context `c` selects `rewards[c]`.
#[derive(Debug, Clone)]
pub struct ContextualMdp {
    dynamics: Arc<Dynamics>,
    rewards: Vec<Arc<[f64]>>,
    discount: f64,
    init_dist: StateDistribution,
}

impl ContextualMdp {
    pub fn new(
        dynamics: Arc<Dynamics>,
        rewards: Vec<Arc<[f64]>>,
        discount: f64,
        init_dist: StateDistribution,
    ) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::InvalidArgument("contextual MDP needs at least one context".into()));
        }
        // validate every context through the single-MDP constructor
        for r in &rewards {
            TabularMdp::new(dynamics.clone(), r.clone(), discount, init_dist.clone())?;
        }
        Ok(Self {
            dynamics,
            rewards,
            discount,
            init_dist,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.rewards.len()
    }

    pub fn dynamics(&self) -> &Arc<Dynamics> {
        &self.dynamics
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn init_dist(&self) -> &StateDistribution {
        &self.init_dist
    }

    pub fn reward_table(&self, context: usize) -> &Arc<[f64]> {
        &self.rewards[context]
    }

    /// The MDP of one context; shares dynamics and reward storage.
    pub fn mdp(&self, context: usize) -> TabularMdp {
        TabularMdp {
            dynamics: self.dynamics.clone(),
            reward: self.rewards[context].clone(),
            discount: self.discount,
            init_dist: self.init_dist.clone(),
        }
    }

    pub fn with_init_dist(&self, init_dist: StateDistribution) -> Result<Self> {
        Self::new(self.dynamics.clone(), self.rewards.clone(), self.discount, init_dist)
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(self.dynamics.clone(), self.rewards.clone(), discount, self.init_dist.clone())
    }
}

/// Softmax policy over an unconstrained `S x A` parameter table (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    theta: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidPolicy("empty state or action space".into()));
        }
        if theta.len() != n_states * n_actions {
            return Err(Error::InvalidPolicy(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                n_states * n_actions
            )));
        }
        if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidPolicy(format!(
                "non-finite theta at ({},{})",
                i / n_actions,
                i % n_actions
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            theta,
        })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            theta: vec![0.0; n_states * n_actions],
        }
    }

    /// Parameters reproducing a given strictly positive probability table: `theta = ln(pi)`.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidPolicy("probabilities must be strictly positive".into()));
        }
        Self::new(n_states, n_actions, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    #[inline]
    pub fn theta_row(&self, s: usize) -> &[f64] {
        &self.theta[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// `pi(.|s)` via max-subtracted softmax.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        softmax_into(self.theta_row(s), &mut out);
        out
    }

    /// `log pi(a|s)` via log-sum-exp, without forming probabilities.
    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let row = self.theta_row(s);
        row[a] - log_sum_exp(row)
    }

    pub fn log_probs(&self, s: usize) -> Vec<f64> {
        let row = self.theta_row(s);
        let lse = log_sum_exp(row);
        row.iter().map(|t| t - lse).collect()
    }

    /// Precomputed probabilities, log-probabilities and per-state CDFs.
    pub fn table(&self) -> PolicyTable {
        PolicyTable::from_policy(self)
    }

    /// Order-sensitive content hash of the parameters.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.n_states.hash(&mut h);
        self.n_actions.hash(&mut h);
        for t in &self.theta {
            t.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// `policy_probs(theta, s)`.
pub fn policy_probs(policy: &SoftmaxPolicy, s: usize) -> Vec<f64> {
    policy.probs(s)
}

/// `policy_log_prob(theta, s, a)`.
pub fn policy_log_prob(policy: &SoftmaxPolicy, s: usize, a: usize) -> f64 {
    policy.log_prob(s, a)
}

#[inline]
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[inline]
pub fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Dense snapshot of a policy for fast sampling: probabilities, log-probabilities
/// and cumulative rows, all `S x A` row-major.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    n_actions: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl PolicyTable {
    pub fn from_policy(policy: &SoftmaxPolicy) -> Self {
        let (ns, na) = (policy.n_states(), policy.n_actions());
        let mut probs = vec![0.0; ns * na];
        let mut log_probs = vec![0.0; ns * na];
        let mut cdf = vec![0.0; ns * na];
        for s in 0..ns {
            let row = policy.theta_row(s);
            let lse = log_sum_exp(row);
            let mut acc = 0.0;
            for a in 0..na {
                let i = s * na + a;
                log_probs[i] = row[a] - lse;
                probs[i] = log_probs[i].exp();
                acc += probs[i];
                cdf[i] = acc;
            }
            // renormalize the tail so the last entry is exactly the row mass
            let total = cdf[s * na + na - 1];
            for c in &mut cdf[s * na..(s + 1) * na] {
                *c /= total;
            }
        }
        Self {
            n_actions: na,
            probs,
            log_probs,
            cdf,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        self.log_probs[s * self.n_actions + a]
    }

    pub fn prob_table(&self) -> &[f64] {
        &self.probs
    }

    /// Inverse-CDF action draw given a uniform `u` in `[0, 1)`.
    #[inline]
    pub fn sample_action(&self, s: usize, u: f64) -> usize {
        let row = &self.cdf[s * self.n_actions..(s + 1) * self.n_actions];
        row.partition_point(|&c| c <= u).min(self.n_actions - 1)
    }
}

/// One sampled episode. `states` has one more entry than `actions` and `rewards`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Checks length consistency and index ranges.
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 || self.rewards.len() != self.actions.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "trajectory lengths states={}, actions={}, rewards={}",
                self.states.len(),
                self.actions.len(),
                self.rewards.len()
            )));
        }
        if self.states.iter().any(|&s| s >= n_states) || self.actions.iter().any(|&a| a >= n_actions)
        {
            return Err(Error::ShapeMismatch("trajectory index out of range".into()));
        }
        Ok(())
    }
}

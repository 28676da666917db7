use rollin_core::exact::{mismatch_ratio, mixture_distributions, soft_value_iteration, visitation_distribution};
use rollin_core::fourroom::{default_layout, FourRoomEnv, RewardVariant};
use rollin_core::instances::{random_chain, random_policy};
use rollin_core::sampling::{sample_mixture_initial, MixtureMode, MixtureSpec, RngStream, SnapshotChain};
use rollin_core::spg::{run_trainer, FourRoomTrainer, Method, TrainConfig};
use rollin_core::tabular::{SoftmaxPolicy, StateDistribution, TabularMdp};
use rollin_core::verify::{context_distance, fourroom_contexts};

fn empirical(draws: impl Iterator<Item = usize>, n: usize) -> StateDistribution {
    let mut counts = vec![0.0; n];
    let mut total = 0.0;
    for s in draws {
        counts[s] += 1.0;
        total += 1.0;
    }
    StateDistribution::new(counts.iter().map(|c| c / total).collect()).unwrap()
}

fn solve(mdp: &TabularMdp, alpha: f64) -> SoftmaxPolicy {
    soft_value_iteration(mdp, alpha, 1e-10, 100_000).unwrap().policy()
}

/// `(ratio under rho, ratio under mu_k, cell where the mixture ratio peaks)` for the
/// four-room context `k` with the verify-suite settings (gamma 0.9, alpha 0.01,
/// rho = 0.9 start + 0.1 uniform, beta 0.75).
fn fourroom_ratios(variant: RewardVariant, k: usize) -> (f64, f64, (usize, usize)) {
    let layout = default_layout();
    let (mdp, rewards) = fourroom_contexts(&layout, variant, 0.9, 0.1).unwrap();
    let optimal: Vec<SoftmaxPolicy> = rewards[..=k]
        .iter()
        .map(|r| solve(&mdp.with_reward(r.clone()).unwrap(), 0.01))
        .collect();
    let rho = mdp.init_dist();
    let mus = mixture_distributions(&mdp, &optimal[..k], rho, 0.75, k).unwrap();
    let d_rho = visitation_distribution(&mdp, &optimal[k], rho).unwrap();
    let d_mix = visitation_distribution(&mdp, &optimal[k], &mus[k]).unwrap();
    let peak = (0..mdp.n_states())
        .max_by(|&a, &b| {
            let r = |s: usize| d_mix.probs()[s] / mus[k].probs()[s];
            r(a).total_cmp(&r(b))
        })
        .unwrap();
    (
        mismatch_ratio(&d_rho, rho).unwrap(),
        mismatch_ratio(&d_mix, &mus[k]).unwrap(),
        layout.cell(peak),
    )
}

#[test]
fn mixture_start_lowers_mismatch_under_easy_reward() {
    let (from_rho, from_mix, _) = fourroom_ratios(RewardVariant::Easy, 8);
    assert!(from_mix < from_rho, "mixture {from_mix} vs rho {from_rho}");
}

#[test]
fn hard_reward_mismatch_peaks_at_new_goal() {
    // The previous optimum parks on its own goal one cell short, so mu_k moves
    // mass there and shrinks rho's uniform share at the new goal by (1 - beta);
    // with the steep hard reward the new goal dominates d and the ratio grows.
    let (from_rho, from_mix, peak) = fourroom_ratios(RewardVariant::Hard, 8);
    assert_eq!(peak, default_layout().curriculum()[8]);
    assert!(from_mix > from_rho, "mixture {from_mix} vs rho {from_rho}");
}

#[test]
fn adjacent_fourroom_rewards_are_close() {
    let layout = default_layout();
    for (variant, bound) in [(RewardVariant::Hard, 0.5), (RewardVariant::Easy, 0.9f64.powi(5))] {
        // one goal step changes each reward by at most 1 - decay inside the
        // threshold, or by decay^threshold where it drops to zero
        let expected = (1.0 - variant.decay()).max(variant.decay().powi(variant.threshold() as i32));
        assert!((expected - bound).abs() < 1e-15);
        let (_, rewards) = fourroom_contexts(&layout, variant, 0.9, 0.1).unwrap();
        assert_eq!(rewards.len(), 17);
        for pair in rewards.windows(2) {
            let sup = pair[0].iter().zip(pair[1].iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!((sup - expected).abs() < 1e-12, "{variant:?}: {sup} vs {expected}");
            assert!(sup <= context_distance(&pair[0], &pair[1]));
        }
    }
}

#[test]
fn trainer_without_rollin_starts_at_start_cell() {
    let env = FourRoomEnv::new(default_layout(), RewardVariant::Easy);
    let config = TrainConfig {
        method: Method::Rollin,
        beta: 0.0,
        batch: 32,
        steps: 400,
        log_interval: 100,
        exact_value: false,
        ..Default::default()
    };
    let mut trainer = FourRoomTrainer::new(&env, &config, 5).unwrap().record_initial_states();
    let out = run_trainer(&env, &config, &mut trainer).unwrap();
    assert!(out.final_context >= 1, "{:?}", out.switches);
    let starts = trainer.initial_states().unwrap();
    assert_eq!(starts.len(), 32 * 400);
    assert!(starts.iter().all(|&s| s == env.start_state()));
}

#[test]
fn zero_beta_mixture_draws_follow_rho() {
    let (mdp, _) = fourroom_contexts(&default_layout(), RewardVariant::Hard, 0.9, 0.1).unwrap();
    let mut chain = SnapshotChain::new();
    for i in 0..3 {
        chain.push(random_policy(&mut RngStream::new(1, &[i]), mdp.n_states(), mdp.n_actions(), 1.0));
    }
    let spec = MixtureSpec {
        dynamics: mdp.dynamics(),
        rho: mdp.init_dist(),
        beta: 0.0,
        gamma: 0.9,
        mode: MixtureMode::Recursive,
    };
    let mut rng = RngStream::new(2, &[]);
    let emp = empirical((0..400_000).map(|_| sample_mixture_initial(&chain, 3, &spec, &mut rng).unwrap()), mdp.n_states());
    let tv = emp.total_variation(mdp.init_dist());
    assert!(tv <= 0.01, "TV {tv}");
}

#[test]
fn mixture_sampler_matches_exact_law_at_depth_one_and_two() {
    let mut rng = RngStream::new(17, &[0]);
    let mdp = random_chain(&mut rng, 6, 3, 2, 0.8);
    let policies: Vec<SoftmaxPolicy> = (0..2).map(|_| random_policy(&mut rng, 6, 3, 2.0)).collect();
    let mut chain = SnapshotChain::new();
    for p in &policies {
        chain.push(p.clone());
    }
    for mode in [MixtureMode::Recursive, MixtureMode::Shallow] {
        let beta = 0.6;
        let spec = MixtureSpec { dynamics: mdp.dynamics(), rho: mdp.init_dist(), beta, gamma: 0.8, mode };
        for k in 1..=2 {
            let exact = match mode {
                MixtureMode::Recursive => mixture_distributions(&mdp, &policies, mdp.init_dist(), beta, k).unwrap()[k].clone(),
                MixtureMode::Shallow => visitation_distribution(&mdp, &policies[k - 1], mdp.init_dist())
                    .unwrap()
                    .mix(mdp.init_dist(), beta)
                    .unwrap(),
            };
            let mut rng = RngStream::new(18, &[k as u64]);
            let emp = empirical((0..300_000).map(|_| sample_mixture_initial(&chain, k, &spec, &mut rng).unwrap()), 6);
            let tv = emp.total_variation(&exact);
            assert!(tv <= 0.005, "{mode:?} depth {k}: TV {tv}");
        }
    }
}

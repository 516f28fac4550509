mod common;

use common::rng;
use om2p::envs::{env_reset, env_step, expert_action, random_action, EnvKind, EnvSpec};
use om2p::meanflow::PolicyNet;
use om2p::trainer::{anchor_returns, evaluate_returns, mean_std};
use proptest::prelude::*;
use rand::Rng;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[test]
fn landmarks_cover_every_quadrant() {
    let spec = EnvSpec::coop_nav_lite();
    let mut seen = [0usize; 4];
    for seed in 0..1000 {
        let (state, _) = env_reset(&spec, seed).unwrap();
        for p in &state.target_pos {
            let q = (p[0] >= 0.0) as usize + 2 * (p[1] >= 0.0) as usize;
            seen[q] += 1;
        }
    }
    let total: usize = seen.iter().sum();
    for (q, &c) in seen.iter().enumerate() {
        // Each quadrant holds a quarter of the draws; allow five binomial sds.
        let expected = total as f64 / 4.0;
        let sd = (total as f64 * 0.25 * 0.75).sqrt();
        assert!(
            (c as f64 - expected).abs() < 5.0 * sd,
            "quadrant {q}: {c} of {total}"
        );
    }
}

#[test]
fn expert_beats_random_by_five_standard_errors() {
    for spec in [EnvSpec::coop_nav_lite(), EnvSpec::predator_prey_lite()] {
        let (expert, random) = anchor_returns(&spec, 100, 77).unwrap();
        let (me, se) = mean_std(&expert);
        let (mr, sr) = mean_std(&random);
        let pooled = ((se * se + sr * sr) / 100.0).sqrt();
        assert!(
            me - mr >= 5.0 * pooled,
            "{}: {me} vs {mr} (se {pooled})",
            spec.kind
        );
        // Every individual seed as well.
        let wins = expert.iter().zip(&random).filter(|(e, r)| e > r).count();
        assert!(wins >= 90, "{}: expert won {wins} of 100", spec.kind);
    }
}

#[test]
fn zero_policies_act_like_clipped_gaussian_noise() {
    let spec = EnvSpec::coop_nav_lite();
    let zero: Vec<PolicyNet> = (0..spec.n_agents)
        .map(|i| {
            let p = PolicyNet::new(spec.obs_dim(), spec.act_dim(), &[8, 8], i as u64).unwrap();
            PolicyNet::from_params(spec.obs_dim(), spec.act_dim(), p.params().zeros_like()).unwrap()
        })
        .collect();
    let episodes = 100;
    let ours = evaluate_returns(&zero, &spec, episodes, 5).unwrap();
    let mut r = rng(6);
    let baseline: Vec<f64> = (0..episodes as u64)
        .map(|ep| {
            om2p::envs::rollout_return(&spec, 10_000 + ep, |_, obs| {
                Ok(obs
                    .iter()
                    .map(|_| {
                        (0..2)
                            .map(|_| {
                                let z: f64 = r.sample(rand_distr::StandardNormal);
                                z.clamp(-1.0, 1.0)
                            })
                            .collect()
                    })
                    .collect())
            })
            .unwrap()
        })
        .collect();
    let (m1, s1) = mean_std(&ours);
    let (m2, s2) = mean_std(&baseline);
    let pooled = ((s1 * s1 + s2 * s2) / episodes as f64).sqrt();
    assert!((m1 - m2).abs() < 2.0 * pooled, "{m1} vs {m2} (se {pooled})");
}

#[test]
fn evaluation_is_seeded_and_single_episode_std_is_zero() {
    let spec = EnvSpec::coop_nav_lite();
    let policies: Vec<PolicyNet> = (0..3)
        .map(|i| PolicyNet::new(spec.obs_dim(), spec.act_dim(), &[8, 8], i).unwrap())
        .collect();
    let a = evaluate_returns(&policies, &spec, 4, 9).unwrap();
    let b = evaluate_returns(&policies, &spec, 4, 9).unwrap();
    assert_eq!(a, b);
    let one = om2p::trainer::evaluate(&policies, &spec, 1, 9).unwrap();
    assert_eq!(one.1, 0.0);
}

#[test]
fn chain_oracle_has_no_particles() {
    let spec = EnvSpec::for_kind(EnvKind::ChainOracle);
    let (mut state, obs) = env_reset(&spec, 0).unwrap();
    assert_eq!(obs, vec![vec![1.0]]);
    let step = env_step(&mut state, &[vec![0.3]]).unwrap();
    assert_eq!(step.rewards, vec![1.0]);
    assert!(expert_action(&state, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_are_determined_by_seed_and_actions(seed in 0u64..10_000, act_seed in 0u64..10_000) {
        for spec in [EnvSpec::coop_nav_lite(), EnvSpec::predator_prey_lite()] {
            let run = || {
                let mut r = rng(act_seed);
                let (mut s, _) = env_reset(&spec, seed).unwrap();
                let mut trace = Vec::new();
                loop {
                    let actions: Vec<Vec<f64>> = (0..spec.n_agents).map(|_| random_action(&spec, &mut r)).collect();
                    let res = env_step(&mut s, &actions).unwrap();
                    trace.push((res.obs.clone(), res.team_reward()));
                    let half = spec.arena_half_width;
                    assert!(s.agent_pos.iter().all(|p| p[0].abs() <= half && p[1].abs() <= half));
                    if res.done {
                        assert_eq!(s.step, spec.horizon);
                        return trace;
                    }
                    assert!(s.step < spec.horizon);
                }
            };
            prop_assert_eq!(run(), run());
        }
    }

    #[test]
    fn coop_reward_is_lipschitz_in_positions(seed in 0u64..10_000) {
        let spec = EnvSpec::coop_nav_lite();
        // Each coverage distance moves at most as far as the agents do.
        let lipschitz = spec.n_landmarks as f64;
        let overlaps = |pos: &[[f64; 2]]| {
            let mut k = 0;
            for i in 0..pos.len() {
                for j in i + 1..pos.len() {
                    if dist(pos[i], pos[j]) < 2.0 * spec.agent_radius {
                        k += 1;
                    }
                }
            }
            k
        };
        let mut r = rng(seed);
        let (mut s, _) = env_reset(&spec, seed).unwrap();
        let mut prev: Option<(Vec<[f64; 2]>, f64)> = None;
        loop {
            let actions: Vec<Vec<f64>> = (0..spec.n_agents).map(|_| random_action(&spec, &mut r)).collect();
            let res = env_step(&mut s, &actions).unwrap();
            let pos = s.agent_pos.clone();
            let reward = res.team_reward();
            if let Some((p0, r0)) = &prev {
                if overlaps(p0) == 0 && overlaps(&pos) == 0 {
                    let moved = p0.iter().zip(&pos).map(|(a, b)| dist(*a, *b)).fold(0.0, f64::max);
                    prop_assert!((reward - r0).abs() <= lipschitz * moved + 1e-12);
                }
            }
            prev = Some((pos, reward));
            if res.done {
                break;
            }
        }
    }
}

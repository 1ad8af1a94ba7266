//! Seeded episode and batch sampling.
//!
//! One root seed drives a run; per-episode generators are derived by counter
//! so episode i of a batch is reproducible in isolation and sampling order
//! never matters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::mdp::{DiscreteMdp, PolicyMixture, TabularPolicy, Transition, TrajectoryBatch};

/// SplitMix64 step; used to derive independent sub-seeds from a root seed.
pub fn derive_seed(root: u64, salt: u64) -> u64 {
    let mut z = root ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Draws an index from a probability row.
pub(crate) fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Guard against accumulated rounding in the row sum.
    probs.len() - 1
}

/// Samples one fixed-horizon episode. The start state is drawn from rho0;
/// each step draws a ~ pi(.|s), s' ~ P(.|s,a) and records r = R(s') with the
/// 1-based step index t. The same seed reproduces the same episode.
pub fn sample_episode(
    mdp: &DiscreteMdp,
    policy: &TabularPolicy,
    horizon: usize,
    seed: u64,
) -> Vec<Transition> {
    assert!(horizon >= 1, "horizon must be >= 1");
    let mut rng = seeded_rng(seed);
    sample_episode_rng(mdp, policy, horizon, &mut rng)
}

fn sample_episode_rng(
    mdp: &DiscreteMdp,
    policy: &TabularPolicy,
    horizon: usize,
    rng: &mut impl Rng,
) -> Vec<Transition> {
    let mut episode = Vec::with_capacity(horizon);
    let mut s = sample_index(rng, mdp.rho0());
    for t in 1..=horizon {
        let a = sample_index(rng, policy.action_row(s));
        let s_next = sample_index(rng, mdp.transition_row(s, a));
        episode.push(Transition {
            s,
            a,
            r: mdp.reward(s_next),
            s_next,
            t,
        });
        s = s_next;
    }
    episode
}

/// Samples a batch of `n_t` episodes from a policy mixture: one component is
/// drawn per episode by mixture weight, then followed for all `horizon`
/// steps. Episode i uses the derived seed `derive_seed(seed, i)`, so the
/// batch equals `n_t` independent [`sample_episode`] calls.
pub fn sample_batch(
    mdp: &DiscreteMdp,
    mixture: &PolicyMixture,
    n_t: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    assert!(n_t >= 1, "batch needs at least one episode");
    let weights = mixture.weights();
    let mut component_rng = seeded_rng(derive_seed(seed, u64::MAX));
    let source: Vec<usize> = (0..n_t)
        .map(|_| sample_index(&mut component_rng, &weights))
        .collect();
    let episodes: Vec<Vec<Transition>> = source
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let policy = &mixture.components()[c].0;
            sample_episode(mdp, policy, horizon, derive_seed(seed, i as u64))
        })
        .collect();
    TrajectoryBatch::new(episodes, horizon, mdp.num_states(), seed, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::PolicyMixture;

    fn chain_mdp() -> DiscreteMdp {
        DiscreteMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![false, true],
            0.5,
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn deterministic_chain_forces_path() {
        let mdp = chain_mdp();
        let policy = TabularPolicy::uniform(2, 1);
        let ep = sample_episode(&mdp, &policy, 2, 3);
        assert_eq!(
            ep,
            vec![
                Transition { s: 0, a: 0, r: 1.0, s_next: 1, t: 1 },
                Transition { s: 1, a: 0, r: 1.0, s_next: 1, t: 2 },
            ]
        );
    }

    #[test]
    fn horizon_one_gives_single_transition() {
        let mdp = chain_mdp();
        let policy = TabularPolicy::uniform(2, 1);
        let ep = sample_episode(&mdp, &policy, 1, 11);
        assert_eq!(ep.len(), 1);
        assert_eq!(ep[0].t, 1);
    }

    #[test]
    fn same_seed_same_episode() {
        let mdp = DiscreteMdp::new(
            vec![
                vec![vec![0.5, 0.5], vec![0.2, 0.8]],
                vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            ],
            vec![false, true],
            0.9,
            vec![0.5, 0.5],
        )
        .unwrap();
        let policy = TabularPolicy::uniform(2, 2);
        let a = sample_episode(&mdp, &policy, 50, 42);
        let b = sample_episode(&mdp, &policy, 50, 42);
        assert_eq!(a, b);
        let c = sample_episode(&mdp, &policy, 50, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn single_component_batch_matches_episode_calls() {
        let mdp = chain_mdp();
        let policy = TabularPolicy::uniform(2, 1);
        let mixture = PolicyMixture::single(policy.clone());
        let batch = sample_batch(&mdp, &mixture, 5, 4, 9).unwrap();
        for (i, ep) in batch.episodes().iter().enumerate() {
            let expected = sample_episode(&mdp, &policy, 4, derive_seed(9, i as u64));
            assert_eq!(ep, &expected);
        }
        assert!(batch.source().iter().all(|&c| c == 0));
    }

    #[test]
    fn degenerate_weights_use_only_first_component() {
        let mdp = chain_mdp();
        let mix = PolicyMixture::new(vec![
            (TabularPolicy::uniform(2, 1), 1.0),
            (TabularPolicy::uniform(2, 1), 0.0),
        ])
        .unwrap();
        let batch = sample_batch(&mdp, &mix, 100, 2, 5).unwrap();
        assert!(batch.source().iter().all(|&c| c == 0));
    }

    #[test]
    fn component_counts_concentrate_binomially() {
        // 50/50 mixture, N_T = 10_000: each count within 3 sigma of 5000.
        let mdp = chain_mdp();
        let mix = PolicyMixture::new(vec![
            (TabularPolicy::uniform(2, 1), 0.5),
            (TabularPolicy::uniform(2, 1), 0.5),
        ])
        .unwrap();
        let batch = sample_batch(&mdp, &mix, 10_000, 1, 123).unwrap();
        let first = batch.source().iter().filter(|&&c| c == 0).count() as f64;
        let sigma = (10_000.0_f64 * 0.25).sqrt();
        assert!((first - 5000.0).abs() <= 3.0 * sigma, "count {first}");
    }

    #[test]
    fn batch_is_reproducible() {
        let mdp = chain_mdp();
        let mix = PolicyMixture::single(TabularPolicy::uniform(2, 1));
        let a = sample_batch(&mdp, &mix, 20, 3, 77).unwrap();
        let b = sample_batch(&mdp, &mix, 20, 3, 77).unwrap();
        assert_eq!(a.episodes(), b.episodes());
        assert_eq!(a.source(), b.source());
    }
}

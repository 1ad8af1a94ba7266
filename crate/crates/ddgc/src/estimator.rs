//! Empirical discounted visitation estimation, the visitation-derived custom
//! reward, batch relabeling, and the goal buffer.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Transition, TrajectoryBatch};

/// Which state a transition contributes to the visitation count.
///
/// `NextState` counts s' at weight gamma^(t-1), so episode weight covers
/// steps 1..H. `CurrentState` counts s at the same weights, which is the
/// t = 0..H-1 convention that includes the start state; the concentration
/// bound is proved for this one. Both share the normalization
/// (1 - gamma) / (N_T (1 - gamma^H)), making the estimate sum to exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorConvention {
    #[default]
    NextState,
    CurrentState,
}

/// Normalized discounted state visitation frequency.
#[derive(Debug, Clone)]
pub struct VisitationEstimate {
    d_hat: Vec<f64>,
    horizon: usize,
    num_trajectories: usize,
    gamma: f64,
}

impl VisitationEstimate {
    pub fn d_hat(&self) -> &[f64] {
        &self.d_hat
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_trajectories(&self) -> usize {
        self.num_trajectories
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Estimates the discounted visitation frequency of a batch.
pub fn estimate_d(
    batch: &TrajectoryBatch,
    gamma: f64,
    convention: EstimatorConvention,
) -> Result<VisitationEstimate> {
    if batch.num_trajectories() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n_t = batch.num_trajectories() as f64;
    let h = batch.horizon() as i32;
    let norm = (1.0 - gamma) / (n_t * (1.0 - gamma.powi(h)));
    let mut d_hat = vec![0.0; batch.num_states()];
    for tr in batch.transitions() {
        let s = match convention {
            EstimatorConvention::NextState => tr.s_next,
            EstimatorConvention::CurrentState => tr.s,
        };
        d_hat[s] += norm * gamma.powi(tr.t as i32 - 1);
    }
    Ok(VisitationEstimate {
        d_hat,
        horizon: batch.horizon(),
        num_trajectories: batch.num_trajectories(),
        gamma,
    })
}

/// Custom reward table: 1 - d_hat(s) on goal states, 0 elsewhere.
pub fn custom_reward(d_hat: &VisitationEstimate, goal_mask: &[bool]) -> Vec<f64> {
    d_hat
        .d_hat()
        .iter()
        .zip(goal_mask)
        .map(|(d, &g)| if g { 1.0 - d } else { 0.0 })
        .collect()
}

/// Replaces every transition reward with `reward_fn(s_next)`; step indices
/// are kept so the batch stays a valid trajectory batch.
pub fn relabel(batch: &TrajectoryBatch, reward_fn: impl Fn(usize) -> f64) -> TrajectoryBatch {
    let episodes = batch
        .episodes()
        .iter()
        .map(|ep| {
            ep.iter()
                .map(|tr| Transition {
                    r: reward_fn(tr.s_next),
                    ..*tr
                })
                .collect()
        })
        .collect();
    TrajectoryBatch::new(
        episodes,
        batch.horizon(),
        batch.num_states(),
        batch.rng_seed(),
        batch.source().to_vec(),
    )
    .expect("relabel preserves batch structure")
}

/// Episode identity inside a goal buffer: (batch seed, episode index).
pub type EpisodeId = (u64, usize);

/// Persistent store of goal-reaching episodes. Insertion is idempotent per
/// episode identity; with a capacity set, whole episodes are evicted FIFO.
#[derive(Debug, Clone)]
pub struct GoalBuffer<T: Clone> {
    episodes: Vec<(EpisodeId, Vec<T>)>,
    seen: HashSet<EpisodeId>,
    capacity: Option<usize>,
    inserted: usize,
}

impl<T: Clone> Default for GoalBuffer<T> {
    fn default() -> Self {
        Self::new(None)
    }
}

impl<T: Clone> GoalBuffer<T> {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            episodes: Vec::new(),
            seen: HashSet::new(),
            capacity,
            inserted: 0,
        }
    }

    /// Stores one episode if its extrinsic return is positive and it has not
    /// been stored before.
    pub fn insert_episode(&mut self, id: EpisodeId, episode: &[T], extrinsic_return: f64) {
        if extrinsic_return <= 0.0 || self.seen.contains(&id) {
            return;
        }
        self.seen.insert(id);
        self.episodes.push((id, episode.to_vec()));
        self.inserted += 1;
        if let Some(cap) = self.capacity {
            while self.episodes.len() > cap {
                self.episodes.remove(0);
            }
        }
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn insertions(&self) -> usize {
        self.inserted
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &T> {
        self.episodes.iter().flat_map(|(_, ep)| ep.iter())
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(|(_, ep)| ep.len()).sum()
    }
}

/// Appends all goal-reaching episodes of a discrete batch (per the rewards
/// the batch carries, which must be extrinsic).
pub fn goal_buffer_update(buffer: &mut GoalBuffer<Transition>, batch: &TrajectoryBatch) {
    for (idx, ep) in batch.episodes().iter().enumerate() {
        buffer.insert_episode((batch.rng_seed(), idx), ep, batch.episode_return(idx));
    }
}

/// Cell index of a fixed-precision rounding discretizer: floor(x * precision)
/// per coordinate.
pub fn discretize_2d(s: [f64; 2], precision: f64) -> (i64, i64) {
    (
        (s[0] * precision).floor() as i64,
        (s[1] * precision).floor() as i64,
    )
}

/// Discounted visitation frequency over discretized cells.
#[derive(Debug, Clone, Default)]
pub struct CellVisitation {
    weights: BTreeMap<(i64, i64), f64>,
}

impl CellVisitation {
    pub fn get(&self, cell: (i64, i64)) -> f64 {
        self.weights.get(&cell).copied().unwrap_or(0.0)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(i64, i64), &f64)> {
        self.weights.iter()
    }

    pub fn num_cells(&self) -> usize {
        self.weights.len()
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// Cell-level analogue of [`estimate_d`] for continuous state batches. Each
/// `(state, t)` pair contributes weight gamma^(t-1) to its cell under the
/// chosen convention.
pub fn estimate_d_cells<'a>(
    episodes: impl Iterator<Item = &'a [crate::envs::ContTransition]>,
    num_trajectories: usize,
    horizon: usize,
    gamma: f64,
    precision: f64,
    convention: EstimatorConvention,
) -> Result<CellVisitation> {
    if num_trajectories == 0 {
        return Err(Error::EmptyBatch);
    }
    let norm = (1.0 - gamma) / (num_trajectories as f64 * (1.0 - gamma.powi(horizon as i32)));
    let mut weights = BTreeMap::new();
    for ep in episodes {
        for tr in ep {
            let s = match convention {
                EstimatorConvention::NextState => tr.s_next,
                EstimatorConvention::CurrentState => tr.s,
            };
            *weights.entry(discretize_2d(s, precision)).or_insert(0.0) +=
                norm * gamma.powi(tr.t as i32 - 1);
        }
    }
    Ok(CellVisitation { weights })
}

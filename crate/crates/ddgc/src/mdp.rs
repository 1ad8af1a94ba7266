//! Finite MDPs, tabular policies, policy mixtures, and trajectory batches.
//!
//! A [`DiscreteMdp`] is the tuple (S, A, R, gamma, P, rho0) with a binary
//! state reward R(s) = 1 iff s is a goal state. Policies are row-stochastic
//! action tables; a [`PolicyMixture`] is a weighted finite collection of
//! policies, followed by sampling one component per episode.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const MIXTURE_SUM_TOL: f64 = 1e-10;

/// Finite MDP with a state-only binary reward.
#[derive(Debug, Clone)]
pub struct DiscreteMdp {
    num_states: usize,
    num_actions: usize,
    /// transition[s][a] is a probability row over next states.
    transition: Vec<Vec<Vec<f64>>>,
    /// goal[s] marks membership in the goal set S+.
    goal: Vec<bool>,
    gamma: f64,
    rho0: Vec<f64>,
}

impl DiscreteMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        goal: Vec<bool>,
        gamma: f64,
        rho0: Vec<f64>,
    ) -> Result<Self> {
        let num_states = transition.len();
        if num_states == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        let num_actions = transition[0].len();
        if num_actions == 0 {
            return Err(Error::InvalidMdp("no actions".into()));
        }
        if goal.len() != num_states || rho0.len() != num_states {
            return Err(Error::InvalidMdp(
                "goal/rho0 length does not match state count".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != num_actions {
                return Err(Error::InvalidMdp(format!(
                    "state {s} has {} action rows, expected {num_actions}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::InvalidMdp(format!(
                        "transition row ({s},{a}) has wrong length"
                    )));
                }
                validate_prob_row(row, ROW_SUM_TOL)
                    .map_err(|m| Error::InvalidMdp(format!("transition row ({s},{a}): {m}")))?;
            }
        }
        validate_prob_row(&rho0, ROW_SUM_TOL)
            .map_err(|m| Error::InvalidMdp(format!("rho0: {m}")))?;
        Ok(Self {
            num_states,
            num_actions,
            transition,
            goal,
            gamma,
            rho0,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn goal_mask(&self) -> &[bool] {
        &self.goal
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goal[s]
    }

    /// Goal states in ascending order.
    pub fn goal_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.goal[s]).collect()
    }

    /// Extrinsic reward R(s) = 1 iff s is a goal state.
    pub fn reward(&self, s: usize) -> f64 {
        if self.goal[s] {
            1.0
        } else {
            0.0
        }
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    /// Returns a copy with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            self.goal.clone(),
            gamma,
            self.rho0.clone(),
        )
    }

    /// State-to-state kernel under a fixed policy:
    /// P_pi[s][s'] = sum_a pi(a|s) P[s][a][s'].
    pub fn policy_kernel(&self, policy: &TabularPolicy) -> Vec<Vec<f64>> {
        let mut kernel = vec![vec![0.0; self.num_states]; self.num_states];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let p_a = policy.prob(s, a);
                if p_a == 0.0 {
                    continue;
                }
                for (s_next, &p) in self.transition[s][a].iter().enumerate() {
                    kernel[s][s_next] += p_a * p;
                }
            }
        }
        kernel
    }

    pub fn save_toml(&self, path: &Path) -> Result<()> {
        let file = MdpFile::from_mdp(self);
        let text = toml::to_string(&file).map_err(|e| Error::ConfigParse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: MdpFile =
            toml::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        file.into_mdp()
    }
}

fn validate_prob_row(row: &[f64], tol: f64) -> std::result::Result<(), String> {
    let mut sum = 0.0;
    for &p in row {
        if !(p >= 0.0) {
            return Err(format!("negative or NaN entry {p}"));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > tol {
        return Err(format!("row sums to {sum}, expected 1"));
    }
    Ok(())
}

/// On-disk MDP definition.
///
/// Schema (TOML): `states`, `actions`, `gamma`, `goals` (state id list),
/// `rho0` (probability vector over states), and `transitions`, a list of
/// `[s, a, s_next, prob]` rows. Rows for each (s, a) must sum to 1; omitted
/// (s, a, s') entries have probability 0.
#[derive(Debug, Serialize, Deserialize)]
struct MdpFile {
    states: usize,
    actions: usize,
    gamma: f64,
    goals: Vec<usize>,
    rho0: Vec<f64>,
    transitions: Vec<(usize, usize, usize, f64)>,
}

impl MdpFile {
    fn from_mdp(mdp: &DiscreteMdp) -> Self {
        let mut transitions = Vec::new();
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                for (s_next, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        transitions.push((s, a, s_next, p));
                    }
                }
            }
        }
        Self {
            states: mdp.num_states,
            actions: mdp.num_actions,
            gamma: mdp.gamma,
            goals: mdp.goal_states(),
            rho0: mdp.rho0.clone(),
            transitions,
        }
    }

    fn into_mdp(self) -> Result<DiscreteMdp> {
        if self.states == 0 || self.actions == 0 {
            return Err(Error::InvalidMdp("states and actions must be positive".into()));
        }
        let mut transition = vec![vec![vec![0.0; self.states]; self.actions]; self.states];
        for (s, a, s_next, p) in &self.transitions {
            if *s >= self.states || *a >= self.actions || *s_next >= self.states {
                return Err(Error::InvalidMdp(format!(
                    "transition ({s},{a},{s_next}) out of range"
                )));
            }
            transition[*s][*a][*s_next] += p;
        }
        let goals: BTreeSet<usize> = self.goals.into_iter().collect();
        if let Some(&bad) = goals.iter().find(|&&g| g >= self.states) {
            return Err(Error::InvalidMdp(format!("goal state {bad} out of range")));
        }
        let goal = (0..self.states).map(|s| goals.contains(&s)).collect();
        DiscreteMdp::new(transition, goal, self.gamma, self.rho0)
    }
}

/// Stochastic tabular policy: probs[s] is a probability row over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPolicy("no states".into()));
        }
        let num_actions = probs[0].len();
        for (s, row) in probs.iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::InvalidPolicy(format!("ragged row at state {s}")));
            }
            validate_prob_row(row, ROW_SUM_TOL)
                .map_err(|m| Error::InvalidPolicy(format!("state {s}: {m}")))?;
        }
        Ok(Self { probs })
    }

    /// Uniform-random policy.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            probs: vec![vec![p; num_actions]; num_states],
        }
    }

    /// Deterministic policy taking `actions[s]` in state s.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn action_row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }
}

/// Weighted finite collection of policies; weights sum to 1.
#[derive(Debug, Clone)]
pub struct PolicyMixture {
    components: Vec<(TabularPolicy, f64)>,
}

impl PolicyMixture {
    pub fn new(components: Vec<(TabularPolicy, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        let mut sum = 0.0;
        for (_, w) in &components {
            if !(*w >= 0.0) {
                return Err(Error::InvalidMixture(format!("negative weight {w}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > MIXTURE_SUM_TOL {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    /// Point mass on a single policy.
    pub fn single(policy: TabularPolicy) -> Self {
        Self {
            components: vec![(policy, 1.0)],
        }
    }

    pub fn components(&self) -> &[(TabularPolicy, f64)] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(_, w)| *w).collect()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Frank-Wolfe mixture update for iteration k >= 1: existing weights are
    /// scaled by 1 - lambda_k and `new_policy` is appended with weight
    /// lambda_k, where lambda_k = 2/(k+1). For k = 1 the result is a point
    /// mass on the new policy.
    pub fn update(&self, new_policy: TabularPolicy, k: usize) -> PolicyMixture {
        assert!(k >= 1, "mixture update step must be >= 1");
        let lambda = 2.0 / (k as f64 + 1.0);
        let mut components: Vec<(TabularPolicy, f64)> = self
            .components
            .iter()
            .map(|(p, w)| (p.clone(), w * (1.0 - lambda)))
            .collect();
        components.push((new_policy, lambda));
        PolicyMixture { components }
    }
}

/// Frank-Wolfe mixture update; see [`PolicyMixture::update`].
pub fn mixture_update(old: &PolicyMixture, new_policy: TabularPolicy, k: usize) -> PolicyMixture {
    old.update(new_policy, k)
}

/// One environment step: in state `s` action `a` led to `s_next` with reward
/// `r`; `t` is the 1-based step index within the episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub t: usize,
}

/// A set of fixed-horizon episodes with generation metadata.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    episodes: Vec<Vec<Transition>>,
    horizon: usize,
    num_states: usize,
    rng_seed: u64,
    /// Mixture component that generated each episode.
    source: Vec<usize>,
}

impl TrajectoryBatch {
    pub fn new(
        episodes: Vec<Vec<Transition>>,
        horizon: usize,
        num_states: usize,
        rng_seed: u64,
        source: Vec<usize>,
    ) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if source.len() != episodes.len() {
            return Err(Error::InvalidBatch(
                "source metadata length does not match episode count".into(),
            ));
        }
        for (i, ep) in episodes.iter().enumerate() {
            if ep.len() != horizon {
                return Err(Error::InvalidBatch(format!(
                    "episode {i} has {} transitions, expected horizon {horizon}",
                    ep.len()
                )));
            }
            for (j, tr) in ep.iter().enumerate() {
                if tr.t != j + 1 {
                    return Err(Error::InvalidBatch(format!(
                        "episode {i} step {j} carries t={}, expected {}",
                        tr.t,
                        j + 1
                    )));
                }
                if tr.s >= num_states || tr.s_next >= num_states {
                    return Err(Error::InvalidBatch(format!(
                        "episode {i} step {j} references out-of-range state"
                    )));
                }
                if j > 0 && ep[j - 1].s_next != tr.s {
                    return Err(Error::InvalidBatch(format!(
                        "episode {i} breaks the chain at step {j}"
                    )));
                }
            }
        }
        Ok(Self {
            episodes,
            horizon,
            num_states,
            rng_seed,
            source,
        })
    }

    pub fn episodes(&self) -> &[Vec<Transition>] {
        &self.episodes
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_trajectories(&self) -> usize {
        self.episodes.len()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flatten()
    }

    /// Undiscounted sum of recorded rewards in one episode.
    pub fn episode_return(&self, idx: usize) -> f64 {
        self.episodes[idx].iter().map(|tr| tr.r).sum()
    }

    /// Concatenates two batches of the same horizon and state space; the
    /// result keeps this batch's seed.
    pub fn merged(&self, other: &TrajectoryBatch) -> Result<TrajectoryBatch> {
        if self.horizon != other.horizon || self.num_states != other.num_states {
            return Err(Error::InvalidBatch(
                "merged batches must share horizon and state space".into(),
            ));
        }
        let mut episodes = self.episodes.clone();
        episodes.extend(other.episodes.iter().cloned());
        let mut source = self.source.clone();
        source.extend(other.source.iter().copied());
        TrajectoryBatch::new(episodes, self.horizon, self.num_states, self.rng_seed, source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_mdp(gamma: f64) -> DiscreteMdp {
        // s0 -> s1 under every action, s1 absorbing, S+ = {s1}.
        DiscreteMdp::new(
            vec![
                vec![vec![0.0, 1.0]],
                vec![vec![0.0, 1.0]],
            ],
            vec![false, true],
            gamma,
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn mdp_validation_rejects_bad_rows() {
        let err = DiscreteMdp::new(
            vec![vec![vec![0.5, 0.4]], vec![vec![0.0, 1.0]]],
            vec![false, true],
            0.9,
            vec![1.0, 0.0],
        );
        assert!(matches!(err, Err(Error::InvalidMdp(_))));

        let err = DiscreteMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![false, true],
            1.0,
            vec![1.0, 0.0],
        );
        assert!(matches!(err, Err(Error::InvalidMdp(_))));

        let err = DiscreteMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![false, true],
            0.9,
            vec![0.7, 0.2],
        );
        assert!(matches!(err, Err(Error::InvalidMdp(_))));
    }

    #[test]
    fn policy_validation() {
        assert!(TabularPolicy::new(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).is_ok());
        assert!(TabularPolicy::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(TabularPolicy::new(vec![vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn mixture_update_first_step_is_point_mass() {
        let old = PolicyMixture::single(TabularPolicy::uniform(2, 2));
        let new = TabularPolicy::deterministic(&[0, 0], 2);
        let updated = old.update(new.clone(), 1);
        let weights = updated.weights();
        assert_eq!(weights.len(), 2);
        assert_eq!(weights[0], 0.0);
        assert_eq!(weights[1], 1.0);
        assert_eq!(updated.components()[1].0, new);
    }

    #[test]
    fn mixture_update_matches_hand_recurrence() {
        // k=2 on a single-component mixture: weights (1/3, 2/3).
        let m = PolicyMixture::single(TabularPolicy::uniform(1, 2));
        let m = m.update(TabularPolicy::deterministic(&[0], 2), 2);
        let w = m.weights();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);

        // k=3 on that result: weights (1/6, 1/3, 1/2).
        let m = m.update(TabularPolicy::deterministic(&[1], 2), 3);
        let w = m.weights();
        assert!((w[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[2] - 1.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mixture_weight_closed_form_after_many_updates() {
        // After K updates the step-k policy carries weight 2k/(K(K+1)).
        let k_total = 40;
        let mut m = PolicyMixture::single(TabularPolicy::uniform(1, 1));
        for k in 1..=k_total {
            m = m.update(TabularPolicy::uniform(1, 1), k);
        }
        let w = m.weights();
        assert_eq!(w.len(), k_total + 1);
        assert_eq!(w[0], 0.0);
        let denom = (k_total * (k_total + 1)) as f64;
        for k in 1..=k_total {
            let expected = 2.0 * k as f64 / denom;
            assert!(
                (w[k] - expected).abs() < 1e-12,
                "step {k}: {} vs {expected}",
                w[k]
            );
        }
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn batch_validation_checks_chain_and_horizon() {
        let good = vec![vec![
            Transition { s: 0, a: 0, r: 1.0, s_next: 1, t: 1 },
            Transition { s: 1, a: 0, r: 1.0, s_next: 1, t: 2 },
        ]];
        assert!(TrajectoryBatch::new(good.clone(), 2, 2, 7, vec![0]).is_ok());

        let mut broken = good.clone();
        broken[0][1].s = 0;
        assert!(TrajectoryBatch::new(broken, 2, 2, 7, vec![0]).is_err());

        let mut bad_t = good;
        bad_t[0][1].t = 3;
        assert!(TrajectoryBatch::new(bad_t, 2, 2, 7, vec![0]).is_err());
    }

    #[test]
    fn mdp_file_round_trip() {
        let mdp = chain_mdp(0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.toml");
        mdp.save_toml(&path).unwrap();
        let loaded = DiscreteMdp::load_toml(&path).unwrap();
        assert_eq!(loaded.num_states(), 2);
        assert_eq!(loaded.num_actions(), 1);
        assert_eq!(loaded.goal_states(), vec![1]);
        assert_eq!(loaded.gamma(), 0.5);
        for s in 0..2 {
            for a in 0..1 {
                assert_eq!(loaded.transition_row(s, a), mdp.transition_row(s, a));
            }
        }
    }

    #[test]
    fn mdp_file_rejects_incomplete_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(
            &path,
            "states = 2\nactions = 1\ngamma = 0.5\ngoals = [1]\nrho0 = [1.0, 0.0]\ntransitions = [[0, 0, 1, 0.5]]\n",
        )
        .unwrap();
        assert!(DiscreteMdp::load_toml(&path).is_err());
    }
}

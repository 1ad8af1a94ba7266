//! Tabular comparison algorithms: count-bonus Q-learning, the uniform
//! random policy, and a density-matching mixture baseline.

use rand::Rng;

use crate::algorithm::{DhatSnapshot, IterationTrace};
use crate::batch_rl::{fqi_tabular, greedy_policy, QTable};
use crate::error::Result;
use crate::estimator::{estimate_d, relabel, EstimatorConvention};
use crate::exact::{exact_d, exact_d_mixture, objective, ObjectiveReport};
use crate::mdp::{DiscreteMdp, PolicyMixture, TabularPolicy};
use crate::sampling::{derive_seed, sample_batch, sample_index, seeded_rng};

/// Per-state visit counts of an online run.
#[derive(Debug, Clone)]
pub struct CountTable {
    counts: Vec<u64>,
}

impl CountTable {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct QCountConfig {
    pub steps: usize,
    pub alpha: f64,
    pub bonus_scale: f64,
    pub gamma: f64,
    /// The run resets to the start distribution every `episode_horizon`
    /// steps.
    pub episode_horizon: usize,
    /// Behavior is epsilon-greedy with epsilon annealed linearly over the
    /// run from `epsilon_start` to `epsilon_end`.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl QCountConfig {
    pub fn new(steps: usize, alpha: f64, bonus_scale: f64, gamma: f64) -> Self {
        Self {
            steps,
            alpha,
            bonus_scale,
            gamma,
            episode_horizon: 30,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
        }
    }
}

/// Online Q-learning with a count-based exploration bonus.
///
/// The behavior value table learns from r + bonus_scale / sqrt(max(1, N(s')))
/// and drives epsilon-greedy action selection; a second table learns from the
/// extrinsic reward alone and defines the returned greedy policy (ties to the
/// lowest action id).
pub fn q_learning_count_bonus(
    mdp: &DiscreteMdp,
    cfg: &QCountConfig,
    seed: u64,
) -> (TabularPolicy, CountTable) {
    let (num_states, num_actions) = (mdp.num_states(), mdp.num_actions());
    let mut q_behavior = vec![vec![0.0; num_actions]; num_states];
    let mut q_extrinsic = QTable::zeros(num_states, num_actions, cfg.gamma);
    let mut counts = vec![0u64; num_states];
    let mut rng = seeded_rng(seed);
    let mut s = sample_index(&mut rng, mdp.rho0());
    for step in 0..cfg.steps {
        let frac = step as f64 / cfg.steps.max(1) as f64;
        let epsilon = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
        let a = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..num_actions)
        } else {
            argmax(&q_behavior[s])
        };
        let s_next = sample_index(&mut rng, mdp.transition_row(s, a));
        counts[s_next] += 1;
        let r = mdp.reward(s_next);
        let bonus = cfg.bonus_scale / (counts[s_next].max(1) as f64).sqrt();

        let max_behavior = q_behavior[s_next]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        q_behavior[s][a] +=
            cfg.alpha * (r + bonus + cfg.gamma * max_behavior - q_behavior[s][a]);
        let target = r + cfg.gamma * q_extrinsic.max_value(s_next);
        let updated = q_extrinsic.value(s, a) + cfg.alpha * (target - q_extrinsic.value(s, a));
        q_extrinsic.set(s, a, updated);

        s = if (step + 1) % cfg.episode_horizon == 0 {
            sample_index(&mut rng, mdp.rho0())
        } else {
            s_next
        };
    }
    (greedy_policy(&q_extrinsic), CountTable { counts })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = a;
        }
    }
    best
}

/// The uniform-random policy and its exact objective.
pub fn random_policy_eval(mdp: &DiscreteMdp) -> Result<(TabularPolicy, ObjectiveReport)> {
    let policy = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let d = exact_d(mdp, &policy)?;
    let report = objective(mdp, &d);
    Ok((policy, report))
}

#[derive(Debug, Clone)]
pub struct SmmConfig {
    pub mixture_size: usize,
    pub num_trajectories: usize,
    pub horizon: usize,
    pub fqi_iterations: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Floor applied to visitation estimates before taking logs.
    pub d_floor: f64,
}

impl SmmConfig {
    pub fn new(
        mixture_size: usize,
        num_trajectories: usize,
        horizon: usize,
        fqi_iterations: usize,
        gamma: f64,
        seed: u64,
    ) -> Self {
        Self {
            mixture_size,
            num_trajectories,
            horizon,
            fqi_iterations,
            gamma,
            seed,
            d_floor: 1e-4,
        }
    }
}

/// Target density exp(R(s)) normalized over the whole state space.
pub fn smm_target_density(mdp: &DiscreteMdp) -> Vec<f64> {
    let raw: Vec<f64> = (0..mdp.num_states())
        .map(|s| mdp.reward(s).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Density-matching mixture baseline: iteration k relabels the batch with
/// log p*(s) - log max(d_hat(s), floor), affinely rescaled to [0, 1] (which
/// leaves the induced optimal policy unchanged), and otherwise follows the
/// same sample / estimate / offline-RL / mixture-update loop.
pub fn smm_mixture(
    mdp: &DiscreteMdp,
    cfg: &SmmConfig,
) -> Result<(PolicyMixture, Vec<IterationTrace>)> {
    let target = smm_target_density(mdp);
    let mut mixture =
        PolicyMixture::single(TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()));
    let mut traces = Vec::with_capacity(cfg.mixture_size);
    for k in 1..=cfg.mixture_size {
        let started = std::time::Instant::now();
        let batch = sample_batch(
            mdp,
            &mixture,
            cfg.num_trajectories,
            cfg.horizon,
            derive_seed(cfg.seed, k as u64),
        )?;
        let d_hat = estimate_d(&batch, cfg.gamma, EstimatorConvention::NextState)?;
        let raw: Vec<f64> = (0..mdp.num_states())
            .map(|s| target[s].ln() - d_hat.d_hat()[s].max(cfg.d_floor).ln())
            .collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let reward: Vec<f64> = if hi > lo {
            raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; mdp.num_states()]
        };
        let relabeled = relabel(&batch, |s| reward[s]);
        let (_, new_policy) = fqi_tabular(
            &relabeled,
            mdp.num_states(),
            mdp.num_actions(),
            cfg.gamma,
            cfg.fqi_iterations,
        )?;
        mixture = mixture.update(new_policy, k);
        let exact = exact_d_mixture(mdp, &mixture)?;
        traces.push(IterationTrace {
            iteration: k,
            d_hat: DhatSnapshot::States(d_hat.d_hat().to_vec()),
            r_hat: DhatSnapshot::States(reward),
            new_policy_index: mixture.num_components() - 1,
            weights: mixture.weights(),
            exact_f: Some(objective(mdp, &exact).objective_f),
            exact_d: Some(exact.probs().to_vec()),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((mixture, traces))
}

//! The main mixture-learning loops.
//!
//! Each iteration samples a batch from the current policy mixture, estimates
//! the discounted visitation frequency, derives the visitation-discounting
//! custom reward, solves the induced RL problem offline, and folds the new
//! policy into the mixture with step size 2/(k+1). The same loop runs in
//! three flavors: sampled discrete (FQI), exact-oracle discrete (closed-form
//! distributions and value iteration), and sampled continuous (fitted
//! actor-critic with discretized visitation estimates).

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::batch_rl::{
    fitted_actor_critic, fqi_tabular, ActionDomain, FacConfig, FacSample, FeatureMap,
};
use crate::envs::{
    sample_cont_batch, sample_cont_episode, ContBatch, ContMixture, ContPolicy, ContTransition,
    PointMassEnv,
};
use crate::error::{Error, Result};
use crate::estimator::{
    custom_reward, discretize_2d, estimate_d, estimate_d_cells, relabel, EstimatorConvention,
    GoalBuffer,
};
use crate::exact::{
    brute_force_optimal_mixture, exact_d, exact_d_mixture, objective, value_iteration,
    StateDistribution,
};
use crate::mdp::{DiscreteMdp, PolicyMixture, TabularPolicy};
use crate::sampling::{derive_seed, sample_batch, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    #[default]
    None,
    Random,
    CountBonus,
}

/// Hyper-parameters of the mixture-learning loops.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DdgcConfig {
    /// Mixture size K (number of iterations).
    pub mixture_size: usize,
    /// Episodes per iteration batch.
    pub num_trajectories: usize,
    /// Episode horizon.
    pub horizon: usize,
    /// Offline RL sweeps per iteration.
    pub fqi_iterations: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Exploratory sampling strategy (continuous loop only).
    pub exploration: Exploration,
    /// Episodes per exploratory batch; defaults to num_trajectories / 4.
    pub exploration_batch_size: Option<usize>,
    /// Cells per unit length of the state discretizer (continuous loop).
    pub discretization_precision: f64,
    pub estimator_convention: EstimatorConvention,
    /// RBF grid resolution of the continuous critic features.
    pub rbf_per_axis: usize,
}

impl DdgcConfig {
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
            exploration: Exploration::None,
            exploration_batch_size: None,
            discretization_precision: 100.0,
            estimator_convention: EstimatorConvention::NextState,
            rbf_per_axis: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mixture_size < 1
            || self.num_trajectories < 1
            || self.horizon < 1
            || self.fqi_iterations < 1
        {
            return Err(Error::InvalidConfig(
                "mixture_size, num_trajectories, horizon and fqi_iterations must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn exploration_size(&self) -> usize {
        self.exploration_batch_size
            .unwrap_or((self.num_trajectories / 4).max(1))
    }
}

/// Visitation snapshot of one iteration: per state, or per cell for the
/// continuous loop.
#[derive(Debug, Clone)]
pub enum DhatSnapshot {
    States(Vec<f64>),
    Cells(Vec<((i64, i64), f64)>),
}

/// Per-iteration record of a mixture-learning run.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub iteration: usize,
    pub d_hat: DhatSnapshot,
    /// Custom reward: per state for the discrete loops, per observed goal
    /// cell for the continuous loop.
    pub r_hat: DhatSnapshot,
    /// Index of the policy added this iteration within the final mixture.
    pub new_policy_index: usize,
    pub weights: Vec<f64>,
    /// Exact objective of the mixture after this iteration, when the
    /// closed-form oracle applies (discrete MDPs).
    pub exact_f: Option<f64>,
    /// Exact state distribution after this iteration (discrete MDPs).
    pub exact_d: Option<Vec<f64>>,
    pub wall_time_s: f64,
}

/// Sampled discrete loop: visitation estimates from batches, offline FQI as
/// the inner solver. Returns the final mixture and the full trace.
///
/// With exploration enabled, an extra exploratory batch augments the RL
/// data each iteration; it never enters the visitation estimate. After the
/// first update the mixture consists of deterministic policies only, so
/// without exploration the batch stops covering off-mixture actions and the
/// loop cannot discover further goal states.
pub fn run_ddgc_discrete(
    mdp: &DiscreteMdp,
    cfg: &DdgcConfig,
) -> Result<(PolicyMixture, Vec<IterationTrace>)> {
    cfg.validate()?;
    check_gamma(cfg.gamma, mdp.gamma())?;
    let mut mixture =
        PolicyMixture::single(TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()));
    let mut action_counts = vec![vec![0u64; mdp.num_actions()]; mdp.num_states()];
    let mut traces = Vec::with_capacity(cfg.mixture_size);
    for k in 1..=cfg.mixture_size {
        let started = Instant::now();
        let batch = sample_batch(
            mdp,
            &mixture,
            cfg.num_trajectories,
            cfg.horizon,
            derive_seed(cfg.seed, 2 * k as u64),
        )?;
        let explore = match cfg.exploration {
            Exploration::None => None,
            Exploration::Random => Some(sample_batch(
                mdp,
                &PolicyMixture::single(TabularPolicy::uniform(
                    mdp.num_states(),
                    mdp.num_actions(),
                )),
                cfg.exploration_size(),
                cfg.horizon,
                derive_seed(cfg.seed, 2 * k as u64 + 1),
            )?),
            Exploration::CountBonus => Some(sample_least_tried_batch(
                mdp,
                &mut action_counts,
                cfg.exploration_size(),
                cfg.horizon,
                derive_seed(cfg.seed, 2 * k as u64 + 1),
            )?),
        };
        // Visitation estimate from the on-mixture batch only.
        let d_hat = estimate_d(&batch, cfg.gamma, cfg.estimator_convention)?;
        let r_hat = custom_reward(&d_hat, mdp.goal_mask());
        let relabeled = relabel(&batch, |s| r_hat[s]);
        let rl_batch = match &explore {
            None => relabeled,
            Some(x) => relabeled.merged(&relabel(x, |s| r_hat[s]))?,
        };
        let (_, new_policy) = fqi_tabular(
            &rl_batch,
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
            r_hat: DhatSnapshot::States(r_hat),
            new_policy_index: mixture.num_components() - 1,
            weights: mixture.weights(),
            exact_f: Some(objective(mdp, &exact).objective_f),
            exact_d: Some(exact.probs().to_vec()),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((mixture, traces))
}

/// Idealized loop with every estimate replaced by its exact counterpart:
/// closed-form distributions and exact value iteration on the current
/// custom reward. Returns the mixture and the per-iteration optimality gaps
/// h_k = F* - F(mixture_k) against the brute-force oracle.
pub fn run_exact_ddgc(mdp: &DiscreteMdp, k_max: usize) -> Result<(PolicyMixture, Vec<f64>)> {
    let (mixture, gaps, _) = run_exact_ddgc_traced(mdp, k_max)?;
    Ok((mixture, gaps))
}

/// [`run_exact_ddgc`] with the full per-iteration trace.
pub fn run_exact_ddgc_traced(
    mdp: &DiscreteMdp,
    k_max: usize,
) -> Result<(PolicyMixture, Vec<f64>, Vec<IterationTrace>)> {
    assert!(k_max >= 1, "need at least one iteration");
    let (_, f_star) = brute_force_optimal_mixture(mdp, 1e-8)?;
    let uniform = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
    // Component distributions are cached; the mixture distribution is their
    // running weighted average.
    let mut components: Vec<(TabularPolicy, f64)> = vec![(uniform.clone(), 1.0)];
    let mut component_ds: Vec<Vec<f64>> = vec![exact_d(mdp, &uniform)?.probs().to_vec()];
    let mut gaps = Vec::with_capacity(k_max);
    let mut traces = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let started = Instant::now();
        let d_mix = weighted_average(&components, &component_ds, mdp.num_states());
        let r_k: Vec<f64> = d_mix
            .iter()
            .zip(mdp.goal_mask())
            .map(|(d, &g)| if g { 1.0 - d } else { 0.0 })
            .collect();
        let (_, new_policy) = value_iteration(mdp, &r_k, 1e-13, 100_000);
        let lambda = 2.0 / (k as f64 + 1.0);
        for (_, w) in components.iter_mut() {
            *w *= 1.0 - lambda;
        }
        component_ds.push(exact_d(mdp, &new_policy)?.probs().to_vec());
        components.push((new_policy, lambda));

        let d_after = weighted_average(&components, &component_ds, mdp.num_states());
        let f = objective(mdp, &StateDistribution::exact(d_after.clone())).objective_f;
        gaps.push(f_star - f);
        traces.push(IterationTrace {
            iteration: k,
            d_hat: DhatSnapshot::States(d_mix),
            r_hat: DhatSnapshot::States(r_k),
            new_policy_index: components.len() - 1,
            weights: components.iter().map(|(_, w)| *w).collect(),
            exact_f: Some(f),
            exact_d: Some(d_after),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    let mixture = PolicyMixture::new(components)?;
    Ok((mixture, gaps, traces))
}

fn weighted_average(
    components: &[(TabularPolicy, f64)],
    ds: &[Vec<f64>],
    n: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for ((_, w), d) in components.iter().zip(ds) {
        if *w == 0.0 {
            continue;
        }
        for (a, p) in acc.iter_mut().zip(d) {
            *a += w * p;
        }
    }
    acc
}

fn check_gamma(cfg_gamma: f64, env_gamma: f64) -> Result<()> {
    if (cfg_gamma - env_gamma).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "config gamma {cfg_gamma} does not match environment gamma {env_gamma}"
        )));
    }
    Ok(())
}

/// Continuous-space loop: adds an exploratory batch and a goal buffer, and
/// estimates visitation over discretized cells. Exploration and buffer data
/// feed only the offline RL step, never the visitation estimate.
pub fn run_ddgc_continuous(
    env: &PointMassEnv,
    cfg: &DdgcConfig,
) -> Result<(ContMixture, Vec<IterationTrace>)> {
    cfg.validate()?;
    check_gamma(cfg.gamma, env.gamma())?;
    let mut mixture = ContMixture::single(ContPolicy::UniformRandom);
    let mut buffer: GoalBuffer<ContTransition> = GoalBuffer::new(None);
    let mut cell_counts: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let features = FeatureMap::rbf_grid(cfg.rbf_per_axis);
    let actions = ActionDomain::Box2 { low: [-1.0, -1.0], high: [1.0, 1.0] };
    let fac_cfg = FacConfig::default();
    let mut traces = Vec::with_capacity(cfg.mixture_size);

    for k in 1..=cfg.mixture_size {
        let started = Instant::now();
        let batch = sample_cont_batch(
            env,
            &mixture,
            cfg.num_trajectories,
            cfg.horizon,
            derive_seed(cfg.seed, 2 * k as u64),
        );
        let explore = match cfg.exploration {
            Exploration::None => None,
            Exploration::Random => Some(sample_cont_batch(
                env,
                &ContMixture::single(ContPolicy::UniformRandom),
                cfg.exploration_size(),
                cfg.horizon,
                derive_seed(cfg.seed, 2 * k as u64 + 1),
            )),
            Exploration::CountBonus => Some(sample_count_bonus_batch(
                env,
                &mut cell_counts,
                cfg.exploration_size(),
                cfg.horizon,
                derive_seed(cfg.seed, 2 * k as u64 + 1),
                cfg.discretization_precision,
            )),
        };

        // The RL step consumes the buffer as of the previous iteration.
        let buffer_snapshot = buffer.clone();
        for (idx, ep) in batch.episodes.iter().enumerate() {
            buffer.insert_episode((batch.rng_seed, idx), ep, batch.episode_return(idx));
        }
        if let Some(x) = &explore {
            for (idx, ep) in x.episodes.iter().enumerate() {
                buffer.insert_episode((x.rng_seed, idx), ep, x.episode_return(idx));
            }
        }

        // Visitation estimate from the on-mixture batch only.
        let d_hat = estimate_d_cells(
            batch.episodes.iter().map(|ep| ep.as_slice()),
            batch.num_trajectories(),
            cfg.horizon,
            cfg.gamma,
            cfg.discretization_precision,
            cfg.estimator_convention,
        )?;
        let precision = cfg.discretization_precision;
        let reward = |s: [f64; 2]| {
            if env.is_goal(s) {
                1.0 - d_hat.get(discretize_2d(s, precision))
            } else {
                0.0
            }
        };

        let mut samples: Vec<FacSample> = Vec::new();
        let mut push_all = |eps: &[Vec<ContTransition>]| {
            for ep in eps {
                for tr in ep {
                    samples.push(FacSample {
                        s: tr.s.to_vec(),
                        a: tr.a.to_vec(),
                        r: reward(tr.s_next),
                        s_next: tr.s_next.to_vec(),
                    });
                }
            }
        };
        push_all(&batch.episodes);
        if let Some(x) = &explore {
            push_all(&x.episodes);
        }
        let buffered: Vec<Vec<ContTransition>> = buffer_snapshot
            .transitions()
            .cloned()
            .map(|tr| vec![tr])
            .collect();
        push_all(&buffered);

        let (_, new_policy) =
            fitted_actor_critic(&samples, &features, &actions, cfg.gamma, cfg.fqi_iterations, &fac_cfg)?;
        mixture = mixture.update(ContPolicy::Parametric(new_policy), k);

        let goal_cell_rewards: Vec<((i64, i64), f64)> = d_hat
            .cells()
            .filter(|(cell, _)| env.is_goal(cell_center(**cell, precision)))
            .map(|(cell, d)| (*cell, 1.0 - d))
            .collect();
        traces.push(IterationTrace {
            iteration: k,
            d_hat: DhatSnapshot::Cells(d_hat.cells().map(|(c, d)| (*c, *d)).collect()),
            r_hat: DhatSnapshot::Cells(goal_cell_rewards),
            new_policy_index: mixture.components().len() - 1,
            weights: mixture.weights(),
            exact_f: None,
            exact_d: None,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((mixture, traces))
}

/// Count-based exploratory sampling for discrete MDPs: each step takes the
/// least-tried action of the current state.
fn sample_least_tried_batch(
    mdp: &DiscreteMdp,
    action_counts: &mut [Vec<u64>],
    n_t: usize,
    horizon: usize,
    seed: u64,
) -> Result<crate::mdp::TrajectoryBatch> {
    let mut episodes = Vec::with_capacity(n_t);
    for i in 0..n_t {
        let mut rng = seeded_rng(derive_seed(seed, i as u64));
        let mut s = crate::sampling::sample_index(&mut rng, mdp.rho0());
        let mut episode = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let a = (0..mdp.num_actions())
                .min_by_key(|&a| action_counts[s][a])
                .unwrap();
            action_counts[s][a] += 1;
            let s_next = crate::sampling::sample_index(&mut rng, mdp.transition_row(s, a));
            episode.push(crate::mdp::Transition {
                s,
                a,
                r: mdp.reward(s_next),
                s_next,
                t,
            });
            s = s_next;
        }
        episodes.push(episode);
    }
    crate::mdp::TrajectoryBatch::new(episodes, horizon, mdp.num_states(), seed, vec![0; n_t])
}

/// Center of a discretizer cell.
pub fn cell_center(cell: (i64, i64), precision: f64) -> [f64; 2] {
    [
        (cell.0 as f64 + 0.5) / precision,
        (cell.1 as f64 + 0.5) / precision,
    ]
}

/// Exploratory sampling that scores candidate actions by inverse visit
/// counts of the predicted next cell.
fn sample_count_bonus_batch(
    env: &PointMassEnv,
    counts: &mut BTreeMap<(i64, i64), u64>,
    n_t: usize,
    horizon: usize,
    seed: u64,
    precision: f64,
) -> ContBatch {
    const CANDIDATES: usize = 8;
    let mut episodes = Vec::with_capacity(n_t);
    for i in 0..n_t {
        let mut rng = seeded_rng(derive_seed(seed, i as u64));
        let mut s = env.start();
        let mut episode = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let mut best_a = [0.0, 0.0];
            let mut best_score = f64::NEG_INFINITY;
            for _ in 0..CANDIDATES {
                let a = [
                    rand::Rng::gen_range(&mut rng, -1.0..=1.0),
                    rand::Rng::gen_range(&mut rng, -1.0..=1.0),
                ];
                let predicted = [
                    (s[0] + a[0] * env.dt()).clamp(0.0, 1.0),
                    (s[1] + a[1] * env.dt()).clamp(0.0, 1.0),
                ];
                let n = counts
                    .get(&discretize_2d(predicted, precision))
                    .copied()
                    .unwrap_or(0);
                let score = 1.0 / ((1 + n) as f64).sqrt();
                if score > best_score {
                    best_score = score;
                    best_a = a;
                }
            }
            let s_next = env.step(s, best_a, &mut rng);
            *counts.entry(discretize_2d(s_next, precision)).or_insert(0) += 1;
            episode.push(ContTransition {
                s,
                a: best_a,
                r: env.reward(s_next),
                s_next,
                t,
            });
            s = s_next;
        }
        episodes.push(episode);
    }
    ContBatch {
        episodes,
        horizon,
        rng_seed: seed,
        source: vec![0; n_t],
    }
}

/// Rolls out a continuous mixture and reports (mean discounted return,
/// distinct goal discs entered).
pub fn evaluate_cont_mixture(
    env: &PointMassEnv,
    mixture: &ContMixture,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> (f64, usize) {
    let batch = sample_cont_batch(env, mixture, n_episodes, horizon, seed);
    let mut discs_entered = std::collections::BTreeSet::new();
    let mut total_return = 0.0;
    for ep in &batch.episodes {
        for tr in ep {
            total_return += env.gamma().powi(tr.t as i32 - 1) * tr.r;
            if let Some(i) = env.which_disc(tr.s_next) {
                discs_entered.insert(i);
            }
        }
    }
    (total_return / n_episodes as f64, discs_entered.len())
}

/// Rolls out a single continuous episode with a parametric policy; test and
/// diagnostic helper.
pub fn rollout_parametric(
    env: &PointMassEnv,
    policy: &crate::batch_rl::ParametricPolicy,
    horizon: usize,
    seed: u64,
) -> Vec<ContTransition> {
    sample_cont_episode(env, &ContPolicy::Parametric(policy.clone()), horizon, seed)
}

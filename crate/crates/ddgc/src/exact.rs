//! Closed-form analysis: discounted marginal state distributions, the
//! coverage objective, mixture gradients, diversity metrics, and a
//! brute-force optimal-mixture oracle for small MDPs.
//!
//! The objective over a distribution d restricted to the goal set is
//! F = sum_g (d(g) - d(g)^2 / 2) = J_gamma + I, where J_gamma is the
//! normalized return and I = -1/2 sum_g d(g)^2 is a Gini-style diversity
//! term. F is concave in d, and d is linear in mixture weights, which is
//! what the Frank-Wolfe machinery in this crate relies on.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{DiscreteMdp, PolicyMixture, TabularPolicy};

const SOLVE_RESIDUAL_LIMIT: f64 = 1e-8;
const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    Exact,
    Empirical,
}

/// Probability vector over states.
#[derive(Debug, Clone)]
pub struct StateDistribution {
    probs: Vec<f64>,
    kind: DistributionKind,
}

impl StateDistribution {
    pub fn exact(probs: Vec<f64>) -> Self {
        Self {
            probs,
            kind: DistributionKind::Exact,
        }
    }

    pub fn empirical(probs: Vec<f64>) -> Self {
        Self {
            probs,
            kind: DistributionKind::Empirical,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn total_goal_mass(&self, goal_mask: &[bool]) -> f64 {
        self.probs
            .iter()
            .zip(goal_mask)
            .filter(|(_, &g)| g)
            .map(|(p, _)| p)
            .sum()
    }
}

/// Exact discounted marginal state distribution of a single policy:
/// d = (1 - gamma) (I - gamma P_pi^T)^{-1} rho0, solved densely.
pub fn exact_d(mdp: &DiscreteMdp, policy: &TabularPolicy) -> Result<StateDistribution> {
    let n = mdp.num_states();
    let gamma = mdp.gamma();
    let kernel = mdp.policy_kernel(policy);
    // A = I - gamma P_pi^T
    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * kernel[j][i]
    });
    let b = DVector::from_fn(n, |i, _| (1.0 - gamma) * mdp.rho0()[i]);
    let lu = a.clone().lu();
    let x = lu
        .solve(&b)
        .ok_or(Error::IllConditioned { residual: f64::INFINITY, limit: SOLVE_RESIDUAL_LIMIT })?;
    let residual = (&a * &x - &b).amax();
    if residual > SOLVE_RESIDUAL_LIMIT {
        return Err(Error::IllConditioned {
            residual,
            limit: SOLVE_RESIDUAL_LIMIT,
        });
    }
    let mut probs: Vec<f64> = x.iter().copied().collect();
    for p in &mut probs {
        // Rounding can leave tiny negative mass on unreachable states.
        if *p < 0.0 {
            debug_assert!(*p > -1e-9, "negative mass {p}");
            *p = 0.0;
        }
    }
    Ok(StateDistribution::exact(probs))
}

/// d of a policy mixture: the weight-averaged component distributions.
pub fn exact_d_mixture(mdp: &DiscreteMdp, mixture: &PolicyMixture) -> Result<StateDistribution> {
    let mut acc = vec![0.0; mdp.num_states()];
    for (policy, w) in mixture.components() {
        if *w == 0.0 {
            continue;
        }
        let d = exact_d(mdp, policy)?;
        for (a, p) in acc.iter_mut().zip(d.probs()) {
            *a += w * p;
        }
    }
    Ok(StateDistribution::exact(acc))
}

/// Objective value split into its return and diversity parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub objective_f: f64,
    pub return_jgamma: f64,
    pub diversity_i: f64,
    /// d restricted to goal states, in ascending state order.
    pub per_goal_mass: Vec<f64>,
}

/// Evaluates F = J_gamma + I on a state distribution.
pub fn objective(mdp: &DiscreteMdp, d: &StateDistribution) -> ObjectiveReport {
    objective_from_goal_mass(
        mdp.goal_states()
            .iter()
            .map(|&g| d.probs()[g])
            .collect::<Vec<_>>(),
    )
}

pub(crate) fn objective_from_goal_mass(per_goal_mass: Vec<f64>) -> ObjectiveReport {
    let return_jgamma: f64 = per_goal_mass.iter().sum();
    let diversity_i: f64 = -0.5 * per_goal_mass.iter().map(|p| p * p).sum::<f64>();
    ObjectiveReport {
        objective_f: return_jgamma + diversity_i,
        return_jgamma,
        diversity_i,
        per_goal_mass,
    }
}

/// Pairing of a candidate mixture with the objective gradient at a base
/// mixture: sum over goal states of d[candidate](s) (1 - d[base](s)).
pub fn mixture_gradient_pairing(
    mdp: &DiscreteMdp,
    candidate: &PolicyMixture,
    base: &PolicyMixture,
) -> Result<f64> {
    let d_c = exact_d_mixture(mdp, candidate)?;
    let d_b = exact_d_mixture(mdp, base)?;
    Ok(pairing_from_distributions(
        d_c.probs(),
        d_b.probs(),
        mdp.goal_mask(),
    ))
}

pub(crate) fn pairing_from_distributions(d_c: &[f64], d_b: &[f64], goal: &[bool]) -> f64 {
    d_c.iter()
        .zip(d_b)
        .zip(goal)
        .filter(|(_, &g)| g)
        .map(|((c, b), _)| c * (1.0 - b))
        .sum()
}

/// Dispersion metrics of a distribution over its goal states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalMetrics {
    /// sum_g -d(g) ln d(g); zero-mass states contribute 0.
    pub partial_entropy: f64,
    /// -sum_g d(g)^2.
    pub modified_partial_gini: f64,
    pub return_jgamma: f64,
}

pub fn goal_metrics(d: &StateDistribution, goal_mask: &[bool]) -> GoalMetrics {
    let mut entropy = 0.0;
    let mut gini = 0.0;
    let mut ret = 0.0;
    for (p, &g) in d.probs().iter().zip(goal_mask) {
        if !g {
            continue;
        }
        if *p > 0.0 {
            entropy -= p * p.ln();
        }
        gini -= p * p;
        ret += p;
    }
    GoalMetrics {
        partial_entropy: entropy,
        modified_partial_gini: gini,
        return_jgamma: ret,
    }
}

/// Value iteration for a custom state reward r: V(s) = r(s) + gamma max_a
/// E[V(s')]. Returns the value vector and the greedy policy, ties broken to
/// the lowest action id.
pub fn value_iteration(
    mdp: &DiscreteMdp,
    state_reward: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, TabularPolicy) {
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    for _ in 0..max_iter {
        let mut next = vec![0.0; n];
        let mut delta = 0.0_f64;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions() {
                let q: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&values)
                    .map(|(p, v)| p * v)
                    .sum();
                if q > best {
                    best = q;
                }
            }
            next[s] = state_reward[s] + mdp.gamma() * best;
            delta = delta.max((next[s] - values[s]).abs());
        }
        values = next;
        if delta < tol {
            break;
        }
    }
    let actions: Vec<usize> = (0..n)
        .map(|s| {
            let mut best_a = 0;
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions() {
                let q: f64 = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&values)
                    .map(|(p, v)| p * v)
                    .sum();
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            best_a
        })
        .collect();
    (values, TabularPolicy::deterministic(&actions, mdp.num_actions()))
}

/// Enumerates every deterministic tabular policy of the MDP in action-radix
/// order. Guarded by [`ENUMERATION_LIMIT`].
fn enumerate_deterministic_policies(mdp: &DiscreteMdp) -> Result<Vec<TabularPolicy>> {
    let count = (mdp.num_actions() as u128)
        .checked_pow(mdp.num_states() as u32)
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let a = mdp.num_actions() as u128;
    Ok((0..count)
        .map(|idx| {
            let actions: Vec<usize> = (0..mdp.num_states())
                .map(|s| ((idx / a.pow(s as u32)) % a) as usize)
                .collect();
            TabularPolicy::deterministic(&actions, mdp.num_actions())
        })
        .collect())
}

/// Brute-force maximizer of F over policy mixtures.
///
/// Enumerates all deterministic policies (the extreme points of the mixture
/// class), computes each exact distribution, then maximizes the concave F
/// over simplex weights with pairwise Frank-Wolfe steps and exact line
/// search until the duality gap drops below `tolerance`. Returns the mixture
/// (zero-weight vertices pruned) and the optimal value.
pub fn brute_force_optimal_mixture(
    mdp: &DiscreteMdp,
    tolerance: f64,
) -> Result<(PolicyMixture, f64)> {
    let vertices = enumerate_deterministic_policies(mdp)?;
    let goals = mdp.goal_states();
    let goal_mass: Vec<Vec<f64>> = vertices
        .par_iter()
        .map(|p| {
            let d = exact_d(mdp, p)?;
            Ok(goals.iter().map(|&g| d.probs()[g]).collect())
        })
        .collect::<Result<_>>()?;

    let n_v = vertices.len();
    let n_g = goals.len();
    let f_of = |y: &[f64]| -> f64 { y.iter().map(|p| p - 0.5 * p * p).sum() };

    // Start from the best single vertex.
    let start = (0..n_v)
        .map(|v| (v, f_of(&goal_mass[v])))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(v, _)| v)
        .unwrap();
    let mut weights = vec![0.0; n_v];
    weights[start] = 1.0;
    let mut y: Vec<f64> = goal_mass[start].clone();

    for _ in 0..200_000 {
        let grad: Vec<f64> = y.iter().map(|p| 1.0 - p).collect();
        let score = |v: usize| -> f64 {
            goal_mass[v]
                .iter()
                .zip(&grad)
                .map(|(m, g)| m * g)
                .sum()
        };
        let mut fw = 0;
        let mut fw_score = f64::NEG_INFINITY;
        let mut away = 0;
        let mut away_score = f64::INFINITY;
        let mut current = 0.0;
        for v in 0..n_v {
            let s = score(v);
            if s > fw_score {
                fw_score = s;
                fw = v;
            }
            if weights[v] > 0.0 {
                current += weights[v] * s;
                if s < away_score {
                    away_score = s;
                    away = v;
                }
            }
        }
        if fw_score - current < tolerance {
            break;
        }
        // Move mass from the worst active vertex to the best vertex.
        let dir: Vec<f64> = (0..n_g)
            .map(|g| goal_mass[fw][g] - goal_mass[away][g])
            .collect();
        let dir_sq: f64 = dir.iter().map(|d| d * d).sum();
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if dir_sq == 0.0 {
            break;
        }
        let step = (slope / dir_sq).clamp(0.0, weights[away]);
        if step == 0.0 {
            break;
        }
        weights[away] -= step;
        weights[fw] += step;
        for g in 0..n_g {
            y[g] += step * dir[g];
        }
    }

    let kept: Vec<(TabularPolicy, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 1e-12)
        .map(|(v, &w)| (vertices[v].clone(), w))
        .collect();
    let total: f64 = kept.iter().map(|(_, w)| *w).sum();
    let mixture = PolicyMixture::new(
        kept.into_iter().map(|(p, w)| (p, w / total)).collect(),
    )?;
    let d = exact_d_mixture(mdp, &mixture)?;
    let f_star = objective(mdp, &d).objective_f;
    Ok((mixture, f_star))
}

/// Curvature witness from the definition: with m2 = m1 + lambda (m - m1),
/// returns (2 / lambda^2) [F(m1) + <m2 - m1, grad F(m1)> - F(m2)].
///
/// The closed form of the same quantity is
/// (1 / lambda^2) sum_g (d[m2](g) - d[m1](g))^2; tests cross-check the two.
pub fn curvature_witness(
    mdp: &DiscreteMdp,
    m1: &PolicyMixture,
    m: &PolicyMixture,
    lambda: f64,
) -> Result<f64> {
    assert!(lambda > 0.0 && lambda <= 1.0, "lambda must lie in (0, 1]");
    let d1 = exact_d_mixture(mdp, m1)?;
    let dm = exact_d_mixture(mdp, m)?;
    let d2: Vec<f64> = d1
        .probs()
        .iter()
        .zip(dm.probs())
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    let d2 = StateDistribution::exact(d2);
    let f1 = objective(mdp, &d1).objective_f;
    let f2 = objective(mdp, &d2).objective_f;
    let goal = mdp.goal_mask();
    let dot = lambda
        * (pairing_from_distributions(dm.probs(), d1.probs(), goal)
            - pairing_from_distributions(d1.probs(), d1.probs(), goal));
    Ok(2.0 / (lambda * lambda) * (f1 + dot - f2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain_mdp(gamma: f64) -> DiscreteMdp {
        DiscreteMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            vec![false, true],
            gamma,
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    /// 3-state fork: action 0 leads to sink s1, action 1 to sink s2.
    fn fork_mdp(gamma: f64) -> DiscreteMdp {
        DiscreteMdp::new(
            vec![
                vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                vec![vec![0.0, 1.0, 0.0]; 2],
                vec![vec![0.0, 0.0, 1.0]; 2],
            ],
            vec![false, true, true],
            gamma,
            vec![1.0, 0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn chain_distribution_is_geometric() {
        let mdp = chain_mdp(0.5);
        let d = exact_d(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();
        assert_abs_diff_eq!(d.probs()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probs()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn absorbing_single_state() {
        let mdp = DiscreteMdp::new(
            vec![vec![vec![1.0]]],
            vec![true],
            0.9,
            vec![1.0],
        )
        .unwrap();
        let d = exact_d(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert_abs_diff_eq!(d.probs()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_gamma_returns_rho0() {
        let mdp = DiscreteMdp::new(
            vec![
                vec![vec![0.0, 1.0]],
                vec![vec![1.0, 0.0]],
            ],
            vec![false, true],
            0.0,
            vec![0.3, 0.7],
        )
        .unwrap();
        let d = exact_d(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();
        assert_abs_diff_eq!(d.probs()[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probs()[1], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn exact_d_matches_truncated_power_iteration() {
        let mdp = fork_mdp(0.9);
        let policy = TabularPolicy::new(vec![
            vec![0.3, 0.7],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let d = exact_d(&mdp, &policy).unwrap();
        // Independent oracle: (1 - gamma) * sum_{t<=T} gamma^t d^t.
        let kernel = mdp.policy_kernel(&policy);
        for t_max in [5usize, 20, 60] {
            let mut dt = mdp.rho0().to_vec();
            let mut acc = vec![0.0; 3];
            let mut scale = 1.0 - mdp.gamma();
            for _ in 0..=t_max {
                for (a, p) in acc.iter_mut().zip(&dt) {
                    *a += scale * p;
                }
                let mut next = vec![0.0; 3];
                for s in 0..3 {
                    for s2 in 0..3 {
                        next[s2] += dt[s] * kernel[s][s2];
                    }
                }
                dt = next;
                scale *= mdp.gamma();
            }
            let bound = mdp.gamma().powi(t_max as i32 + 1) + 1e-12;
            for s in 0..3 {
                assert!(
                    (acc[s] - d.probs()[s]).abs() <= bound,
                    "t_max={t_max} state {s}: {} vs {}",
                    acc[s],
                    d.probs()[s]
                );
            }
        }
    }

    #[test]
    fn mixture_distribution_averages_components() {
        let mdp = fork_mdp(0.5);
        let left = TabularPolicy::deterministic(&[0, 0, 0], 2);
        let right = TabularPolicy::deterministic(&[1, 0, 0], 2);
        let single = exact_d_mixture(&mdp, &PolicyMixture::single(left.clone())).unwrap();
        let direct = exact_d(&mdp, &left).unwrap();
        for s in 0..3 {
            assert_abs_diff_eq!(single.probs()[s], direct.probs()[s], epsilon = 1e-14);
        }

        let pair = PolicyMixture::new(vec![(left.clone(), 0.5), (right.clone(), 0.5)]).unwrap();
        let d = exact_d_mixture(&mdp, &pair).unwrap();
        let d_l = exact_d(&mdp, &left).unwrap();
        let d_r = exact_d(&mdp, &right).unwrap();
        for s in 0..3 {
            assert_abs_diff_eq!(
                d.probs()[s],
                0.5 * d_l.probs()[s] + 0.5 * d_r.probs()[s],
                epsilon = 1e-14
            );
        }
        // gamma = 0.5 fork: average of (0.5, 0.5, 0) and (0.5, 0, 0.5).
        assert_abs_diff_eq!(d.probs()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probs()[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probs()[2], 0.25, epsilon = 1e-12);

        let same = PolicyMixture::new(vec![(left.clone(), 0.5), (left.clone(), 0.5)]).unwrap();
        let d_same = exact_d_mixture(&mdp, &same).unwrap();
        for s in 0..3 {
            assert_abs_diff_eq!(d_same.probs()[s], d_l.probs()[s], epsilon = 1e-14);
        }
    }

    #[test]
    fn objective_on_uniform_three_goals() {
        let d = StateDistribution::exact(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
        let mdp = DiscreteMdp::new(
            vec![vec![vec![1.0, 0.0, 0.0, 0.0]]; 4],
            vec![true, true, true, false],
            0.5,
            vec![1.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let report = objective(&mdp, &d);
        assert_abs_diff_eq!(report.objective_f, 5.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            report.objective_f,
            report.return_jgamma + report.diversity_i,
            epsilon = 1e-12
        );
        assert!(report.diversity_i <= 0.0);
    }

    #[test]
    fn objective_edge_cases() {
        let mdp = chain_mdp(0.5);
        let zero = StateDistribution::exact(vec![1.0, 0.0]);
        let report = objective(&mdp, &zero);
        assert_eq!(report.objective_f, 0.0);

        let half = StateDistribution::exact(vec![0.5, 0.5]);
        let mdp2 = DiscreteMdp::new(
            vec![vec![vec![1.0, 0.0]]; 2],
            vec![true, true],
            0.5,
            vec![1.0, 0.0],
        )
        .unwrap();
        let report = objective(&mdp2, &half);
        assert_abs_diff_eq!(report.return_jgamma, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.diversity_i, -0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(report.objective_f, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn gradient_pairing_cases() {
        let mdp = fork_mdp(0.5);
        let left = PolicyMixture::single(TabularPolicy::deterministic(&[0, 0, 0], 2));
        let right = PolicyMixture::single(TabularPolicy::deterministic(&[1, 0, 0], 2));
        // Base with zero goal mass is impossible in this fork; check the
        // identity pairing(c, b) = J(c) - sum_g d_c d_b instead.
        let p = mixture_gradient_pairing(&mdp, &left, &right).unwrap();
        let d_l = exact_d_mixture(&mdp, &left).unwrap();
        let d_r = exact_d_mixture(&mdp, &right).unwrap();
        let expected: f64 = [1, 2]
            .iter()
            .map(|&g| d_l.probs()[g] * (1.0 - d_r.probs()[g]))
            .sum();
        assert_abs_diff_eq!(p, expected, epsilon = 1e-12);
    }

    #[test]
    fn goal_metrics_cases() {
        let goal = vec![true, true, true, false];
        let uniform = StateDistribution::exact(vec![1.0 / 3.0; 3].into_iter().chain([0.0]).collect());
        let m = goal_metrics(&uniform, &goal);
        assert_abs_diff_eq!(m.partial_entropy, 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.modified_partial_gini, -1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.return_jgamma, 1.0, epsilon = 1e-12);

        let point = StateDistribution::exact(vec![1.0, 0.0, 0.0, 0.0]);
        let m = goal_metrics(&point, &goal);
        assert_eq!(m.partial_entropy, 0.0);
        assert_abs_diff_eq!(m.modified_partial_gini, -1.0, epsilon = 1e-12);

        let empty = StateDistribution::exact(vec![0.0, 0.0, 0.0, 1.0]);
        let m = goal_metrics(&empty, &goal);
        assert_eq!(
            (m.partial_entropy, m.modified_partial_gini, m.return_jgamma),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn value_iteration_greedy_on_chain() {
        let mdp = fork_mdp(0.9);
        // Reward only on state 2: greedy start action must be 1.
        let (values, policy) = value_iteration(&mdp, &[0.0, 0.0, 1.0], 1e-13, 10_000);
        assert_eq!(policy.action_row(0), &[0.0, 1.0]);
        assert!(values[2] > values[1]);
    }

    #[test]
    fn brute_force_single_goal_single_path() {
        // Only one reachable goal with mass m: F* = m - m^2/2.
        let mdp = chain_mdp(0.5);
        let (mixture, f_star) = brute_force_optimal_mixture(&mdp, 1e-10).unwrap();
        assert_eq!(mixture.num_components(), 1);
        let m = 0.5;
        assert_abs_diff_eq!(f_star, m - m * m / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn brute_force_symmetric_fork_splits_evenly() {
        let mdp = fork_mdp(0.5);
        let (mixture, f_star) = brute_force_optimal_mixture(&mdp, 1e-10).unwrap();
        let d = exact_d_mixture(&mdp, &mixture).unwrap();
        assert_abs_diff_eq!(d.probs()[1], d.probs()[2], epsilon = 1e-6);
        // masses (0.25, 0.25): F = 2 (0.25 - 0.03125).
        assert_abs_diff_eq!(f_star, 0.4375, epsilon = 1e-8);
    }

    #[test]
    fn enumeration_guard_trips() {
        let n = 21;
        let mut rows = vec![vec![vec![0.0; n]; 2]; n];
        #[allow(clippy::needless_range_loop)]
        for s in 0..n {
            rows[s][0][s] = 1.0;
            rows[s][1][(s + 1) % n] = 1.0;
        }
        let mdp = DiscreteMdp::new(rows, vec![false; n], 0.9, {
            let mut r = vec![0.0; n];
            r[0] = 1.0;
            r
        })
        .unwrap();
        assert!(matches!(
            brute_force_optimal_mixture(&mdp, 1e-8),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn curvature_witness_zero_for_identical_mixtures() {
        let mdp = fork_mdp(0.9);
        let m = PolicyMixture::single(TabularPolicy::uniform(3, 2));
        let w = curvature_witness(&mdp, &m, &m, 0.5).unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn curvature_witness_matches_closed_form() {
        // The witness always equals sum_g (d2 - d1)^2 / lambda^2. For the
        // orthogonal swing between two goal masses of size m it evaluates
        // to 2 m^2, so it can exceed 1 when both branch masses are large
        // (here gamma = 0.9 gives 2 * 0.81 = 1.62); the hard ceiling is 2.
        let mdp = fork_mdp(0.9);
        let m1 = PolicyMixture::single(TabularPolicy::deterministic(&[0, 0, 0], 2));
        let m = PolicyMixture::single(TabularPolicy::deterministic(&[1, 0, 0], 2));
        for lambda in [1.0, 0.5, 0.1] {
            let w = curvature_witness(&mdp, &m1, &m, lambda).unwrap();
            let d1 = exact_d_mixture(&mdp, &m1).unwrap();
            let dm = exact_d_mixture(&mdp, &m).unwrap();
            let closed: f64 = mdp
                .goal_states()
                .iter()
                .map(|&g| {
                    let delta = lambda * (dm.probs()[g] - d1.probs()[g]);
                    delta * delta
                })
                .sum::<f64>()
                / (lambda * lambda);
            assert_abs_diff_eq!(w, closed, epsilon = 1e-9);
            assert!(w <= 2.0 + 1e-9, "witness {w}");
        }
        assert_abs_diff_eq!(
            curvature_witness(&mdp, &m1, &m, 1.0).unwrap(),
            2.0 * 0.9 * 0.9,
            epsilon = 1e-9
        );

        // With branch masses of 0.5 the unit bound holds.
        let mdp = fork_mdp(0.5);
        let m1 = PolicyMixture::single(TabularPolicy::deterministic(&[0, 0, 0], 2));
        let m = PolicyMixture::single(TabularPolicy::deterministic(&[1, 0, 0], 2));
        for lambda in [1.0, 0.5, 0.1] {
            let w = curvature_witness(&mdp, &m1, &m, lambda).unwrap();
            assert!(w <= 1.0 + 1e-9, "witness {w}");
        }
    }
}

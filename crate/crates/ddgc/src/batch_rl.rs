//! Offline RL subroutines: tabular fitted Q-iteration and a fitted
//! actor-critic over linear features for continuous actions.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{TabularPolicy, TrajectoryBatch};

/// Action-value table clipped to [0, V_max] with V_max = 1/(1 - gamma).
#[derive(Debug, Clone)]
pub struct QTable {
    q: Vec<Vec<f64>>,
    v_max: f64,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize, gamma: f64) -> Self {
        Self {
            q: vec![vec![0.0; num_actions]; num_states],
            v_max: 1.0 / (1.0 - gamma),
        }
    }

    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.q[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s]
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.q[s][a] = value.clamp(0.0, self.v_max);
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn num_states(&self) -> usize {
        self.q.len()
    }

    pub fn num_actions(&self) -> usize {
        self.q[0].len()
    }
}

/// Deterministic greedy policy of a Q table; ties go to the lowest action id.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    let actions: Vec<usize> = (0..q.num_states())
        .map(|s| {
            let row = q.row(s);
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    TabularPolicy::deterministic(&actions, q.num_actions())
}

/// Tabular fitted Q-iteration on a (relabeled) batch.
///
/// Each sweep replaces Q(s, a) with the batch mean of r + gamma max_a'
/// Q(s', a') over transitions leaving (s, a); pairs absent from the batch
/// keep their previous value (initialized to 0). Values are clipped to
/// [0, V_max]. Returns the final table and its greedy policy.
pub fn fqi_tabular(
    batch: &TrajectoryBatch,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    n_fqi: usize,
) -> Result<(QTable, TabularPolicy)> {
    if batch.num_trajectories() == 0 {
        return Err(Error::EmptyBatch);
    }
    assert!(n_fqi >= 1, "n_fqi must be >= 1");
    let mut groups: Vec<Vec<(f64, usize)>> = vec![Vec::new(); num_states * num_actions];
    for tr in batch.transitions() {
        groups[tr.s * num_actions + tr.a].push((tr.r, tr.s_next));
    }
    let mut q = QTable::zeros(num_states, num_actions, gamma);
    for _ in 0..n_fqi {
        let prev = q.clone();
        for s in 0..num_states {
            for a in 0..num_actions {
                let group = &groups[s * num_actions + a];
                if group.is_empty() {
                    continue;
                }
                let target: f64 = group
                    .iter()
                    .map(|&(r, s_next)| r + gamma * prev.max_value(s_next))
                    .sum::<f64>()
                    / group.len() as f64;
                q.set(s, a, target);
            }
        }
    }
    let policy = greedy_policy(&q);
    Ok((q, policy))
}

/// Feature map for linear action-value prediction.
#[derive(Debug, Clone)]
pub enum FeatureMap {
    /// One indicator per (state id, action id); inputs carry the ids as
    /// single-element vectors.
    OneHot { num_states: usize, num_actions: usize },
    /// Radial basis functions over the 2-d state box crossed with
    /// [1, ax, ay, ax^2, ay^2] in the 2-d action.
    RbfPoly { centers: Vec<[f64; 2]>, bandwidth: f64 },
}

const ACTION_TERMS: usize = 5;

impl FeatureMap {
    /// Square grid of RBF centers over [0, 1]^2.
    pub fn rbf_grid(per_axis: usize) -> Self {
        let mut centers = Vec::with_capacity(per_axis * per_axis);
        for i in 0..per_axis {
            for j in 0..per_axis {
                let x = (i as f64 + 0.5) / per_axis as f64;
                let y = (j as f64 + 0.5) / per_axis as f64;
                centers.push([x, y]);
            }
        }
        FeatureMap::RbfPoly {
            centers,
            bandwidth: 1.0 / per_axis as f64,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHot { num_states, num_actions } => num_states * num_actions,
            FeatureMap::RbfPoly { centers, .. } => centers.len() * ACTION_TERMS,
        }
    }

    pub fn fill(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match self {
            FeatureMap::OneHot { num_actions, .. } => {
                let idx = s[0] as usize * num_actions + a[0] as usize;
                out[idx] = 1.0;
            }
            FeatureMap::RbfPoly { centers, bandwidth } => {
                let terms = [1.0, a[0], a[1], a[0] * a[0], a[1] * a[1]];
                for (c, center) in centers.iter().enumerate() {
                    let dx = s[0] - center[0];
                    let dy = s[1] - center[1];
                    let w = (-(dx * dx + dy * dy) / (2.0 * bandwidth * bandwidth)).exp();
                    for (k, t) in terms.iter().enumerate() {
                        out[c * ACTION_TERMS + k] = w * t;
                    }
                }
            }
        }
    }

}

/// Linear action-value predictor; predictions are clipped to [0, V_max] at
/// evaluation time.
#[derive(Debug, Clone)]
pub struct LinearQ {
    features: FeatureMap,
    weights: Vec<f64>,
    v_max: f64,
}

impl LinearQ {
    pub fn zeros(features: FeatureMap, gamma: f64) -> Self {
        let dim = features.dim();
        Self {
            features,
            weights: vec![0.0; dim],
            v_max: 1.0 / (1.0 - gamma),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn raw_value(&self, s: &[f64], a: &[f64]) -> f64 {
        let mut phi = vec![0.0; self.features.dim()];
        self.features.fill(s, a, &mut phi);
        phi.iter().zip(&self.weights).map(|(p, w)| p * w).sum()
    }

    pub fn value(&self, s: &[f64], a: &[f64]) -> f64 {
        self.raw_value(s, a).clamp(0.0, self.v_max)
    }
}

/// One regression sample for the fitted actor-critic.
#[derive(Debug, Clone)]
pub struct FacSample {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
}

/// Action set the policy-improvement step maximizes over.
#[derive(Debug, Clone)]
pub enum ActionDomain {
    Discrete(Vec<Vec<f64>>),
    Box2 { low: [f64; 2], high: [f64; 2] },
}

/// Policy produced by the fitted actor-critic.
#[derive(Debug, Clone)]
pub enum ParametricPolicy {
    /// Exact per-state argmax over a finite action list.
    DiscreteGreedy { q: LinearQ, actions: Vec<Vec<f64>> },
    /// Box-clamped linear map from RBF state activations to a 2-d action.
    BoxLinear {
        centers: Vec<[f64; 2]>,
        bandwidth: f64,
        weights: [Vec<f64>; 2],
        low: [f64; 2],
        high: [f64; 2],
    },
}

impl ParametricPolicy {
    pub fn act(&self, s: &[f64]) -> Vec<f64> {
        match self {
            ParametricPolicy::DiscreteGreedy { q, actions } => {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, a) in actions.iter().enumerate() {
                    let v = q.value(s, a);
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                actions[best].clone()
            }
            ParametricPolicy::BoxLinear { centers, bandwidth, weights, low, high } => {
                let act = rbf_vec(centers, *bandwidth, s);
                (0..2)
                    .map(|i| {
                        let raw: f64 = weights[i].iter().zip(&act).map(|(w, r)| w * r).sum();
                        raw.clamp(low[i], high[i])
                    })
                    .collect()
            }
        }
    }
}

fn rbf_vec(centers: &[[f64; 2]], bandwidth: f64, s: &[f64]) -> Vec<f64> {
    centers
        .iter()
        .map(|c| {
            let dx = s[0] - c[0];
            let dy = s[1] - c[1];
            (-(dx * dx + dy * dy) / (2.0 * bandwidth * bandwidth)).exp()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FacConfig {
    pub ridge: f64,
    pub policy_steps: usize,
    pub policy_lr: f64,
}

impl Default for FacConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            policy_steps: 60,
            policy_lr: 0.3,
        }
    }
}

/// Fitted actor-critic: alternates a ridge least-squares critic fit against
/// targets r + gamma f(s', pi(s')) with a policy-improvement step that
/// maximizes sum_i f(s_i, pi(s_i)).
///
/// For a discrete action domain the policy step is the exact per-state
/// argmax; for the box domain it runs gradient ascent on the parameters of a
/// box-clamped linear policy, using the analytic action gradient of the
/// linear critic.
pub fn fitted_actor_critic(
    batch: &[FacSample],
    features: &FeatureMap,
    actions: &ActionDomain,
    gamma: f64,
    n_fqi: usize,
    cfg: &FacConfig,
) -> Result<(LinearQ, ParametricPolicy)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dim = features.dim();
    if dim > batch.len() {
        return Err(Error::SingularRegression(format!(
            "feature dimension {dim} exceeds batch size {}",
            batch.len()
        )));
    }

    // The design matrix is fixed across iterations; factor its Gram once.
    let mut phi_rows = vec![0.0; batch.len() * dim];
    for (i, sample) in batch.iter().enumerate() {
        features.fill(&sample.s, &sample.a, &mut phi_rows[i * dim..(i + 1) * dim]);
    }
    let mut gram = DMatrix::zeros(dim, dim);
    for i in 0..batch.len() {
        let row = &phi_rows[i * dim..(i + 1) * dim];
        for (j, &pj) in row.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            for (k, &pk) in row.iter().enumerate() {
                gram[(j, k)] += pj * pk;
            }
        }
    }
    for j in 0..dim {
        gram[(j, j)] += cfg.ridge;
    }
    let chol: Cholesky<f64, nalgebra::Dyn> = Cholesky::new(gram).ok_or_else(|| {
        Error::SingularRegression("Gram matrix is not positive definite".into())
    })?;

    let mut critic = LinearQ::zeros(features.clone(), gamma);
    let mut policy = match actions {
        ActionDomain::Discrete(list) => ParametricPolicy::DiscreteGreedy {
            q: critic.clone(),
            actions: list.clone(),
        },
        ActionDomain::Box2 { low, high } => match features {
            FeatureMap::RbfPoly { centers, bandwidth } => ParametricPolicy::BoxLinear {
                centers: centers.clone(),
                bandwidth: *bandwidth,
                weights: [vec![0.0; centers.len()], vec![0.0; centers.len()]],
                low: *low,
                high: *high,
            },
            FeatureMap::OneHot { .. } => {
                return Err(Error::SingularRegression(
                    "box action domain requires RBF features".into(),
                ))
            }
        },
    };

    // RBF activations of batch states, reused by every policy step.
    let state_act: Option<Vec<Vec<f64>>> = match (&policy, features) {
        (ParametricPolicy::BoxLinear { .. }, FeatureMap::RbfPoly { centers, bandwidth }) => Some(
            batch
                .iter()
                .map(|sample| rbf_vec(centers, *bandwidth, &sample.s))
                .collect(),
        ),
        _ => None,
    };

    for _ in 0..n_fqi {
        let targets: Vec<f64> = batch
            .iter()
            .map(|sample| {
                let a_next = policy.act(&sample.s_next);
                sample.r + gamma * critic.value(&sample.s_next, &a_next)
            })
            .collect();
        let mut rhs = DVector::zeros(dim);
        for (i, &y) in targets.iter().enumerate() {
            let row = &phi_rows[i * dim..(i + 1) * dim];
            for (j, &pj) in row.iter().enumerate() {
                rhs[j] += pj * y;
            }
        }
        let solved = chol.solve(&rhs);
        critic.weights = solved.iter().copied().collect();

        match actions {
            ActionDomain::Discrete(list) => {
                policy = ParametricPolicy::DiscreteGreedy {
                    q: critic.clone(),
                    actions: list.clone(),
                };
            }
            ActionDomain::Box2 { .. } => {
                improve_box_policy(&mut policy, &critic, state_act.as_ref().unwrap(), cfg);
            }
        }
    }
    Ok((critic, policy))
}

/// Gradient-ascent policy improvement for the box-clamped linear policy.
fn improve_box_policy(
    policy: &mut ParametricPolicy,
    critic: &LinearQ,
    state_act: &[Vec<f64>],
    cfg: &FacConfig,
) {
    let ParametricPolicy::BoxLinear { weights, low, high, .. } = policy else {
        unreachable!("box policy improvement on non-box policy");
    };
    let FeatureMap::RbfPoly { centers, .. } = &critic.features else {
        unreachable!("box policy requires RBF critic features");
    };
    let n = state_act.len() as f64;
    for _ in 0..cfg.policy_steps {
        let mut grad = [vec![0.0; centers.len()], vec![0.0; centers.len()]];
        for act in state_act {
            // Current action of this state under the policy.
            let mut raw = [0.0; 2];
            let mut a = [0.0; 2];
            for i in 0..2 {
                raw[i] = weights[i].iter().zip(act).map(|(w, r)| w * r).sum();
                a[i] = raw[i].clamp(low[i], high[i]);
            }
            // d f / d a of the linear critic (quadratic in the action).
            let mut df_da = [0.0; 2];
            for (c, w_rbf) in act.iter().enumerate() {
                let base = c * ACTION_TERMS;
                df_da[0] += w_rbf
                    * (critic.weights[base + 1] + 2.0 * critic.weights[base + 3] * a[0]);
                df_da[1] += w_rbf
                    * (critic.weights[base + 2] + 2.0 * critic.weights[base + 4] * a[1]);
            }
            for i in 0..2 {
                // Clamped coordinates pass no gradient unless it points back
                // into the box.
                let active = (raw[i] > low[i] && raw[i] < high[i])
                    || (raw[i] <= low[i] && df_da[i] > 0.0)
                    || (raw[i] >= high[i] && df_da[i] < 0.0);
                if !active {
                    continue;
                }
                for (j, &r) in act.iter().enumerate() {
                    grad[i][j] += df_da[i] * r / n;
                }
            }
        }
        for i in 0..2 {
            for (w, g) in weights[i].iter_mut().zip(&grad[i]) {
                *w += cfg.policy_lr * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Transition;
    use approx::assert_abs_diff_eq;

    /// Full-coverage batch for the 2-state chain (s0 -> s1, s1 absorbing)
    /// with rewards carried on transitions leaving s1.
    fn chain_batch(repeats: usize) -> TrajectoryBatch {
        let ep = vec![
            Transition { s: 0, a: 0, r: 0.0, s_next: 1, t: 1 },
            Transition { s: 1, a: 0, r: 1.0, s_next: 1, t: 2 },
            Transition { s: 1, a: 0, r: 1.0, s_next: 1, t: 3 },
        ];
        TrajectoryBatch::new(vec![ep; repeats], 3, 2, 0, vec![0; repeats]).unwrap()
    }

    #[test]
    fn fqi_chain_fixed_point() {
        let (q, _) = fqi_tabular(&chain_batch(1), 2, 1, 0.5, 50).unwrap();
        assert_abs_diff_eq!(q.value(1, 0), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q.value(0, 0), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fqi_zero_rewards_zero_q() {
        let batch = TrajectoryBatch::new(
            vec![vec![
                Transition { s: 0, a: 0, r: 0.0, s_next: 1, t: 1 },
                Transition { s: 1, a: 0, r: 0.0, s_next: 1, t: 2 },
            ]],
            2,
            2,
            0,
            vec![0],
        )
        .unwrap();
        let (q, policy) = fqi_tabular(&batch, 2, 2, 0.9, 20).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(q.value(s, a), 0.0);
            }
            assert_eq!(policy.action_row(s), &[1.0, 0.0]);
        }
    }

    #[test]
    fn fqi_single_sweep_is_mean_immediate_reward() {
        let batch = TrajectoryBatch::new(
            vec![
                vec![Transition { s: 0, a: 0, r: 0.25, s_next: 1, t: 1 }],
                vec![Transition { s: 0, a: 0, r: 0.75, s_next: 0, t: 1 }],
            ],
            1,
            2,
            0,
            vec![0, 0],
        )
        .unwrap();
        let (q, _) = fqi_tabular(&batch, 2, 1, 0.9, 1).unwrap();
        assert_abs_diff_eq!(q.value(0, 0), 0.5, epsilon = 1e-15);
        assert_eq!(q.value(1, 0), 0.0); // absent pair keeps init
    }

    #[test]
    fn fqi_successive_iterates_contract() {
        let batch = chain_batch(1);
        let gamma = 0.5;
        let mut prev_gap = f64::INFINITY;
        let mut last: Option<QTable> = None;
        for n in 1..=8 {
            let (q, _) = fqi_tabular(&batch, 2, 1, gamma, n).unwrap();
            if let Some(prev) = &last {
                let gap = (0..2)
                    .map(|s| (q.value(s, 0) - prev.value(s, 0)).abs())
                    .fold(0.0_f64, f64::max);
                assert!(gap <= gamma * prev_gap + 1e-12, "n={n}: {gap} vs {prev_gap}");
                prev_gap = gap;
            }
            last = Some(q);
        }
    }

    #[test]
    fn q_values_never_exceed_v_max() {
        let gamma = 0.9;
        let (q, _) = fqi_tabular(&chain_batch(2), 2, 1, gamma, 200).unwrap();
        let v_max = 1.0 / (1.0 - gamma);
        for s in 0..2 {
            assert!(q.value(s, 0) <= v_max + 1e-12);
        }
    }

    #[test]
    fn greedy_policy_cases() {
        let mut q = QTable::zeros(2, 2, 0.5);
        q.set(0, 0, 1.0);
        q.set(0, 1, 2.0);
        q.set(1, 0, 1.8);
        q.set(1, 1, 0.0);
        let policy = greedy_policy(&q);
        assert_eq!(policy.action_row(0), &[0.0, 1.0]);
        assert_eq!(policy.action_row(1), &[1.0, 0.0]);

        let constant = QTable::zeros(3, 4, 0.5);
        let policy = greedy_policy(&constant);
        for s in 0..3 {
            assert_eq!(policy.action_row(s)[0], 1.0);
        }
    }

    #[test]
    fn fac_zero_rewards_zero_critic() {
        let batch: Vec<FacSample> = (0..40)
            .map(|i| FacSample {
                s: vec![(i % 2) as f64],
                a: vec![(i % 3 % 2) as f64],
                r: 0.0,
                s_next: vec![((i + 1) % 2) as f64],
            })
            .collect();
        let features = FeatureMap::OneHot { num_states: 2, num_actions: 2 };
        let actions = ActionDomain::Discrete(vec![vec![0.0], vec![1.0]]);
        let (critic, _) =
            fitted_actor_critic(&batch, &features, &actions, 0.9, 10, &FacConfig::default())
                .unwrap();
        for w in critic.weights() {
            assert!(w.abs() <= 1e-6, "weight {w}");
        }
    }

    #[test]
    fn fac_one_hot_matches_tabular_fqi() {
        // Rich full-coverage batch on a 3-state, 2-action stochastic MDP.
        use crate::envs::make_random_mdp;
        use crate::mdp::PolicyMixture;
        use crate::sampling::sample_batch;
        let mdp = make_random_mdp(3, 2, 1, 2, 5).unwrap().with_gamma(0.5).unwrap();
        let mix = PolicyMixture::single(crate::mdp::TabularPolicy::uniform(3, 2));
        let batch = sample_batch(&mdp, &mix, 200, 10, 11).unwrap();
        let n_fqi = 25;
        let (q_tab, pol_tab) = fqi_tabular(&batch, 3, 2, 0.5, n_fqi).unwrap();

        let fac_batch: Vec<FacSample> = batch
            .transitions()
            .map(|tr| FacSample {
                s: vec![tr.s as f64],
                a: vec![tr.a as f64],
                r: tr.r,
                s_next: vec![tr.s_next as f64],
            })
            .collect();
        let features = FeatureMap::OneHot { num_states: 3, num_actions: 2 };
        let actions = ActionDomain::Discrete(vec![vec![0.0], vec![1.0]]);
        let (critic, policy) =
            fitted_actor_critic(&fac_batch, &features, &actions, 0.5, n_fqi, &FacConfig::default())
                .unwrap();

        for s in 0..3 {
            for a in 0..2 {
                let lin = critic.value(&[s as f64], &[a as f64]);
                assert!(
                    (lin - q_tab.value(s, a)).abs() <= 1e-6,
                    "({s},{a}): {lin} vs {}",
                    q_tab.value(s, a)
                );
            }
            let greedy_a = policy.act(&[s as f64])[0] as usize;
            assert_eq!(
                pol_tab.action_row(s)[greedy_a],
                1.0,
                "greedy mismatch at state {s}"
            );
        }
    }

    #[test]
    fn fac_rejects_feature_dim_above_batch() {
        let batch = vec![FacSample { s: vec![0.0], a: vec![0.0], r: 0.0, s_next: vec![0.0] }];
        let features = FeatureMap::OneHot { num_states: 2, num_actions: 2 };
        let actions = ActionDomain::Discrete(vec![vec![0.0]]);
        assert!(matches!(
            fitted_actor_critic(&batch, &features, &actions, 0.9, 1, &FacConfig::default()),
            Err(Error::SingularRegression(_))
        ));
    }
}

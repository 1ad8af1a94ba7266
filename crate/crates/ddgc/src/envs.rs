//! Built-in environment suite: canonical small MDPs, a seeded random MDP
//! generator for property sweeps, and a 2-d point-mass multi-goal
//! environment for the continuous path.

use rand::Rng;

use crate::batch_rl::ParametricPolicy;
use crate::error::{Error, Result};
use crate::mdp::DiscreteMdp;
use crate::sampling::{derive_seed, sample_index, seeded_rng};

fn deterministic_rows(
    num_states: usize,
    num_actions: usize,
    edges: &[(usize, usize, usize)],
) -> Vec<Vec<Vec<f64>>> {
    let mut rows = vec![vec![vec![0.0; num_states]; num_actions]; num_states];
    for &(s, a, s_next) in edges {
        rows[s][a][s_next] = 1.0;
    }
    rows
}

/// Canonical 7-state branching MDP with three absorbing goal states.
///
/// Topology (2 actions, deterministic):
///
/// ```text
///             a0        a0
///   start --------> b --------> goal_near (sink)
///     |             | a1
///     | a1          v    a0
///     v            fan --------> goal_left (sink)
///   dead_end        | a1
///   (sink)          v
///                  goal_right (sink)
/// ```
///
/// State ids: 0 start, 1 branch, 2 fan, 3 near goal, 4 left goal,
/// 5 right goal, 6 dead end. The branch state is the critical one: one
/// action commits to the solo near goal, the other to the subtree holding
/// the remaining two goals. Every leaf (goals and the dead end) loops back
/// to itself under all actions. Discount defaults to 0.95.
pub fn make_figure1_mdp() -> DiscreteMdp {
    let edges = [
        (0, 0, 1),
        (0, 1, 6),
        (1, 0, 3),
        (1, 1, 2),
        (2, 0, 4),
        (2, 1, 5),
        (3, 0, 3),
        (3, 1, 3),
        (4, 0, 4),
        (4, 1, 4),
        (5, 0, 5),
        (5, 1, 5),
        (6, 0, 6),
        (6, 1, 6),
    ];
    let mut rho0 = vec![0.0; 7];
    rho0[0] = 1.0;
    DiscreteMdp::new(
        deterministic_rows(7, 2, &edges),
        vec![false, false, false, true, true, true, false],
        0.95,
        rho0,
    )
    .expect("canonical MDP is valid")
}

/// Chain MDP where return maximization concentrates on the nearest goal.
///
/// Three absorbing goals at depths 1, 2 and 3 from the start; each chain
/// node either enters its goal or continues down the chain. Discount
/// defaults to 0.9.
pub fn make_discounting_conflict_mdp() -> DiscreteMdp {
    // 0 start, 1 goal(depth 1), 2 node, 3 goal(depth 2), 4 node,
    // 5 goal(depth 3).
    let edges = [
        (0, 0, 1),
        (0, 1, 2),
        (1, 0, 1),
        (1, 1, 1),
        (2, 0, 3),
        (2, 1, 4),
        (3, 0, 3),
        (3, 1, 3),
        (4, 0, 5),
        (4, 1, 5),
        (5, 0, 5),
        (5, 1, 5),
    ];
    let mut rho0 = vec![0.0; 6];
    rho0[0] = 1.0;
    DiscreteMdp::new(
        deterministic_rows(6, 2, &edges),
        vec![false, true, false, true, false, true],
        0.9,
        rho0,
    )
    .expect("canonical MDP is valid")
}

/// Two-loop MDP where environment dynamics put return against coverage.
///
/// From the start, action 0 enters a 2-cycle of goal states and action 1
/// enters a 3-cycle holding two goals and one non-goal state; the loops are
/// forced once entered, so the loop lengths differ by exactly the one
/// non-goal state. Discount defaults to 0.999.
pub fn make_dynamics_conflict_mdp() -> DiscreteMdp {
    // 0 start, {1, 2} small all-goal loop, {3, 4, 5} long loop with
    // non-goal 5.
    let edges = [
        (0, 0, 1),
        (0, 1, 3),
        (1, 0, 2),
        (1, 1, 2),
        (2, 0, 1),
        (2, 1, 1),
        (3, 0, 4),
        (3, 1, 4),
        (4, 0, 5),
        (4, 1, 5),
        (5, 0, 3),
        (5, 1, 3),
    ];
    let mut rho0 = vec![0.0; 6];
    rho0[0] = 1.0;
    DiscreteMdp::new(
        deterministic_rows(6, 2, &edges),
        vec![false, true, true, true, true, false],
        0.999,
        rho0,
    )
    .expect("canonical MDP is valid")
}

/// Seeded random MDP with row-stochastic transitions of a given branching
/// factor and `num_goals` goal states drawn from the non-start states.
/// Regenerates until every state is reachable from the start. Discount
/// defaults to 0.95.
pub fn make_random_mdp(
    num_states: usize,
    num_actions: usize,
    num_goals: usize,
    branching: usize,
    seed: u64,
) -> Result<DiscreteMdp> {
    if num_states < 2 || num_actions < 1 {
        return Err(Error::InvalidMdp("need >= 2 states and >= 1 action".into()));
    }
    if num_goals >= num_states {
        return Err(Error::InvalidMdp("too many goal states".into()));
    }
    if branching < 1 || branching > num_states {
        return Err(Error::InvalidMdp("branching out of range".into()));
    }
    for attempt in 0..1000u64 {
        let mut rng = seeded_rng(derive_seed(seed, attempt));
        let mut transition = vec![vec![vec![0.0; num_states]; num_actions]; num_states];
        for state_rows in transition.iter_mut() {
            for row in state_rows.iter_mut() {
                // Pick `branching` distinct successors.
                let mut pool: Vec<usize> = (0..num_states).collect();
                let mut support = Vec::with_capacity(branching);
                for _ in 0..branching {
                    let i = rng.gen_range(0..pool.len());
                    support.push(pool.swap_remove(i));
                }
                let weights: Vec<f64> =
                    support.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = weights.iter().sum();
                for (&s_next, w) in support.iter().zip(&weights) {
                    row[s_next] = w / total;
                }
                // Absorb rounding into the largest entry so the row sums
                // to 1 exactly.
                let sum: f64 = row.iter().sum();
                let argmax = (0..num_states)
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap();
                row[argmax] += 1.0 - sum;
            }
        }
        let mut goal = vec![false; num_states];
        let mut pool: Vec<usize> = (1..num_states).collect();
        for _ in 0..num_goals {
            let i = rng.gen_range(0..pool.len());
            goal[pool.swap_remove(i)] = true;
        }
        let mut rho0 = vec![0.0; num_states];
        rho0[0] = 1.0;

        if all_reachable(&transition) {
            return DiscreteMdp::new(transition, goal, 0.95, rho0);
        }
    }
    Err(Error::InvalidMdp(
        "could not generate a fully reachable MDP".into(),
    ))
}

fn all_reachable(transition: &[Vec<Vec<f64>>]) -> bool {
    let n = transition.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(s) = stack.pop() {
        for row in &transition[s] {
            for (s_next, &p) in row.iter().enumerate() {
                if p > 0.0 && !seen[s_next] {
                    seen[s_next] = true;
                    stack.push(s_next);
                }
            }
        }
    }
    seen.into_iter().all(|v| v)
}

/// Circular goal region of the point-mass environment.
#[derive(Debug, Clone, Copy)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, s: [f64; 2]) -> bool {
        let dx = s[0] - self.center[0];
        let dy = s[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// 2-d point mass in the unit box with velocity-step actions in [-1, 1]^2
/// scaled by `dt`, Gaussian step noise, and disc-shaped goal regions.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    start: [f64; 2],
    discs: Vec<Disc>,
    dt: f64,
    noise_sigma: f64,
    gamma: f64,
}

pub fn make_point_mass_env(goal_discs: Vec<Disc>, dt: f64, noise_sigma: f64) -> PointMassEnv {
    PointMassEnv {
        start: [0.1, 0.1],
        discs: goal_discs,
        dt,
        noise_sigma,
        gamma: 0.95,
    }
}

/// The built-in three-disc configuration used by the experiment harness.
pub fn default_three_disc_env() -> PointMassEnv {
    make_point_mass_env(
        vec![
            Disc { center: [0.15, 0.85], radius: 0.12 },
            Disc { center: [0.85, 0.85], radius: 0.12 },
            Disc { center: [0.85, 0.15], radius: 0.12 },
        ],
        0.1,
        0.01,
    )
}

impl PointMassEnv {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_start(mut self, start: [f64; 2]) -> Self {
        self.start = start;
        self
    }

    pub fn start(&self) -> [f64; 2] {
        self.start
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn discs(&self) -> &[Disc] {
        &self.discs
    }

    pub fn is_goal(&self, s: [f64; 2]) -> bool {
        self.discs.iter().any(|d| d.contains(s))
    }

    /// Index of the disc containing `s`, if any.
    pub fn which_disc(&self, s: [f64; 2]) -> Option<usize> {
        self.discs.iter().position(|d| d.contains(s))
    }

    pub fn reward(&self, s: [f64; 2]) -> f64 {
        if self.is_goal(s) {
            1.0
        } else {
            0.0
        }
    }

    /// One dynamics step: s' = clip(s + a dt + noise) into the unit box.
    pub fn step(&self, s: [f64; 2], a: [f64; 2], rng: &mut impl Rng) -> [f64; 2] {
        let noise = if self.noise_sigma > 0.0 {
            let (n0, n1) = gaussian_pair(rng);
            [self.noise_sigma * n0, self.noise_sigma * n1]
        } else {
            [0.0, 0.0]
        };
        [
            (s[0] + a[0] * self.dt + noise[0]).clamp(0.0, 1.0),
            (s[1] + a[1] * self.dt + noise[1]).clamp(0.0, 1.0),
        ]
    }
}

/// Box-Muller transform; one pair of standard normals per call.
fn gaussian_pair(rng: &mut impl Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// One continuous environment step.
#[derive(Debug, Clone, Copy)]
pub struct ContTransition {
    pub s: [f64; 2],
    pub a: [f64; 2],
    pub r: f64,
    pub s_next: [f64; 2],
    pub t: usize,
}

/// Policy over the continuous action box.
#[derive(Debug, Clone)]
pub enum ContPolicy {
    /// Uniform over [-1, 1]^2.
    UniformRandom,
    Parametric(ParametricPolicy),
}

impl ContPolicy {
    pub fn act(&self, s: [f64; 2], rng: &mut impl Rng) -> [f64; 2] {
        match self {
            ContPolicy::UniformRandom => {
                [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
            }
            ContPolicy::Parametric(p) => {
                let a = p.act(&s);
                [a[0], a[1]]
            }
        }
    }
}

/// Weighted mixture of continuous policies; same update rule as the
/// discrete mixture.
#[derive(Debug, Clone)]
pub struct ContMixture {
    components: Vec<(ContPolicy, f64)>,
}

impl ContMixture {
    pub fn single(policy: ContPolicy) -> Self {
        Self { components: vec![(policy, 1.0)] }
    }

    pub fn components(&self) -> &[(ContPolicy, f64)] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(_, w)| *w).collect()
    }

    pub fn update(&self, new_policy: ContPolicy, k: usize) -> ContMixture {
        assert!(k >= 1);
        let lambda = 2.0 / (k as f64 + 1.0);
        let mut components: Vec<(ContPolicy, f64)> = self
            .components
            .iter()
            .map(|(p, w)| (p.clone(), w * (1.0 - lambda)))
            .collect();
        components.push((new_policy, lambda));
        ContMixture { components }
    }
}

/// Batch of fixed-horizon point-mass episodes.
#[derive(Debug, Clone)]
pub struct ContBatch {
    pub episodes: Vec<Vec<ContTransition>>,
    pub horizon: usize,
    pub rng_seed: u64,
    pub source: Vec<usize>,
}

impl ContBatch {
    pub fn num_trajectories(&self) -> usize {
        self.episodes.len()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &ContTransition> {
        self.episodes.iter().flatten()
    }

    pub fn episode_return(&self, idx: usize) -> f64 {
        self.episodes[idx].iter().map(|tr| tr.r).sum()
    }
}

/// Samples one fixed-horizon episode from the point mass; mirrors the
/// discrete sampling contract (seeded, reward = goal membership of the
/// entered state, 1-based step index).
pub fn sample_cont_episode(
    env: &PointMassEnv,
    policy: &ContPolicy,
    horizon: usize,
    seed: u64,
) -> Vec<ContTransition> {
    let mut rng = seeded_rng(seed);
    let mut s = env.start();
    let mut episode = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let a = policy.act(s, &mut rng);
        let s_next = env.step(s, a, &mut rng);
        episode.push(ContTransition {
            s,
            a,
            r: env.reward(s_next),
            s_next,
            t,
        });
        s = s_next;
    }
    episode
}

/// Samples a batch from a continuous policy mixture; component per episode
/// by weight, per-episode derived seeds.
pub fn sample_cont_batch(
    env: &PointMassEnv,
    mixture: &ContMixture,
    n_t: usize,
    horizon: usize,
    seed: u64,
) -> ContBatch {
    let weights = mixture.weights();
    let mut component_rng = seeded_rng(derive_seed(seed, u64::MAX));
    let source: Vec<usize> = (0..n_t)
        .map(|_| sample_index(&mut component_rng, &weights))
        .collect();
    let episodes = source
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            sample_cont_episode(
                env,
                &mixture.components()[c].0,
                horizon,
                derive_seed(seed, i as u64),
            )
        })
        .collect();
    ContBatch {
        episodes,
        horizon,
        rng_seed: seed,
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::discretize_2d;

    #[test]
    fn canonical_branching_mdp_shape() {
        let mdp = make_figure1_mdp();
        assert_eq!(mdp.num_states(), 7);
        assert_eq!(mdp.goal_states(), vec![3, 4, 5]);
        // Goals and the dead end are absorbing under all actions.
        for s in [3, 4, 5, 6] {
            for a in 0..2 {
                assert_eq!(mdp.transition_row(s, a)[s], 1.0);
            }
        }
        // Branch state: one action to the solo goal, the other into the fan.
        assert_eq!(mdp.transition_row(1, 0)[3], 1.0);
        assert_eq!(mdp.transition_row(1, 1)[2], 1.0);
        assert_eq!(mdp.transition_row(2, 0)[4], 1.0);
        assert_eq!(mdp.transition_row(2, 1)[5], 1.0);
    }

    #[test]
    fn discounting_conflict_depth_ordering() {
        let mdp = make_discounting_conflict_mdp();
        // Distances from the start to each goal strictly increase.
        let depths = [(1usize, 1usize), (3, 2), (5, 3)];
        for (goal, depth) in depths {
            assert!(mdp.is_goal(goal));
            // Walk the committing policy and check arrival time.
            let mut s = 0usize;
            let mut steps = 0;
            while s != goal {
                // Chain layout: even states continue with a1 until the
                // node before the goal, which enters with a0.
                let a = if mdp.transition_row(s, 0)[goal] == 1.0 { 0 } else { 1 };
                let row = mdp.transition_row(s, a);
                s = row.iter().position(|&p| p == 1.0).unwrap();
                steps += 1;
                assert!(steps <= depth, "goal {goal} deeper than {depth}");
            }
            assert_eq!(steps, depth);
        }
    }

    #[test]
    fn dynamics_conflict_loops() {
        let mdp = make_dynamics_conflict_mdp();
        assert_eq!(mdp.goal_states(), vec![1, 2, 3, 4]);
        // Small loop: all goals, length 2. Long loop: length 3 with exactly
        // one non-goal state.
        assert_eq!(mdp.transition_row(1, 0)[2], 1.0);
        assert_eq!(mdp.transition_row(2, 1)[1], 1.0);
        assert_eq!(mdp.transition_row(3, 0)[4], 1.0);
        assert_eq!(mdp.transition_row(4, 0)[5], 1.0);
        assert_eq!(mdp.transition_row(5, 1)[3], 1.0);
        assert!(!mdp.is_goal(5));
    }

    #[test]
    fn random_mdp_is_deterministic_in_seed() {
        let a = make_random_mdp(8, 2, 3, 3, 42).unwrap();
        let b = make_random_mdp(8, 2, 3, 3, 42).unwrap();
        for s in 0..8 {
            for act in 0..2 {
                assert_eq!(a.transition_row(s, act), b.transition_row(s, act));
            }
        }
        assert_eq!(a.goal_states(), b.goal_states());
        let c = make_random_mdp(8, 2, 3, 3, 43).unwrap();
        let differs = (0..8).any(|s| a.transition_row(s, 0) != c.transition_row(s, 0));
        assert!(differs);
    }

    #[test]
    fn random_mdp_goal_count_and_reachability() {
        for seed in 0..20 {
            let mdp = make_random_mdp(10, 2, 3, 2, seed).unwrap();
            assert_eq!(mdp.goal_states().len(), 3);
            assert!(all_reachable(
                &(0..10)
                    .map(|s| (0..2).map(|a| mdp.transition_row(s, a).to_vec()).collect())
                    .collect::<Vec<_>>()
            ));
        }
    }

    #[test]
    fn point_mass_zero_action_zero_noise_is_fixed() {
        let env = make_point_mass_env(vec![], 0.1, 0.0);
        let mut rng = seeded_rng(0);
        let s = [0.4, 0.6];
        let s_next = env.step(s, [0.0, 0.0], &mut rng);
        assert_eq!(s, s_next);
    }

    #[test]
    fn point_mass_reaches_disc_along_straight_line() {
        let env = make_point_mass_env(
            vec![Disc { center: [0.9, 0.1], radius: 0.05 }],
            0.1,
            0.0,
        );
        let mut rng = seeded_rng(0);
        let mut s = env.start();
        // Unit-speed action toward the disc center covers the distance in
        // at most distance / dt steps.
        let distance = ((0.9_f64 - s[0]).powi(2) + (0.1_f64 - s[1]).powi(2)).sqrt();
        let max_steps = (distance / env.dt()).ceil() as usize + 1;
        let mut reached = false;
        for _ in 0..max_steps {
            let dx = 0.9 - s[0];
            let dy = 0.1 - s[1];
            let norm = (dx * dx + dy * dy).sqrt().max(1e-12);
            s = env.step(s, [dx / norm, dy / norm], &mut rng);
            if env.is_goal(s) {
                reached = true;
                break;
            }
        }
        assert!(reached);
    }

    #[test]
    fn point_mass_states_stay_in_box() {
        let env = default_three_disc_env();
        let mut rng = seeded_rng(7);
        let mut s = env.start();
        for _ in 0..500 {
            let a = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            s = env.step(s, a, &mut rng);
            assert!((0.0..=1.0).contains(&s[0]) && (0.0..=1.0).contains(&s[1]));
        }
    }

    #[test]
    fn three_discs_are_disjoint_under_discretization() {
        let env = default_three_disc_env();
        let precision = 100.0;
        let cells: Vec<(i64, i64)> = env
            .discs()
            .iter()
            .map(|d| discretize_2d(d.center, precision))
            .collect();
        for i in 0..cells.len() {
            for j in (i + 1)..cells.len() {
                let (a, b) = (cells[i], cells[j]);
                let spread = (a.0 - b.0).abs().max((a.1 - b.1).abs()) as f64;
                // Center cells farther apart than two radii worth of cells.
                assert!(spread > 2.0 * env.discs()[i].radius * precision);
            }
        }
    }

    #[test]
    fn cont_sampling_is_seeded_and_chained() {
        let env = default_three_disc_env();
        let mix = ContMixture::single(ContPolicy::UniformRandom);
        let a = sample_cont_batch(&env, &mix, 5, 20, 3);
        let b = sample_cont_batch(&env, &mix, 5, 20, 3);
        for (ea, eb) in a.episodes.iter().zip(&b.episodes) {
            for (ta, tb) in ea.iter().zip(eb) {
                assert_eq!(ta.s, tb.s);
                assert_eq!(ta.a, tb.a);
                assert_eq!(ta.s_next, tb.s_next);
            }
        }
        for ep in &a.episodes {
            for w in ep.windows(2) {
                assert_eq!(w[0].s_next, w[1].s);
            }
            assert_eq!(ep[0].s, env.start());
        }
    }
}

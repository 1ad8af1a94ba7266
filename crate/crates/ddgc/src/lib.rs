//! Learning policy mixtures that cover goal states both densely and
//! diversely.
//!
//! The toolkit optimizes, over mixtures of policies, the sum of the
//! normalized discounted return and a Gini-style diversity term of the
//! discounted marginal state distribution restricted to goal states. The
//! optimization is conditional-gradient style: each iteration solves an
//! offline RL problem whose reward down-weights already well-covered goal
//! states, then averages the resulting policy into the mixture.
//!
//! Modules:
//! - [`mdp`]: finite MDPs, policies, mixtures, trajectory batches, MDP files.
//! - [`sampling`]: seeded episode/batch sampling.
//! - [`exact`]: closed-form distributions, the objective, oracles.
//! - [`estimator`]: empirical visitation estimates, custom rewards, buffers.
//! - [`batch_rl`]: tabular FQI and the linear fitted actor-critic.
//! - [`envs`]: built-in discrete MDPs and the point-mass environment.
//! - [`algorithm`]: the discrete, exact-oracle, and continuous main loops.
//! - [`baselines`]: count-bonus Q-learning, random policy, density matching.
//! - [`harness`]: experiment configs, runner, metrics files.

pub mod algorithm;
pub mod baselines;
pub mod batch_rl;
pub mod envs;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod harness;
pub mod mdp;
pub mod sampling;

pub use error::{Error, Result};

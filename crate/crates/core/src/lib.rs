//! Online actor-critic learning for a population of simulated users, with
//! an optional network-cohesion penalty that ties the value and policy
//! parameters of similar users together.
//!
//! The crate is organized around the runnable programs in `examples/`:
//!
//! | example               | shows                                                        |
//! |-----------------------|--------------------------------------------------------------|
//! | `simulate_population` | grouped linear-Gaussian users and coin-flip warm starts       |
//! | `softmax_policy`      | value/policy features, action probabilities and sampling      |
//! | `cohesion_graph`      | K-nearest-neighbor user network and its Laplacian             |
//! | `critic_solvers`      | separate LSTDQ and the two graph-regularized critics          |
//! | `actor_update`        | one quasi-Newton actor step at several cohesion strengths     |
//! | `online_run`          | the full online protocol for all three methods                |
//! | `evaluate_policy`     | long-run average reward of reference policies                 |
//! | `sweep`               | a Monte-Carlo sweep with CSV output and a text table          |
//!
//! ```text
//! cargo run --release --example online_run
//! ```
//!
//! The `cohesion-rl` binary exposes the same pipeline as `run`, `sweep`,
//! `eval` and `graph-dump` subcommands.
//!
//! Module map: [`sim`] (dynamics and population), [`policy`] (features and
//! softmax), [`graph`] (user network), [`critic`], [`actor`], [`runner`]
//! (online loop), [`eval`] (long-run reward) and [`sweep`] (experiment grid).
//! All randomness flows through [`rng`], so results depend only on the seed.

pub mod actor;
pub mod critic;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod runner;
pub mod sim;
pub mod sweep;

pub use error::{Error, Result};
pub use runner::{run_online, ExperimentConfig, Method, RunResult};

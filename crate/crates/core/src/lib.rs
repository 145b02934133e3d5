//! Biased aggregation for finite discounted Markov decision problems.
//!
//! The aggregate problem is built from an original MDP, a set of aggregate
//! states with disaggregation/aggregation tables, and a bias function `V`.
//! Its fixed point `r̃` yields the lookahead function `J̃1 = V + Φ r̃` and an
//! improved policy. With `V = J_μ` and one aggregate state this reduces to
//! the rollout policy of `μ`; with `V = J*` it recovers an optimal policy.

pub mod adaptive;
pub mod aggregation;
pub mod bellman;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod scheme_builder;
pub mod solvers;

pub use aggregation::{AggregateSolution, AggregationScheme};
pub use error::{Error, Result};
pub use mdp::{Action, CostFunction, Mdp, Policy, Transition};
pub use solvers::{SolveConfig, SolveTrace};

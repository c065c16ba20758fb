//! Exploration in tabular episodic MDPs: reward-free exploration, best-policy
//! identification, baselines and the experiment harness that compares them.

pub mod baselines;
pub mod bpi;
pub mod confidence;
pub mod empirical;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod rf;
pub mod rng;

pub use confidence::{ThresholdMode, ThresholdSpec};
pub use empirical::EmpiricalState;
pub use error::{Error, Result};
pub use mdp::{DiscountProfile, Policy, RewardTable, TabularMdp, Trajectory, ValueTable};

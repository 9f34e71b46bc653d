//! Tabular robust constrained reinforcement learning.
//!
//! The crate models finite robust constrained MDPs with (s,a)-rectangular
//! p-norm uncertainty sets, evaluates policies against the worst kernel in the
//! set, and optimizes softmax policies with a rectified natural policy
//! gradient loop. A two-state counterexample with a provably non-zero
//! primal/dual gap and a 4x6 gridworld experiment are included as built-in
//! instances.

pub mod config;
pub mod duality;
pub mod error;
pub mod eval;
pub mod gridworld;
pub mod mdp;
pub mod occupancy;
pub mod opt;
pub mod policy;
pub mod uncertainty;

pub use error::{RcrlError, Result};
pub use mdp::TabularRCMDP;
pub use occupancy::OccupancyMeasure;
pub use policy::SoftmaxPolicy;
pub use uncertainty::{NormOrder, PNormUncertainty, WorstCaseCertificate};

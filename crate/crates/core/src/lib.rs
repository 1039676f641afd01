//! Tabular cross-domain reinforcement learning.
//!
//! A target-domain learner runs softmax natural policy gradient on a hybrid
//! critic that mixes a critic fitted on target samples with a pre-trained
//! source-domain critic pulled back through learned state/action maps.  The
//! mixing weight is set from the two critics' empirical Bellman errors.
//!
//! Modules:
//! - [`mdp`]: finite MDPs, exact solvers, sampling.
//! - [`estimators`]: TD and cross-domain Bellman errors, least-squares TD fitting.
//! - [`mapping`]: inter-domain maps and search over map classes.
//! - [`algorithms`]: Q-NPG, direct source transfer, and the hybrid learner.
//! - [`theory`]: sub-optimality bounds, sample-complexity formulas, lemma checks.
//! - [`environments`]: gridworlds, the two-trajectory toy pair, transfer scenarios.
//! - [`harness`]: experiment configs, seeded runs, log and summary output.

pub mod algorithms;
pub mod environments;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod mapping;
pub mod mdp;
pub mod theory;

pub use error::{Error, Result};
pub use mapping::{DomainMap, MapClass, SearchMode};
pub use mdp::{OccupancyMeasure, Policy, QTable, TabularMdp, Transition, TransitionBatch};

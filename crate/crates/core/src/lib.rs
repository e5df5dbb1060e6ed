//! Tabular soft Q-learning with log-sum-exp and Boltzmann backups, the
//! switching-system comparison models used to analyse it, and the
//! closed-form finite-time error bounds.

pub mod bounds;
pub mod comparison;
pub mod experiment;
pub mod format;
pub mod learner;
pub mod mdp;
pub mod rng;
pub mod soft;
pub mod solvers;
pub mod verify;

//! Bayesian optimization of fine-tuning ("adaptation") hyperparameters.
//!
//! A Gaussian-process surrogate with expected-improvement acquisition
//! searches a mixed discrete/continuous space of adaptation settings.
//! Random search and a fixed baseline configuration serve as comparators,
//! and synthetic per-speaker surrogate losses stand in for real training
//! runs. Corpus utilities cover validation holdout, rehearsal mixing and
//! early stopping.

pub mod acquisition;
pub mod benchmark;
pub mod corpus;
pub mod gp;
pub mod objectives;
pub mod seeding;
pub mod space;
pub mod tuner;

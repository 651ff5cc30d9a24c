//! Adversarial coreset selection for efficient robust training.
//!
//! The crate bundles a small feedforward classifier with exact gradients,
//! projected-gradient attacks, per-sample adversarial gradient features, two
//! greedy coreset solvers (facility-location cover and orthogonal matching
//! pursuit), a training loop that alternates warm-start, selection and
//! weighted adversarial SGD, and numerical checks of the accompanying
//! convergence bounds.

pub mod attacks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod linalg;
pub mod model;
pub mod seeding;
pub mod solvers;
pub mod trainer;
pub mod verifier;

pub use error::{Error, Result};

//! Learning topic-level personalization vectors from pairs of vanilla and
//! personalized ranked lists.

pub mod em;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod optim;
pub mod perm_models;
pub mod rankings;
pub mod simulator;
pub mod topic_model;

pub use error::{LtpError, Result};

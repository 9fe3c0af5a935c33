//! Desk-scale fact verification: retrieve candidate documents for a claim,
//! rank them with a pointer network, jointly select evidence sentences while
//! predicting a veracity-relation sequence, post-process dates with explicit
//! rules, and score the result. A small adversarial-claim toolkit generates
//! attack sets in the same claim format.
//!
//! Everything is deterministic given a seed: models are trained with a
//! hand-rolled f64 tape (see [`nn`]), RNGs are ChaCha-seeded, and no
//! iteration order depends on hash randomization.

pub mod attacks;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod joint;
pub mod nn;
pub mod pipeline;
pub mod ptrnet;
pub mod retrieval;
pub mod temporal;
pub mod text;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

//! Differentially private histogram summaries over an abstract
//! homomorphic-gate backend.
//!
//! The crate builds a DP-summary of a one-dimensional histogram in three
//! stages, all expressed as boolean circuits over simulated ciphertext bits:
//!
//! 1. data-aware partitioning: every contiguous partition of the domain is
//!    costed by its noisy within-bucket deviation and the cheapest one is
//!    selected by an encrypted argmin;
//! 2. Laplace noising of the chosen bucket sums;
//! 3. uniform expansion of the noisy sums back to per-domain estimates.
//!
//! A four-entity protocol simulation (data owners, computation server,
//! decryption server, analysts) drives the stages end to end, and a
//! bit-exact plaintext oracle replays the same pipeline for verification.

pub mod backend;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fixed;
pub mod noise;
pub mod oracle;
pub mod partition;
pub mod protocol;
pub mod summary;

pub use error::{Error, Result};

//! Deterministic simulator for Byzantine-robust gossip consensus and
//! decentralized stochastic optimization.
//!
//! Regular nodes on an arbitrary communication graph average their states
//! (or momentum-SGD half-steps) with their neighbors; Byzantine nodes send
//! arbitrary, possibly receiver-dependent messages. The library provides:
//!
//! - [`graph`]: topology generators, Metropolis-Hastings / equal-weight
//!   mixing matrices, the effective regular-subgraph mixing matrix and its
//!   spectral gap;
//! - [`aggregate`]: gossip, clipped gossip (fixed / reference / adaptive
//!   clipping radii), trimmed mean, coordinate median, geometric median,
//!   and distance-plus-loss screening;
//! - [`attack`]: omniscient message-forging strategies (dissensus,
//!   zero-sum, a-little-is-enough, inner-product manipulation, bit flip,
//!   label flip);
//! - [`objective`]: synthetic quadratic and logistic-regression worker
//!   objectives with controlled heterogeneity and gradient noise;
//! - [`engine`]: deterministic consensus and training loops producing
//!   per-round metrics;
//! - [`config`] / [`sweep`]: JSON run documents, CSV output, and parallel
//!   parameter sweeps whose results are independent of thread count.
//!
//! Every random quantity is drawn from a ChaCha stream derived from the
//! run seed and a purpose label ([`seeding`]), so identical configurations
//! produce byte-identical outputs.

pub mod aggregate;
pub mod attack;
pub mod config;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod objective;
pub mod seeding;
pub mod sweep;

pub use error::{Error, Result};

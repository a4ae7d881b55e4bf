//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Error`]; variants are
//! named after the contract violation they report rather than the module
//! that raised them.

use thiserror::Error;

use crate::config::MetricsRecord;

#[derive(Debug, Error)]
pub enum Error {
    /// A specification value is structurally invalid (bad sizes, ranges,
    /// unknown node ids, ...).
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// The subgraph induced by the regular nodes is not connected.
    #[error("regular subgraph is disconnected")]
    DisconnectedRegularSubgraph,

    /// A node degree exceeds the bound required by the equal-weight rule.
    #[error("node {node} has degree {degree} which exceeds the bound {d_max}")]
    DegreeExceedsBound {
        node: usize,
        degree: usize,
        d_max: usize,
    },

    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Trimming removes every candidate value.
    #[error("trimming {trim} values from each end of {m} candidates leaves none")]
    EmptyAfterTrim { m: usize, trim: usize },

    /// The clipping-radius formula divides by the node's Byzantine weight,
    /// which is zero; callers should use an infinite radius instead.
    #[error("node {node} has zero Byzantine edge weight; use an infinite clipping radius")]
    ZeroDelta { node: usize },

    /// An attack needs a Byzantine neighbor at the targeted node.
    #[error("node {node} has no Byzantine neighbor")]
    NoByzantineNeighbor { node: usize },

    /// An attack needs at least one regular neighbor at the targeted node.
    #[error("node {node} has no regular neighbor")]
    NoRegularNeighbor { node: usize },

    /// The quantile fed to the inverse normal CDF is outside (0, 1).
    #[error("quantile target {target} lies outside (0, 1)")]
    DegenerateQuantile { target: f64 },

    /// The configured attack cannot run in the requested mode (e.g. an
    /// attack that needs gradients during a pure consensus run).
    #[error("attack `{attack}` is not supported in {mode} mode")]
    UnsupportedAttackForMode { attack: String, mode: String },

    /// A worker state became NaN or infinite. Carries the metrics recorded
    /// before the failure so callers can flush a partial output.
    #[error("non-finite state at round {round} on node {node}")]
    NonFiniteState {
        round: usize,
        node: usize,
        partial: Vec<MetricsRecord>,
    },

    /// No non-negative edge-weight assignment realizes the requested
    /// mixing parameters.
    #[error("no non-negative edge weights achieve p={p}, delta={delta}: {reason}")]
    Infeasible { p: f64, delta: f64, reason: String },

    /// A configuration document failed to deserialize.
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),

    /// An I/O failure while reading or writing run artifacts.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

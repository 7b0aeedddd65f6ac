//! Crate-wide error type.

use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("node id {0} already in use")]
    DuplicateNode(NodeId),
    #[error("edge length {len} on node {node} must be positive")]
    InvalidEdgeLength { node: NodeId, len: f64 },
    #[error("configuration mass {got} does not match expected {expected}")]
    MassMismatch { expected: f64, got: f64 },
    #[error("configuration/leaf-set mismatch: {0}")]
    ConfigMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("move budget {budget} exceeded while rebalancing; parameter inequalities likely violated")]
    MoveBudgetExceeded { budget: usize },
    #[error("fork split search reached delta {delta} without finding a stable split")]
    ForkSearchFailed { delta: f64 },
    #[error("fractional solver failed: {0}")]
    SolverFailed(String),
    #[error("illegal move: {0}")]
    IllegalMove(String),
    #[error("script error: {0}")]
    Script(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

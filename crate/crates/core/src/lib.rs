//! Engine for a potential-guided tree-mining game and the exploration and
//! traversal procedures built on top of it.
//!
//! A team of `k` robots maintains a placement on the leaves of a growing
//! rooted tree. An adversary elongates, forks, or deletes leaves; the player
//! rebalances robots whenever the potential drop of a move exceeds its
//! movement cost. The same engine, run against tree growth derived from an
//! unknown environment, yields collective exploration and layered-traversal
//! procedures with movement cost linear in the environment size plus a
//! polynomial depth term.

pub mod acte;
pub mod cte;
pub mod error;
pub mod game;
pub mod harness;
pub mod ltt;
pub mod oracle;
pub mod potential;
pub mod tm;
pub mod tree;

pub use error::{Error, Result};
pub use potential::PotentialParams;
pub use tree::{DiscreteConfig, FractionalConfig, NodeId, RootedTree};

//! Dual-cluster experience memory for optimization modeling agents.
//!
//! Historical solve trajectories are split into modeling and coding
//! components, clustered separately in each space, and linked by a weighted
//! bipartite graph. At inference time the memory yields a ranked queue of
//! (modeling cluster, coding cluster) paths whose generalized knowledge drives
//! a generate / verify / execute / repair / backtrack loop.

pub mod bench;
pub mod config;
pub mod construction;
pub mod domain;
pub mod engine;
pub mod planner;
pub mod provider;
pub mod sandbox;
pub mod store;

pub use config::Config;
pub use domain::*;

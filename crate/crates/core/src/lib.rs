//! Optimal inflow control for tree-shaped transport networks with stochastic
//! leaf demands.

pub mod control;
pub mod demand;
pub mod harness;
pub mod netgraph;
pub mod par;
pub mod pdesim;
pub mod quad;
pub mod timefuncs;

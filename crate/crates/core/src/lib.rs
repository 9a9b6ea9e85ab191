//! Allocation-only core of the expertflow orchestrator.
//!
//! Everything in this crate is pure: parsing decomposer output into a
//! [`graph::QueryGraph`], routing sub-queries to experts by centroid cosine
//! similarity, the dependency-aware resource scheduler and its discrete-event
//! executor, the deterministic mock backends and the leaf-response aggregator.
//! IO, HTTP, threads and wall clocks live in the `expertflow` crate.

#![no_std]

extern crate alloc;

pub mod aggregator;
pub mod backend;
pub mod embedder;
pub mod graph;
pub mod router;
pub mod scheduler;
pub mod sim;

pub use graph::{DependencyEdge, GraphError, NodeId, NodeStatus, QueryGraph, SubQueryNode};
pub use router::{Embedding, ExpertId, ExpertProfile, PoolingMethod, RouteTarget, RoutingDecision};
pub use scheduler::{ExecutionResult, ExecutionTrace, ResourceId, ResourcePool, SchedulingMode};

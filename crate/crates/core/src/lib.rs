//! Trace-driven simulator for hybrid soft-partitioned caches, with a small
//! lab of cache side-channel attacks run against it.
//!
//! A [`HybridCache`] is a set-associative cache whose top `iso_ways` ways in
//! every set double as a fully-associative, randomly replaced subcache for
//! isolated domains. [`Hierarchy`] stacks such levels; [`attacks`] drives
//! Prime+Probe, Flush+Reload and occupancy experiments against it.

pub mod analysis;
pub mod attacks;
pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod hierarchy;
pub mod replacement;
pub mod sim;
pub mod workload;

pub use cache::{AccessKind, AccessOutcome, AccessRequest, HybridCache, Idid, Verdict};
pub use error::{Error, Result};
pub use geometry::{decompose, CacheConfig, DecomposedAddress, Slot};
pub use hierarchy::{Hierarchy, HierarchyConfig, ServicedBy, StatsTable};
pub use replacement::{LruState, SeededRng};
pub use workload::{parse_trace, Trace, TraceOp, TraceRecord};

//! Roadside BEV trajectory construction, stabilization, near-miss mining and
//! review storage.

pub mod assignment;
pub mod config;
pub mod eval;
pub mod format;
pub mod geometry;
pub mod ingest;
pub mod miner;
pub mod qa;
pub mod refine;
pub mod safety;
pub mod scenario;
pub mod stabilize;
pub mod tracker;

pub use format::FORMAT_VERSION;
pub use geometry::{BevPose, BoxDims};
pub use ingest::ObjectClass;
pub use refine::Branch;
pub use tracker::Track;

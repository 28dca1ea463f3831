//! Metamorphic testing for deep-learning graph backends.

pub mod backend;
pub mod engine;
pub mod feeds;
pub mod fsum;
pub mod graph;
pub mod guidance;
pub mod lineage;
pub mod metrics;
pub mod oracle;
pub mod par;
pub mod rewrite;
pub mod tensor;
pub mod testing;

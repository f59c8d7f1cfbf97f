//! Core of the modular robot stack.

pub mod assembly;
pub mod bench;
pub mod buildgraph;
pub mod fabric;
pub mod keyspace;
pub mod launcher;
pub mod runtime;

pub use keyspace::{Chunk, KeyError, KeyExpr, Sample, SampleKind};

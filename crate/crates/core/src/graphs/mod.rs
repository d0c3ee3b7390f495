//! The three graph views over sessions consumed by the encoders.

mod global;
mod hyper;
mod local;

pub use global::{build_global_graph, raw_cooccurrence, GlobalGraph};
pub use hyper::{build_hypergraph, HyperGraph, HyperOperator};
pub use local::{build_local_graph, LocalGraph, RelationType};

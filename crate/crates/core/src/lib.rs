//! Relational databases as heterogeneous temporal graphs: ingestion, graph
//! compilation, task construction, neighborhood sampling, database
//! profiling, and a small relational GNN stack with tabular baselines.

pub mod autodiff;
pub mod cell;
pub mod encoders;
pub mod features;
pub mod flatten;
pub mod graph;
pub mod ingest;
pub mod models;
pub mod sampler;
pub mod schema;
pub mod synth;
pub mod task;
pub mod trainer;

pub use cell::Cell;
pub use graph::{build_graph, HeteroGraph};
pub use ingest::RelationalInstance;
pub use schema::{RelationalSchema, SemanticType};

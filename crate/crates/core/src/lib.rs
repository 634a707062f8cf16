//! Workflow-graph extraction and top-k similarity search over computational
//! notebooks.
//!
//! A notebook becomes a labeled DAG of code, data and output nodes
//! ([`graph::build_workflow_graph`]). Queries are DAGs of the same labels
//! plus wildcard nodes standing for a path; [`search::search_topk`] returns
//! the k notebooks whose best subgraph mapping scores highest.

pub mod error;
pub mod graph;
pub mod ingest;
pub mod matching;
pub mod model;
pub mod search;
pub mod sim;
pub mod store;
pub mod synth;

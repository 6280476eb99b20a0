//! Simulation of retrieval-augmented generation feeding its own output back
//! into the corpus it retrieves from.
//!
//! Each iteration retrieves contexts for a fixed question set, generates
//! answers with one or more generators, cleans them, commits them to the
//! corpus, and measures how rankings, accuracy and diversity evolve.

pub mod corpus;
pub mod dataset;
pub mod filters;
pub mod generation;
pub mod http;
pub mod metrics;
pub mod postprocess;
pub mod rerank;
pub mod retrieval;
pub mod runner;
pub mod seed;

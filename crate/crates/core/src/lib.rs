//! Tool-augmented language model runtime.
//!
//! * [`protocol`]: delimiter-based sequence text and the decode loop that
//!   intercepts tool calls;
//! * [`tools`]: the tool registry, BM25 retrieval, the formula solver and a
//!   web-search adapter;
//! * [`generator`]: the pluggable policy (scripted, trainable, external);
//! * [`selfplay`]: iterative self-play that grows the tool-use set;
//! * [`datasets`]: JSONL task sets, tool-use sets, corpora, synthetic tasks;
//! * [`eval`]: accuracy, failure taxonomy and learning curves.

pub mod datasets;
pub mod eval;
pub mod generator;
pub mod protocol;
pub mod selfplay;
pub mod tools;

//! Retrieval-augmented diagnostic reasoning engine.
//!
//! A case (imaging caption plus clinical history) flows through an initial
//! doctor agent that proposes ten candidate diagnoses, a retrieval agent that
//! asks targeted questions and answers them from a cached, keyword-indexed
//! external knowledge base, and a final doctor agent that ranks one primary
//! and four differential diagnoses. Three baseline topologies (single agent,
//! collaborative panel, challenger) and a Top-1/Top-5 evaluation harness sit
//! alongside the retrieval pipeline.

pub mod chunking;
pub mod domain;
pub mod eval;
pub mod agents;
pub mod index;
pub mod kb;
pub mod provider;
pub mod topology;
pub mod trace;

#[cfg(test)]
pub(crate) mod testutil;

//! Document-level event argument linking.
//!
//! For every event trigger and every role, the model either links the role
//! to an explicit argument span somewhere in the trigger's multi-sentence
//! context window or predicts that no explicit argument exists (ε).

pub mod candidates;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod evaluation;
pub mod linker;
pub mod model;
pub mod nn;
pub mod ontology;
pub mod pipeline;
pub mod training;

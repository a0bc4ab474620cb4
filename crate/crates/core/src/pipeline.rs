//! Batch prediction over a corpus.

use crate::corpus::{gold_types, Document};
use crate::decoder::{decode, DecodeError, Decoding, LinkPrediction, RoleScores};
use crate::encoder::{ContextualSource, EncoderError};
use crate::model::{Model, ModelError};
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

/// Runs `f` on a pool of `jobs` threads (0 picks the default size).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, PredictError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PredictError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Score tables for every document, in input order.
pub fn score_corpus(
    model: &Model,
    docs: &[Document],
    contextual: &dyn ContextualSource,
    jobs: usize,
) -> Result<Vec<RoleScores>, PredictError> {
    let per_doc: Vec<Result<Vec<RoleScores>, PredictError>> = with_jobs(jobs, || {
        docs.par_iter()
            .map(|d| {
                let ctx = contextual.layers_for(d)?;
                Ok(model.score_document(d, ctx.as_ref())?)
            })
            .collect()
    })?;
    let mut out = Vec::new();
    for r in per_doc {
        out.extend(r?);
    }
    Ok(out)
}

/// Scores and decodes a corpus. Type-constrained decoding reads gold event
/// types from the documents.
pub fn predict(
    model: &Model,
    docs: &[Document],
    contextual: &dyn ContextualSource,
    decoding: Decoding,
    jobs: usize,
) -> Result<Vec<LinkPrediction>, PredictError> {
    let table = score_corpus(model, docs, contextual, jobs)?;
    Ok(decode(&table, decoding, model.ontology(), &gold_types(docs))?)
}

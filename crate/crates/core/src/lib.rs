//! Toolkit for training citation-aware generators from weak supervision.
//!
//! The pieces, bottom up:
//!
//! - [`corpus`]: instances, cited answers and their JSONL formats
//! - [`tokenize`]: two toy subword tokenizers with different conventions
//! - [`align`]: minimal-span alignment and weight transfer between them
//! - [`fcm`]: factual-consistency scorers (lexical, remote, cached)
//! - [`shapley`]: token attribution and per-sentence normalization
//! - [`gate`]: citation/correctness metrics and the quality gate
//! - [`pipeline`]: the iterative generate-filter-reweight loop
//! - [`trainer`]: a toy language model trained with token-weighted NLL
//! - [`manifest`]: reproducibility manifests for pipeline runs

pub mod align;
pub mod corpus;
pub mod fcm;
pub mod gate;
pub mod manifest;
pub mod pipeline;
pub mod seed;
pub mod shapley;
pub mod tokenize;
pub mod trainer;

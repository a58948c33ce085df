//! Traffic conflict detection harness.
//!
//! Synthetic and ingested bird's-eye frame triplets, a prompt-driven gateway to
//! multimodal chat models, fine-tune export, evaluation with macro-averaged
//! metrics, and the human review service.

// `!(x > 0.0)` checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod eval;
pub mod finetune;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod review;
pub mod seed;
pub mod sim;
pub mod workspace;

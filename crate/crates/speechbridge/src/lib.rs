//! speechbridge: a desk-scale lab for speech-to-text interface experiments.
//!
//! The crate builds two complete recognition pathways over the same toy
//! backbones and compares them on a synthetic corpus with known ground truth:
//!
//! * a **continuous projector** pathway: frame encoder -> k-fold downsampling
//!   -> two-layer projector -> prefix embeddings for an autoregressive
//!   character decoder;
//! * a **discrete phoneme** pathway: frame encoder + CTC head producing
//!   phoneme (or BPE-phoneme) posteriors, sampled phoneme sequences fed to the
//!   decoder as text prompts, trained with a sampling-based marginalization
//!   loss.
//!
//! Start with the runnable examples (`cargo run --release --example ...`);
//! each major capability has one. The `speechbridge` binary exposes the same
//! functionality as subcommands.

pub mod autodiff;
pub mod bpe;
pub mod cli;
pub mod corpus;
pub mod ctc;
pub mod decoder;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod s2p;
pub mod text;

pub use error::{Error, Result};
pub use linalg::Matrix;

//! Drug repositioning through prototype learning and bidirectional
//! behavior sequences.
//!
//! The pipeline has two stages. [`proto`] learns per-domain encoders that map
//! a similarity-matrix row onto a prototype vector whose pairwise cosine
//! similarities reproduce the input similarities. [`seqmodel`] then scores a
//! drug–disease cell from the drug's and the disease's training associations,
//! fused with prototypes and similarities, passed through one multi-head
//! attention layer. [`eval`] holds the metrics and experiment runners, and
//! [`cli`] the command-line surface.

// `!(x >= 0.0)` style checks reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod numcore;
pub mod proto;
pub mod seqmodel;
pub mod settings;
pub mod synth;

pub use error::{Error, Result};

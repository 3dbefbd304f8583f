//! Speaker anonymization by neural-audio-codec token language modeling.
//!
//! The pipeline re-synthesizes an utterance from its semantic tokens while
//! borrowing the acoustic tokens of a pseudo-speaker prompt:
//!
//! ```text
//! waveform ─► semantic::tokenize ─► s ──┐
//!                                       ├─► lm::CoarseLm ─► lm::FineLm ─► codec::decode ─► waveform'
//! prompt pool ─► acoustic prompt ã ─────┘
//! ```
//!
//! `eval` implements the semi-informed attack and the privacy/utility metrics,
//! and `corpus` generates the synthetic multi-speaker data everything is
//! trained and measured on.

mod binio;
pub mod anon;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod eval;
pub mod error;
pub mod kmeans;
pub mod lm;
pub mod pipeline;
pub mod semantic;
mod linalg;

pub use error::{Error, Result};

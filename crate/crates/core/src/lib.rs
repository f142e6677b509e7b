//! MSCMHMST traffic-flow forecasting: multi-scale convolution encoder,
//! multi-head multi-scale sigmoid-gated attention, and a transformer
//! encoder, together with data windowing, training, evaluation, and the
//! ablation variant family.
//!
//! Everything runs on a small deterministic f64 tensor engine with
//! reverse-mode differentiation ([`numcore`]); no external ML runtime.

pub mod dataio;
pub mod error;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};

//! Non-intrusive speech quality assessment.
//!
//! A bidirectional LSTM reads a magnitude spectrogram and emits one quality
//! score per frame; the utterance score is the mean of the frame scores.
//! Training uses an utterance-level squared error plus a frame-level term
//! whose weight grows exponentially with the true label, so clean speech is
//! pushed towards uniformly high frame scores while degraded speech is free
//! to localize its low-quality regions.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod features;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod signal;
pub mod util;

pub use error::{Error, Result};

//! Super-exponential bubble detection with a two-regime hidden Markov model,
//! speculative influence networks built from transfer entropy between bubble
//! probabilities, and the loss analytics used to evaluate them.

pub mod analysis;
pub mod error;
pub mod hmm;
pub mod io;
pub mod model;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod te;

pub use error::{Error, Regime, Result};
pub use par::Execution;

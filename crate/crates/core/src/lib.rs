//! Keyword spotting toolkit.
//!
//! The pipeline runs end to end on a procedurally generated corpus:
//! waveform synthesis and WAV I/O ([`corpus`]), log-mel features
//! ([`frontend`]), masked-audio augmentation ([`augment`]), a small CNN with
//! hand-written backprop ([`nn`]), the three-cluster CORAL joint loss
//! ([`coral`]), Nesterov SGD training ([`trainer`]), sliding-window scoring
//! ([`detector`]) and FR / FA-per-hour evaluation ([`eval`]).

pub mod augment;
pub mod cli;
pub mod config;
pub mod coral;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod nn;
pub mod seed;
pub mod trainer;

pub use error::{KwsError, Result};

//! Noisy-target training for single-channel target signal enhancement.
//!
//! The crate covers the whole pipeline at desk scale: signal primitives
//! ([`dsp`]), reference metrics ([`metrics`]), synthetic corpora and
//! corruptions ([`synth`]), training objectives ([`losses`]), tiny
//! differentiable enhancers ([`models`]) and the CTT / NyTT / MixIT /
//! IterNyTT training loops ([`train`]).

pub mod dsp;
pub mod error;
pub mod fingerprint;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

//! Dual-branch bird-sound classification.
//!
//! Audio is turned into a three-channel spectral stack (log-mel, log-STFT and
//! MFCC), encoded by a small convolutional network, paired with a learned
//! embedding from an external backbone, fused by one of three strategies
//! (fixed concatenation, cross-conditioned sigmoid gating, or relu-lifted
//! features modulated by Gumbel-Softmax samples) and classified by an MLP.
//! Every differentiable step runs on the reverse-mode tape in [`numeric`].

pub mod cli;
pub mod dsp;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod numeric;
pub mod trainer;

pub use error::{Error, Result};

//! Desk-scale stack for audio-synchronized video animation.
//!
//! A frozen toy video denoiser is extended with trainable windowed audio
//! cross-attention and multi-feature audio conditioning, trained in two
//! stages (broad pretraining on an automatically curated corpus, then
//! few-shot finetuning on clean clips), and evaluated on a fully synthetic
//! benchmark with oracle-based synchronization metrics. Everything runs on
//! CPU in f64 and is bit-reproducible for a fixed seed.

pub mod audio;
pub mod clips;
pub mod curation;
pub mod diffusion;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod util;
pub mod window;

pub use error::{Error, Result};

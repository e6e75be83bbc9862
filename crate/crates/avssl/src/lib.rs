//! Audiovisual contrastive representation learning at desk scale.
//!
//! The crate covers the full pipeline: a dense-tensor engine with
//! reverse-mode automatic differentiation, a deterministic synthetic
//! audiovisual dataset, temporal/audio/spatial augmentations with
//! cross-stream alignment, log-mel-spectrogram features, clip-pair and
//! evaluation samplers, four contrastive frameworks (SimCLR, MoCo, BYOL,
//! SimSiam) over small audiovisual encoders, and the SGD pre-training plus
//! linear-probe evaluation protocol.
//!
//! Start with the runnable examples (`cargo run --release --example <name>`):
//!
//! - `autodiff_basics` — tensors, the tape, gradients vs finite differences
//! - `synthetic_dataset` — generating and inspecting the synthetic corpus
//! - `mel_spectrogram` — waveform to log-mel features
//! - `augmentation_suite` — the four temporal transforms and alignment
//! - `clip_sampling` — clip-pair and evaluation samplers
//! - `frameworks_tour` — the four contrastive losses on toy embeddings
//! - `pretrain_tiny` — a miniature end-to-end pre-training run
//! - `linear_probe` — probe training and 10-clip / 3-crop evaluation
//!
//! The `avssl` binary exposes the same machinery as subcommands
//! (`gen-data`, `pretrain`, `probe`, `eval`, `ablate`, `augment-preview`).

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
pub mod features;
pub mod frameworks;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tape, Tensor, TensorError, Var};

//! Audiovisual domain types, the synthetic dataset generator, and
//! dataset/checkpoint persistence.

pub mod checkpoint;
mod store;
mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use store::{load_dataset, save_dataset};
pub use synthetic::{generate_synthetic_dataset, SyntheticDatasetConfig};

use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

/// Sampling rates used by the temporal-resolution experiments (kHz row:
/// 5.5, 11, 22, 44.1).
pub const EXPERIMENT_SAMPLE_RATES: [u32; 4] = [5512, 11025, 22050, 44100];

/// Default clip duration in seconds.
pub const CLIP_SECONDS: f64 = 1.28;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("degenerate dataset config: {0}")]
    DegenerateConfig(String),
    #[error("{0}")]
    Tensor(#[from] TensorError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: String, reason: String },
    #[error("version mismatch in {path}: found {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("truncated file: {path}")]
    Truncated { path: String },
    #[error("manifest error in {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("config hash mismatch: checkpoint has {found}, run has {expected}")]
    ConfigHashMismatch { found: String, expected: String },
}

/// A mono audio signal: amplitudes nominally in `[-1, 1]` plus a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Tensor,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Tensor, sample_rate: u32) -> Result<Self, DataError> {
        if samples.rank() != 1 {
            return Err(DataError::Invalid(format!(
                "waveform must be rank 1, got shape {:?}",
                samples.shape()
            )));
        }
        if sample_rate == 0 {
            return Err(DataError::Invalid("sample rate must be positive".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// A video clip's frames as a `[time, height, width, 3]` tensor with values
/// in `[0, 1]`, plus a frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Tensor,
    pub fps: u32,
}

impl FrameSequence {
    pub fn new(frames: Tensor, fps: u32) -> Result<Self, DataError> {
        if frames.rank() != 4 || frames.shape()[3] != 3 {
            return Err(DataError::Invalid(format!(
                "frames must be [time, height, width, 3], got {:?}",
                frames.shape()
            )));
        }
        if fps == 0 {
            return Err(DataError::Invalid("fps must be positive".into()));
        }
        Ok(FrameSequence { frames, fps })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn duration_seconds(&self) -> f64 {
        self.num_frames() as f64 / self.fps as f64
    }
}

/// A paired audio waveform and frame sequence over one temporal extent:
/// the unit the contrastive loss operates on.
#[derive(Debug, Clone)]
pub struct AVClip {
    pub audio: Waveform,
    pub video: FrameSequence,
    pub source_id: u64,
    pub start_time: f64,
}

impl AVClip {
    /// Builds a clip, checking that the audio and video durations agree
    /// within one frame period.
    pub fn new(
        audio: Waveform,
        video: FrameSequence,
        source_id: u64,
        start_time: f64,
    ) -> Result<Self, DataError> {
        let frame_period = 1.0 / video.fps as f64;
        let diff = (audio.duration_seconds() - video.duration_seconds()).abs();
        if diff > frame_period {
            return Err(DataError::Invalid(format!(
                "audio/video duration mismatch: {:.4}s vs {:.4}s exceeds one frame period",
                audio.duration_seconds(),
                video.duration_seconds()
            )));
        }
        Ok(AVClip {
            audio,
            video,
            source_id,
            start_time,
        })
    }
}

/// One labeled source video of the dataset.
#[derive(Debug, Clone)]
pub struct SourceVideo {
    pub id: u64,
    pub class: usize,
    pub audio: Waveform,
    pub frames: FrameSequence,
}

/// Shared properties of every video in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub fps: u32,
    pub sample_rate: u32,
    pub video_seconds: f64,
    pub frame_height: usize,
    pub frame_width: usize,
}

/// An in-memory dataset: immutable after generation or loading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub videos: Vec<SourceVideo>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avclip_rejects_duration_mismatch() {
        let audio = Waveform::new(Tensor::zeros(&[1000]), 1000).unwrap(); // 1.0 s
        let frames = FrameSequence::new(Tensor::zeros(&[20, 4, 4, 3]), 8).unwrap(); // 2.5 s
        assert!(AVClip::new(audio, frames, 0, 0.0).is_err());

        let audio = Waveform::new(Tensor::zeros(&[1280]), 1000).unwrap(); // 1.28 s
        let frames = FrameSequence::new(Tensor::zeros(&[10, 4, 4, 3]), 8).unwrap(); // 1.25 s
        assert!(AVClip::new(audio, frames, 0, 0.0).is_ok());
    }

    #[test]
    fn frame_sequence_requires_three_channels() {
        assert!(FrameSequence::new(Tensor::zeros(&[2, 4, 4, 1]), 8).is_err());
        assert!(FrameSequence::new(Tensor::zeros(&[2, 4, 4, 3]), 8).is_ok());
    }
}

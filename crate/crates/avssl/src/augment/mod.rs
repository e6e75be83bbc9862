//! Augmentations: the four spatio-temporal transforms with intensity α,
//! audio-domain transforms (pitch shift, colored noise), per-clip-consistent
//! spatial augmentation, and pipeline assembly with cross-stream temporal
//! alignment.
//!
//! Every transform is split into a *draw* phase (randomness realized into
//! [`DrawnParams`]) and a pure *apply* phase: the same input and drawn
//! parameters always produce bitwise identical output. Alignment shares one
//! draw across the audio and video streams of a clip.
//!
//! Fractional temporal positions map to indices by round-half-up.

mod audio;
mod pipeline;
mod spatial;
mod temporal;

pub use audio::{colored_noise, pitch_shift, NoiseColor, MAX_PITCH_SEMITONES};
pub use pipeline::{build_pipeline, DrawRecord, Pipeline, Stream};
pub use spatial::{apply_spatial, draw_spatial, SpatialParams};
pub use temporal::{
    apply_temporal, draw_temporal, fade, resample, time_mask, time_shift, FadeCurve, MaskFill,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("duplicate temporal augmentation kind {0} in one pipeline")]
    DuplicateTemporalKind(&'static str),
    #[error("resample produced a down-sampled length of 0")]
    EmptyResample,
    #[error("crop {crop:?} exceeds frame size {frame:?}")]
    CropTooLarge {
        crop: (usize, usize),
        frame: (usize, usize),
    },
    #[error("colored noise requested at finite SNR on a zero-power signal")]
    ZeroPowerSignal,
    #[error("pitch shift of {0} semitones exceeds ±{max}", max = MAX_PITCH_SEMITONES)]
    PitchOutOfRange(i32),
    #[error("{0}")]
    Data(#[from] crate::data::DataError),
}

/// The transforms a pipeline can contain. Temporal kinds act on the time
/// axis of both streams; audio kinds act on the waveform only; `Spatial`
/// acts on video frames only.
#[derive(Debug, Clone, PartialEq)]
pub enum AugKind {
    Fade,
    TimeMask,
    TimeShift,
    Resample,
    PitchShift { max_semitones: i32 },
    ColoredNoise { color: NoiseColor, snr_db: f64 },
    Spatial { crop: usize, min_scale: f64, jitter: f64 },
}

impl AugKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugKind::Fade => "fade",
            AugKind::TimeMask => "time_mask",
            AugKind::TimeShift => "time_shift",
            AugKind::Resample => "resample",
            AugKind::PitchShift { .. } => "pitch_shift",
            AugKind::ColoredNoise { .. } => "colored_noise",
            AugKind::Spatial { .. } => "spatial",
        }
    }

    pub fn is_temporal(&self) -> bool {
        matches!(
            self,
            AugKind::Fade | AugKind::TimeMask | AugKind::TimeShift | AugKind::Resample
        )
    }

    pub fn is_audio_domain(&self) -> bool {
        matches!(self, AugKind::PitchShift { .. } | AugKind::ColoredNoise { .. })
    }
}

/// Where an audio-domain augmentation sits relative to the temporal block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    BeforeTemporal,
    AfterTemporal,
}

/// Declarative description of one augmentation in a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    /// Maximum intensity along the temporal dimension, in `[0, 1]`.
    /// At 0 every temporal kind is the identity.
    pub alpha: f64,
    /// Audio-domain kinds only.
    pub placement: Placement,
}

impl AugmentationSpec {
    pub fn new(kind: AugKind, alpha: f64) -> Self {
        AugmentationSpec {
            kind,
            alpha,
            placement: Placement::BeforeTemporal,
        }
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AugmentError::InvalidSpec(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        match &self.kind {
            AugKind::PitchShift { max_semitones } => {
                if *max_semitones < 0 || *max_semitones > MAX_PITCH_SEMITONES {
                    return Err(AugmentError::InvalidSpec(format!(
                        "pitch shift range ±{max_semitones} outside 0..={MAX_PITCH_SEMITONES}"
                    )));
                }
            }
            AugKind::ColoredNoise { snr_db, .. } => {
                if snr_db.is_nan() {
                    return Err(AugmentError::InvalidSpec("noise SNR is NaN".into()));
                }
            }
            AugKind::Spatial { crop, min_scale, jitter } => {
                if *crop == 0 || !(0.0..=1.0).contains(min_scale) || !(0.0..=1.0).contains(jitter)
                {
                    return Err(AugmentError::InvalidSpec(
                        "spatial spec needs crop > 0, min_scale and jitter in [0, 1]".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Which value domain a temporal signal lives in; controls mask fill values
/// and clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalDomain {
    /// Amplitudes in `[-1, 1]`; constant fill 0.
    Audio,
    /// Pixel values in `[0, 1]`; constant fill 0.5 (mid-gray).
    Video,
}

/// Realized randomness of one augmentation application. All fractions are
/// relative to the clip's temporal extent.
#[derive(Debug, Clone, PartialEq)]
pub enum DrawnParams {
    Fade {
        curve: FadeCurve,
        left_frac: f64,
        right_frac: f64,
    },
    TimeMask {
        start_frac: f64,
        len_frac: f64,
        fill: MaskFill,
        noise_seed: u64,
    },
    TimeShift {
        shift_frac: f64,
    },
    Resample {
        factor: f64,
    },
    PitchShift {
        semitones: i32,
    },
    ColoredNoise {
        color: NoiseColor,
        snr_db: f64,
        noise_seed: u64,
    },
    Spatial(SpatialParams),
}

impl std::fmt::Display for DrawnParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DrawnParams::Fade {
                curve,
                left_frac,
                right_frac,
            } => write!(f, "fade curve={curve:?} left={left_frac:.6} right={right_frac:.6}"),
            DrawnParams::TimeMask {
                start_frac,
                len_frac,
                fill,
                noise_seed,
            } => write!(
                f,
                "time_mask start={start_frac:.6} len={len_frac:.6} fill={fill:?} seed={noise_seed}"
            ),
            DrawnParams::TimeShift { shift_frac } => {
                write!(f, "time_shift shift={shift_frac:.6}")
            }
            DrawnParams::Resample { factor } => write!(f, "resample factor={factor:.6}"),
            DrawnParams::PitchShift { semitones } => {
                write!(f, "pitch_shift semitones={semitones}")
            }
            DrawnParams::ColoredNoise {
                color,
                snr_db,
                noise_seed,
            } => write!(f, "colored_noise color={color:?} snr_db={snr_db} seed={noise_seed}"),
            DrawnParams::Spatial(p) => write!(
                f,
                "spatial crop=({},{},{},{}) out=({},{}) flip={} b={:.4} c={:.4} s={:.4}",
                p.crop_y, p.crop_x, p.crop_h, p.crop_w, p.out_h, p.out_w, p.flip,
                p.brightness, p.contrast, p.saturation
            ),
        }
    }
}

/// Fraction of the temporal extent to an index, rounding half up.
pub(crate) fn frac_to_index(frac: f64, t: usize) -> usize {
    ((frac * t as f64) + 0.5).floor() as usize
}

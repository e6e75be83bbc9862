//! Clip sampling: training-time positive pairs with a monotonically
//! decreasing interval distribution, and the deterministic 10-clip uniform /
//! 3-crop evaluation sampler.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{AVClip, FrameSequence, SourceVideo, Waveform, CLIP_SECONDS};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("video of {video_seconds:.2}s is shorter than one clip of {clip_seconds:.2}s")]
    VideoTooShort {
        video_seconds: f64,
        clip_seconds: f64,
    },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// The realized draw behind one clip pair. Starts are quantized to the video
/// frame grid; the delay between the two clips is exactly `t_frames`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDraw {
    /// The interval drawn from the decreasing distribution, in seconds,
    /// before quantization to the frame grid.
    pub t_seconds: f64,
    pub t_frames: usize,
    pub first_frame: usize,
    pub second_frame: usize,
}

/// Draws positive clip pairs: an interval `t` from a decreasing density,
/// then a uniform first start with the second clip delayed by exactly `t`.
#[derive(Debug, Clone)]
pub struct ClipPairSampler {
    pub clip_seconds: f64,
}

impl Default for ClipPairSampler {
    fn default() -> Self {
        ClipPairSampler {
            clip_seconds: CLIP_SECONDS,
        }
    }
}

impl ClipPairSampler {
    /// Draws the inter-clip interval in seconds from the triangular density
    /// `p(t) ∝ (T − t)` on `[0, T]`, truncated (renormalized) to
    /// `[0, T − clip]` so the second clip always fits. Closed-form inverse
    /// CDF: `t = T(1 − sqrt(1 − v))` with `v = u · F(T − clip)`.
    pub fn draw_interval(&self, video_seconds: f64, rng: &mut ChaCha8Rng) -> f64 {
        let total = video_seconds;
        let t_max = (total - self.clip_seconds).max(0.0);
        let cdf_at_max = 1.0 - (1.0 - t_max / total).powi(2);
        let u: f64 = rng.gen_range(0.0..1.0);
        let v = u * cdf_at_max;
        total * (1.0 - (1.0 - v).sqrt())
    }

    /// Samples one positive pair from a source video.
    pub fn sample_pair(
        &self,
        video: &SourceVideo,
        rng: &mut ChaCha8Rng,
    ) -> Result<(AVClip, AVClip, PairDraw), SamplingError> {
        let fps = video.frames.fps;
        let video_seconds = video.frames.duration_seconds();
        let clip_frames = clip_frame_count(self.clip_seconds, fps);
        let total_frames = video.frames.num_frames();
        if !fits_one_clip(video, self.clip_seconds) {
            return Err(SamplingError::VideoTooShort {
                video_seconds,
                clip_seconds: self.clip_seconds,
            });
        }

        let t_seconds = self.draw_interval(video_seconds, rng);
        let mut t_frames = (t_seconds * fps as f64 + 0.5).floor() as usize;
        // quantization may overshoot the last valid start by one frame
        t_frames = t_frames.min(total_frames - clip_frames);
        let max_first = total_frames - clip_frames - t_frames;
        let first_frame = rng.gen_range(0..=max_first);
        let second_frame = first_frame + t_frames;

        let a = extract_clip(video, first_frame, self.clip_seconds)?;
        let b = extract_clip(video, second_frame, self.clip_seconds)?;
        Ok((
            a,
            b,
            PairDraw {
                t_seconds,
                t_frames,
                first_frame,
                second_frame,
            },
        ))
    }
}

/// Evaluation-time sampler: `num_clips` uniformly spaced starts paired with
/// `num_crops` deterministic crops tiling the longer spatial axis.
#[derive(Debug, Clone)]
pub struct EvalSampler {
    pub num_clips: usize,
    pub num_crops: usize,
    pub clip_seconds: f64,
    /// Square side of each evaluation crop.
    pub crop_size: usize,
}

impl Default for EvalSampler {
    fn default() -> Self {
        EvalSampler {
            num_clips: 10,
            num_crops: 3,
            clip_seconds: CLIP_SECONDS,
            crop_size: 16,
        }
    }
}

impl EvalSampler {
    /// Fully deterministic: `num_clips × num_crops` clips per video, start
    /// times `i (T − clip)/(num_clips − 1)` quantized to the frame grid and
    /// crops at the start, center, and end of the longer axis.
    pub fn sample(&self, video: &SourceVideo) -> Result<Vec<AVClip>, SamplingError> {
        let fps = video.frames.fps;
        if !fits_one_clip(video, self.clip_seconds) {
            return Err(SamplingError::VideoTooShort {
                video_seconds: video.frames.duration_seconds(),
                clip_seconds: self.clip_seconds,
            });
        }
        let (h, w) = (video.frames.height(), video.frames.width());
        if self.crop_size > h || self.crop_size > w {
            return Err(SamplingError::InvalidConfig(format!(
                "crop {} exceeds frame {h}x{w}",
                self.crop_size
            )));
        }
        let clip_frames = clip_frame_count(self.clip_seconds, fps);
        let total_frames = video.frames.num_frames();
        let span = total_frames - clip_frames;

        let mut out = Vec::with_capacity(self.num_clips * self.num_crops);
        for i in 0..self.num_clips {
            let start = if self.num_clips > 1 {
                ((i as f64 * span as f64 / (self.num_clips - 1) as f64) + 0.5).floor() as usize
            } else {
                0
            };
            let clip = extract_clip(video, start, self.clip_seconds)?;
            for c in 0..self.num_crops {
                out.push(crop_clip(&clip, self.crop_size, c, self.num_crops));
            }
        }
        Ok(out)
    }
}

/// Frames per clip: `round(clip_seconds × fps)`.
pub fn clip_frame_count(clip_seconds: f64, fps: u32) -> usize {
    ((clip_seconds * fps as f64) + 0.5).floor() as usize
}

/// Audio samples per clip: `round(clip_seconds × sample_rate)`.
pub fn clip_sample_count(clip_seconds: f64, sample_rate: u32) -> usize {
    ((clip_seconds * sample_rate as f64) + 0.5).floor() as usize
}

/// A video hosts a clip when it has the quantized frame count and enough
/// audio samples; the comparison is on the discrete grids, not in seconds.
pub fn fits_one_clip(video: &SourceVideo, clip_seconds: f64) -> bool {
    video.frames.num_frames() >= clip_frame_count(clip_seconds, video.frames.fps)
        && video.audio.len() >= clip_sample_count(clip_seconds, video.audio.sample_rate)
}

/// Cuts a clip at a frame-grid start: video frames
/// `[start, start + clip_frames)` and audio at the exactly corresponding
/// sample offset, so the two streams never drift.
pub fn extract_clip(
    video: &SourceVideo,
    start_frame: usize,
    clip_seconds: f64,
) -> Result<AVClip, SamplingError> {
    let fps = video.frames.fps;
    let sr = video.audio.sample_rate;
    let clip_frames = clip_frame_count(clip_seconds, fps);
    let clip_samples = clip_sample_count(clip_seconds, sr);
    let total_frames = video.frames.num_frames();
    if start_frame + clip_frames > total_frames || video.audio.len() < clip_samples {
        return Err(SamplingError::VideoTooShort {
            video_seconds: video.frames.duration_seconds(),
            clip_seconds,
        });
    }

    let (h, w) = (video.frames.height(), video.frames.width());
    let stride = h * w * 3;
    let fdata = video.frames.frames.data()
        [start_frame * stride..(start_frame + clip_frames) * stride]
        .to_vec();
    let frames = FrameSequence {
        frames: Tensor::new(vec![clip_frames, h, w, 3], fdata).expect("clip frames shape"),
        fps,
    };

    let start_sample = ((start_frame as f64 / fps as f64 * sr as f64) + 0.5).floor() as usize;
    let start_sample = start_sample.min(video.audio.len().saturating_sub(clip_samples));
    let adata = video.audio.samples.data()[start_sample..start_sample + clip_samples].to_vec();
    let audio = Waveform {
        samples: Tensor::from_vec(adata),
        sample_rate: sr,
    };

    Ok(AVClip {
        audio,
        video: frames,
        source_id: video.id,
        start_time: start_frame as f64 / fps as f64,
    })
}

/// Deterministic crop `index` of `count` tiling the longer spatial axis at
/// start / center / end; the shorter axis is centered.
fn crop_clip(clip: &AVClip, size: usize, index: usize, count: usize) -> AVClip {
    let (t, h, w) = (
        clip.video.num_frames(),
        clip.video.height(),
        clip.video.width(),
    );
    let offset_along = |extent: usize| -> usize {
        if count <= 1 {
            (extent - size) / 2
        } else {
            index * (extent - size) / (count - 1)
        }
    };
    let (cy, cx) = if w >= h {
        ((h - size) / 2, offset_along(w))
    } else {
        (offset_along(h), (w - size) / 2)
    };
    let src = clip.video.frames.data();
    let mut out = vec![0.0; t * size * size * 3];
    for ti in 0..t {
        for y in 0..size {
            let srow = ((ti * h + cy + y) * w + cx) * 3;
            let drow = (ti * size + y) * size * 3;
            out[drow..drow + size * 3].copy_from_slice(&src[srow..srow + size * 3]);
        }
    }
    AVClip {
        audio: clip.audio.clone(),
        video: FrameSequence {
            frames: Tensor::new(vec![t, size, size, 3], out).expect("crop shape"),
            fps: clip.video.fps,
        },
        source_id: clip.source_id,
        start_time: clip.start_time,
    }
}

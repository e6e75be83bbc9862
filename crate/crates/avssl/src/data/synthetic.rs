//! Deterministic synthetic audiovisual dataset.
//!
//! Each class pairs an audio signature (a sinusoid at a class-specific base
//! frequency plus harmonics and noise) with a visual signature (a colored
//! disk moving along a class-specific trajectory over a textured background).
//! Audio and video cues of the same class always co-occur in one video.
//!
//! Instance-level variability comes from per-video randomness: phases, a
//! narrow-band warble tone high in the spectrum, background texture, and
//! per-frame brightness flicker. Those cues identify a *video* rather than a
//! class, which is exactly what temporal augmentation is supposed to make
//! unreliable during contrastive pre-training.

use rand::Rng;

use super::{DataError, Dataset, DatasetMeta, FrameSequence, SourceVideo, Waveform};
use crate::rng::{purpose, randn, substream};
use crate::tensor::Tensor;

use std::f64::consts::PI;

/// Number of distinct shape trajectories.
const NUM_TRAJECTORIES: usize = 4;
/// Number of distinct shape hues.
const NUM_HUES: usize = 8;
/// Geometric spacing between class base frequencies.
const CLASS_FREQ_RATIO: f64 = 1.35;
/// Default base frequency as a fraction of Nyquist when `base_freq_hz` is 0.
const AUTO_BASE_FREQ_REL: f64 = 0.055;
/// The per-video warble tone lives in this band, relative to Nyquist.
const WARBLE_BAND_REL: (f64, f64) = (0.65, 0.94);

const AMP_FUNDAMENTAL: f64 = 0.12;
const AMP_HARMONIC2: f64 = 0.04;
const AMP_WARBLE: f64 = 0.45;
const AMP_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetConfig {
    pub num_videos: usize,
    pub num_classes: usize,
    pub video_seconds: f64,
    pub fps: u32,
    pub sample_rate: u32,
    pub seed: u64,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Base frequency of class 0 in Hz; 0 picks a rate-relative default.
    pub base_freq_hz: f64,
    /// Offset added to video ids, so a held-out set generated from the same
    /// seed draws disjoint per-video randomness.
    pub id_offset: u64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        SyntheticDatasetConfig {
            num_videos: 256,
            num_classes: 4,
            video_seconds: 10.0,
            fps: 8,
            sample_rate: 11025,
            seed: 0,
            frame_height: 16,
            frame_width: 24,
            base_freq_hz: 0.0,
            id_offset: 0,
        }
    }
}

impl SyntheticDatasetConfig {
    /// Base frequency of class `k`.
    pub fn class_frequency(&self, class: usize) -> f64 {
        let base = if self.base_freq_hz > 0.0 {
            self.base_freq_hz
        } else {
            AUTO_BASE_FREQ_REL * self.sample_rate as f64 / 2.0
        };
        base * CLASS_FREQ_RATIO.powi(class as i32)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::DegenerateConfig(
                "need at least 2 classes".into(),
            ));
        }
        if self.num_videos == 0 {
            return Err(DataError::DegenerateConfig("need at least 1 video".into()));
        }
        if self.video_seconds < 2.0 * super::CLIP_SECONDS {
            return Err(DataError::DegenerateConfig(format!(
                "videos must span at least two clips ({}s)",
                2.0 * super::CLIP_SECONDS
            )));
        }
        if !super::EXPERIMENT_SAMPLE_RATES.contains(&self.sample_rate) {
            return Err(DataError::DegenerateConfig(format!(
                "sample rate {} is not one of {:?}",
                self.sample_rate,
                super::EXPERIMENT_SAMPLE_RATES
            )));
        }
        if self.fps == 0 || self.frame_height < 8 || self.frame_width < 8 {
            return Err(DataError::DegenerateConfig(
                "fps must be positive and frames at least 8x8".into(),
            ));
        }
        // Audio signatures stay distinguishable when the strongest harmonic
        // of the highest class sits clearly below the warble band.
        let nyquist = self.sample_rate as f64 / 2.0;
        let top = self.class_frequency(self.num_classes - 1);
        if 2.0 * top > 0.62 * nyquist {
            return Err(DataError::DegenerateConfig(format!(
                "{} classes exceed the distinguishable audio signatures at {} Hz",
                self.num_classes, self.sample_rate
            )));
        }
        if self.num_classes > NUM_TRAJECTORIES * NUM_HUES {
            return Err(DataError::DegenerateConfig(format!(
                "{} classes exceed the {} distinguishable visual signatures",
                self.num_classes,
                NUM_TRAJECTORIES * NUM_HUES
            )));
        }
        Ok(())
    }
}

/// Generates the labeled source videos. A pure function of the config.
pub fn generate_synthetic_dataset(cfg: &SyntheticDatasetConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for index in 0..cfg.num_videos {
        let class = index % cfg.num_classes;
        let id = cfg.id_offset + index as u64;
        let audio = synthesize_audio(cfg, class, id)?;
        let frames = synthesize_video(cfg, class, id)?;
        videos.push(SourceVideo {
            id,
            class,
            audio,
            frames,
        });
    }
    Ok(Dataset {
        meta: DatasetMeta {
            num_classes: cfg.num_classes,
            fps: cfg.fps,
            sample_rate: cfg.sample_rate,
            video_seconds: cfg.video_seconds,
            frame_height: cfg.frame_height,
            frame_width: cfg.frame_width,
        },
        videos,
    })
}

fn synthesize_audio(
    cfg: &SyntheticDatasetConfig,
    class: usize,
    id: u64,
) -> Result<Waveform, DataError> {
    let mut rng = substream(cfg.seed, purpose::DATASET_AUDIO, id, 0);
    let sr = cfg.sample_rate as f64;
    let nyquist = sr / 2.0;
    let n = (cfg.video_seconds * sr).round() as usize;
    let f0 = cfg.class_frequency(class);

    let phase_f: f64 = rng.gen_range(0.0..2.0 * PI);
    let phase_h2: f64 = rng.gen_range(0.0..2.0 * PI);
    let warble_center: f64 =
        rng.gen_range(WARBLE_BAND_REL.0 * nyquist..WARBLE_BAND_REL.1 * nyquist);
    let warble_rate: f64 = rng.gen_range(0.5..2.0);
    let warble_depth = 0.01 * nyquist;
    let warble_phase: f64 = rng.gen_range(0.0..2.0 * PI);

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        // Phase integral of the frequency-wobbled tone.
        let warble = (2.0 * PI * warble_center * t
            - (warble_depth / warble_rate) * (2.0 * PI * warble_rate * t + warble_phase).cos())
        .sin();
        let v = AMP_FUNDAMENTAL * (2.0 * PI * f0 * t + phase_f).sin()
            + AMP_HARMONIC2 * (2.0 * PI * 2.0 * f0 * t + phase_h2).sin()
            + AMP_WARBLE * warble
            + AMP_NOISE * randn(&mut rng);
        samples.push(v.clamp(-1.0, 1.0));
    }
    Waveform::new(Tensor::from_vec(samples), cfg.sample_rate)
}

fn synthesize_video(
    cfg: &SyntheticDatasetConfig,
    class: usize,
    id: u64,
) -> Result<FrameSequence, DataError> {
    let mut rng = substream(cfg.seed, purpose::DATASET_VIDEO, id, 0);
    let (h, w) = (cfg.frame_height, cfg.frame_width);
    let t_frames = (cfg.video_seconds * cfg.fps as f64).round() as usize;

    // Static per-video background texture, gray-valued.
    let texture: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.35..0.55)).collect();
    // Per-frame brightness flicker unique to the video.
    let flicker: Vec<f64> = (0..t_frames).map(|_| rng.gen_range(-0.08..0.08)).collect();

    let trajectory = class % NUM_TRAJECTORIES;
    let value: f64 = rng.gen_range(0.55..0.8);
    let rgb = hsv_to_rgb((class % NUM_HUES) as f64 * 45.0, 0.25, value);
    let speed = (0.3 + 0.12 * (class % NUM_TRAJECTORIES) as f64) * rng.gen_range(0.9..1.1);
    let motion_phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let radius = (h.min(w) as f64) / 5.0;

    let mut frames = vec![0.0; t_frames * h * w * 3];
    for ti in 0..t_frames {
        let t = ti as f64 / cfg.fps as f64;
        let u = (2.0 * PI * speed * t + motion_phase).sin() * 0.5 + 0.5;
        let (cx, cy) = match trajectory {
            0 => (
                radius + u * (w as f64 - 2.0 * radius),
                h as f64 / 2.0,
            ),
            1 => (
                w as f64 / 2.0,
                radius + u * (h as f64 - 2.0 * radius),
            ),
            2 => (
                radius + u * (w as f64 - 2.0 * radius),
                radius + u * (h as f64 - 2.0 * radius),
            ),
            _ => {
                let angle = 2.0 * PI * speed * t + motion_phase;
                (
                    w as f64 / 2.0 + (w as f64 / 2.0 - radius) * angle.cos(),
                    h as f64 / 2.0 + (h as f64 / 2.0 - radius) * angle.sin(),
                )
            }
        };
        for y in 0..h {
            for x in 0..w {
                let base = texture[y * w + x] + flicker[ti];
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let inside = dx * dx + dy * dy <= radius * radius;
                let idx = ((ti * h + y) * w + x) * 3;
                for c in 0..3 {
                    let v = if inside { 0.55 * base + 0.45 * rgb[c] } else { base };
                    frames[idx + c] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    FrameSequence::new(Tensor::new(vec![t_frames, h, w, 3], frames)?, cfg.fps)
}

fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (hue_deg % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticDatasetConfig {
        SyntheticDatasetConfig {
            num_videos: 8,
            num_classes: 4,
            video_seconds: 3.0,
            fps: 8,
            sample_rate: 5512,
            seed: 42,
            frame_height: 12,
            frame_width: 16,
            base_freq_hz: 0.0,
            id_offset: 0,
        }
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let cfg = small_cfg();
        let a = generate_synthetic_dataset(&cfg).unwrap();
        let b = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(a.videos.len(), b.videos.len());
        for (va, vb) in a.videos.iter().zip(&b.videos) {
            assert_eq!(va.audio.samples.data(), vb.audio.samples.data());
            assert_eq!(va.frames.frames.data(), vb.frames.frames.data());
        }
    }

    #[test]
    fn classes_are_balanced() {
        let mut cfg = small_cfg();
        cfg.num_videos = 256;
        cfg.num_classes = 4;
        let ds = generate_synthetic_dataset(&cfg).unwrap();
        let mut counts = vec![0usize; 4];
        for v in &ds.videos {
            counts[v.class] += 1;
        }
        assert_eq!(counts, vec![64, 64, 64, 64]);
    }

    #[test]
    fn degenerate_configs_error() {
        let mut cfg = small_cfg();
        cfg.num_classes = 1;
        assert!(generate_synthetic_dataset(&cfg).is_err());

        let mut cfg = small_cfg();
        cfg.video_seconds = 2.0;
        assert!(generate_synthetic_dataset(&cfg).is_err());

        let mut cfg = small_cfg();
        cfg.num_classes = 40;
        cfg.num_videos = 40;
        assert!(generate_synthetic_dataset(&cfg).is_err());

        let mut cfg = small_cfg();
        cfg.sample_rate = 8000;
        assert!(generate_synthetic_dataset(&cfg).is_err());
    }

    #[test]
    fn frame_values_in_unit_range() {
        let ds = generate_synthetic_dataset(&small_cfg()).unwrap();
        for v in &ds.videos {
            assert!(v
                .frames
                .frames
                .data()
                .iter()
                .all(|&p| (0.0..=1.0).contains(&p)));
            assert!(v.audio.samples.data().iter().all(|&s| (-1.0..=1.0).contains(&s)));
        }
    }

    #[test]
    fn class_zero_dominant_frequency_matches_f0() {
        // Periodogram oracle on the generated audio: the strongest bin must
        // sit within one bin of the configured class-0 base frequency.
        let mut cfg = small_cfg();
        cfg.video_seconds = 4.0;
        cfg.base_freq_hz = 160.0;
        let ds = generate_synthetic_dataset(&cfg).unwrap();
        let video = ds.videos.iter().find(|v| v.class == 0).unwrap();
        let samples = video.audio.samples.data();

        let mut planner = rustfft::FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(samples.len());
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = samples
            .iter()
            .map(|&s| rustfft::num_complex::Complex::new(s, 0.0))
            .collect();
        fft.process(&mut buf);
        let half = samples.len() / 2;
        let (best_bin, _) = buf[1..half]
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1, c.norm_sqr()))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let bin_hz = cfg.sample_rate as f64 / samples.len() as f64;
        let dominant = best_bin as f64 * bin_hz;
        assert!(
            (dominant - 160.0).abs() <= bin_hz,
            "dominant {dominant} Hz vs configured 160 Hz (bin {bin_hz} Hz)"
        );
    }
}

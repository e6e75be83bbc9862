//! Log-mel-spectrogram extraction.
//!
//! Hann-windowed short-time Fourier magnitude² through a triangular mel
//! filterbank on the HTK scale, then a natural log with a floor. No center
//! padding: frames are fully interior, so the frame count is exactly
//! `floor((L − n_fft)/hop) + 1`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::data::Waveform;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid spectrogram config: {0}")]
    InvalidConfig(String),
    #[error("signal of {len} samples is shorter than one window of {n_fft}")]
    SignalTooShort { len: usize, n_fft: usize },
}

/// Hop sizes used by the temporal-resolution experiments.
pub const EXPERIMENT_HOPS: [usize; 4] = [32, 64, 128, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// 0 means Nyquist.
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            n_fft: 512,
            hop: 128,
            n_mels: 64,
            f_min: 0.0,
            f_max: 0.0,
            log_floor: 1e-10,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        if !EXPERIMENT_HOPS.contains(&self.hop) {
            return Err(FeatureError::InvalidConfig(format!(
                "hop {} is not one of {:?}",
                self.hop, EXPERIMENT_HOPS
            )));
        }
        if self.hop > self.n_fft {
            return Err(FeatureError::InvalidConfig(format!(
                "hop {} exceeds window {}",
                self.hop, self.n_fft
            )));
        }
        if self.n_mels < 2 {
            return Err(FeatureError::InvalidConfig("need at least 2 mel bins".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(FeatureError::InvalidConfig("log floor must be positive".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let f_max = self.effective_f_max(sample_rate);
        if f_max > nyquist || self.f_min < 0.0 || self.f_min >= f_max {
            return Err(FeatureError::InvalidConfig(format!(
                "frequency range [{}, {}] invalid for Nyquist {}",
                self.f_min, f_max, nyquist
            )));
        }
        Ok(())
    }

    pub fn effective_f_max(&self, sample_rate: u32) -> f64 {
        if self.f_max > 0.0 {
            self.f_max
        } else {
            sample_rate as f64 / 2.0
        }
    }

    /// Frame count for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        if len < self.n_fft {
            None
        } else {
            Some((len - self.n_fft) / self.hop + 1)
        }
    }
}

/// A log-power mel spectrogram: `[n_mels, frames]` plus the config used.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub values: Tensor,
    pub config: SpectrogramConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.values.shape()[1]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies of the triangular filters for a config: entry `i` is
/// the peak of filter `i`.
pub fn filter_centers(cfg: &SpectrogramConfig, sample_rate: u32) -> Vec<f64> {
    mel_points(cfg, sample_rate)[1..=cfg.n_mels].to_vec()
}

fn mel_points(cfg: &SpectrogramConfig, sample_rate: u32) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.effective_f_max(sample_rate));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Reusable extractor: precomputed window, FFT plan, and sparse filterbank.
pub struct MelExtractor {
    cfg: SpectrogramConfig,
    sample_rate: u32,
    window: Vec<f64>,
    /// Per filter: first FFT bin index and the triangle weights from there.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
    fft_buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    power: Vec<f64>,
}

impl MelExtractor {
    pub fn new(cfg: SpectrogramConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        cfg.validate(sample_rate)?;
        let n = cfg.n_fft;
        // periodic Hann
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect();

        let pts = mel_points(&cfg, sample_rate);
        let bin_hz = sample_rate as f64 / n as f64;
        let n_bins = n / 2 + 1;
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for i in 0..cfg.n_mels {
            let (left, center, right) = (pts[i], pts[i + 1], pts[i + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
                if w > 0.0 {
                    if first.is_none() {
                        first = Some(k);
                    }
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let scratch_len = fft.get_inplace_scratch_len();
        Ok(MelExtractor {
            cfg,
            sample_rate,
            window,
            filters,
            fft,
            fft_buf: vec![Complex::new(0.0, 0.0); n],
            scratch: vec![Complex::new(0.0, 0.0); scratch_len],
            power: vec![0.0; n_bins],
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.cfg
    }

    /// Extracts the log-mel spectrogram of a raw sample buffer.
    pub fn extract_samples(&mut self, samples: &[f64]) -> Result<Spectrogram, FeatureError> {
        let n = self.cfg.n_fft;
        let frames = self
            .cfg
            .num_frames(samples.len())
            .ok_or(FeatureError::SignalTooShort {
                len: samples.len(),
                n_fft: n,
            })?;
        let n_mels = self.cfg.n_mels;
        let n_bins = n / 2 + 1;
        let mut out = vec![0.0; n_mels * frames];
        for f in 0..frames {
            let start = f * self.cfg.hop;
            for i in 0..n {
                self.fft_buf[i] = Complex::new(samples[start + i] * self.window[i], 0.0);
            }
            self.fft
                .process_with_scratch(&mut self.fft_buf, &mut self.scratch);
            for k in 0..n_bins {
                self.power[k] = self.fft_buf[k].norm_sqr();
            }
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let mut acc = 0.0;
                for (w, p) in weights.iter().zip(&self.power[*first..]) {
                    acc += w * p;
                }
                out[m * frames + f] = acc.max(self.cfg.log_floor).ln();
            }
        }
        Ok(Spectrogram {
            values: Tensor::new(vec![n_mels, frames], out).expect("spectrogram shape"),
            config: self.cfg.clone(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn extract(&mut self, audio: &Waveform) -> Result<Spectrogram, FeatureError> {
        debug_assert_eq!(audio.sample_rate, self.sample_rate);
        self.extract_samples(audio.samples.data())
    }
}

/// One-shot convenience wrapper around [`MelExtractor`].
pub fn mel_spectrogram(audio: &Waveform, cfg: &SpectrogramConfig) -> Result<Spectrogram, FeatureError> {
    MelExtractor::new(cfg.clone(), audio.sample_rate)?.extract(audio)
}

//! Audio-domain augmentations: pitch shift and colored noise.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AugmentError;
use crate::data::Waveform;
use crate::rng::randn;
use crate::tensor::Tensor;

/// Hard bound on pitch shift magnitude in semitones.
pub const MAX_PITCH_SEMITONES: i32 = 15;

/// Shifts pitch by resampling the waveform with linear interpolation at
/// factor `2^(semitones/12)`, then trimming or zero-padding back to the
/// original length. The dominant frequency scales by the same factor.
///
/// This changes duration before the trim/pad, which is an acknowledged
/// approximation of a true pitch shifter.
pub fn pitch_shift(audio: &Waveform, semitones: i32) -> Result<Waveform, AugmentError> {
    if semitones.abs() > MAX_PITCH_SEMITONES {
        return Err(AugmentError::PitchOutOfRange(semitones));
    }
    if semitones == 0 {
        return Ok(audio.clone());
    }
    let src = audio.samples.data();
    let t = src.len();
    let rate = 2f64.powf(semitones as f64 / 12.0);
    let out_len = ((t as f64 / rate) + 0.5).floor() as usize;
    let mut out = vec![0.0; t];
    for (i, slot) in out.iter_mut().enumerate().take(out_len.min(t)) {
        let pos = i as f64 * rate;
        let i0 = pos.floor() as usize;
        if i0 + 1 < t {
            let frac = pos - i0 as f64;
            *slot = src[i0] * (1.0 - frac) + src[i0 + 1] * frac;
        } else if i0 < t {
            *slot = src[i0];
        }
    }
    Ok(Waveform {
        samples: Tensor::from_vec(out),
        sample_rate: audio.sample_rate,
    })
}

/// Power spectral density slope of the noise, per octave on log-log axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseColor {
    /// slope 0
    White,
    /// slope ≈ −1
    Pink,
    /// slope ≈ −2
    Brown,
}

impl NoiseColor {
    fn beta(&self) -> f64 {
        match self {
            NoiseColor::White => 0.0,
            NoiseColor::Pink => 1.0,
            NoiseColor::Brown => 2.0,
        }
    }
}

/// Generates a colored-noise buffer of length `n` with unit-ish power,
/// spectrally shaped so bin power scales as `f^(-beta)`.
pub fn noise_buffer(n: usize, color: NoiseColor, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise: Vec<f64> = (0..n).map(|_| randn(&mut rng)).collect();
    if color == NoiseColor::White || n < 4 {
        return noise;
    }
    let beta = color.beta();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = noise.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..n {
        // mirror-symmetric shaping keeps the spectrum Hermitian
        let f = k.min(n - k) as f64;
        let scale = f.powf(-beta / 2.0);
        buf[k] *= scale;
    }
    ifft.process(&mut buf);
    for (o, c) in noise.iter_mut().zip(&buf) {
        *o = c.re / n as f64;
    }
    noise
}

/// Adds colored noise scaled to the requested signal-to-noise ratio.
/// An infinite SNR is the identity; a finite SNR on a zero-power signal is
/// an error.
pub fn colored_noise(
    audio: &Waveform,
    color: NoiseColor,
    snr_db: f64,
    seed: u64,
) -> Result<Waveform, AugmentError> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(audio.clone());
    }
    let src = audio.samples.data();
    let n = src.len();
    let signal_power: f64 = src.iter().map(|&v| v * v).sum::<f64>() / n as f64;
    if signal_power == 0.0 {
        return Err(AugmentError::ZeroPowerSignal);
    }
    let noise = noise_buffer(n, color, seed);
    let noise_power: f64 = noise.iter().map(|&v| v * v).sum::<f64>() / n as f64;
    let target_power = signal_power / 10f64.powf(snr_db / 10.0);
    let gain = (target_power / noise_power).sqrt();
    let data: Vec<f64> = src
        .iter()
        .zip(&noise)
        .map(|(&s, &nz)| s + gain * nz)
        .collect();
    Ok(Waveform {
        samples: Tensor::from_vec(data),
        sample_rate: audio.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(hz: f64, sr: u32, n: usize) -> Waveform {
        let data: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(Tensor::from_vec(data), sr).unwrap()
    }

    fn dominant_hz(w: &Waveform) -> f64 {
        let n = w.len();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f64>> =
            w.samples.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        let best = buf[1..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().partial_cmp(&b.1.norm_sqr()).unwrap())
            .unwrap()
            .0
            + 1;
        best as f64 * w.sample_rate as f64 / n as f64
    }

    #[test]
    fn zero_semitones_is_bit_exact_identity() {
        let w = sine(440.0, 44100, 4096);
        let out = pitch_shift(&w, 0).unwrap();
        assert_eq!(out.samples.data(), w.samples.data());
    }

    #[test]
    fn octave_up_doubles_dominant_frequency() {
        // +12 semitones is a resample factor of exactly 2
        assert_eq!(2f64.powf(12.0 / 12.0), 2.0);
        let sr = 44100;
        let w = sine(440.0, sr, 1 << 14);
        let out = pitch_shift(&w, 12).unwrap();
        let bin = sr as f64 / (1 << 14) as f64;
        let dom = dominant_hz(&out);
        assert!(
            (dom - 880.0).abs() <= bin,
            "dominant {dom} Hz, expected 880 ± {bin}"
        );
        assert_eq!(out.len(), w.len());
    }

    #[test]
    fn pitch_down_preserves_length() {
        let w = sine(880.0, 22050, 4000);
        let out = pitch_shift(&w, -7).unwrap();
        assert_eq!(out.len(), 4000);
        let dom = dominant_hz(&out);
        let expected = 880.0 * 2f64.powf(-7.0 / 12.0);
        assert!((dom - expected).abs() < 22050.0 / 4000.0 * 2.0);
    }

    #[test]
    fn out_of_range_pitch_errors() {
        let w = sine(440.0, 22050, 512);
        assert!(matches!(
            pitch_shift(&w, 16),
            Err(AugmentError::PitchOutOfRange(16))
        ));
    }

    #[test]
    fn infinite_snr_is_identity() {
        let w = sine(300.0, 11025, 2048);
        let out = colored_noise(&w, NoiseColor::Pink, f64::INFINITY, 1).unwrap();
        assert_eq!(out.samples.data(), w.samples.data());
    }

    #[test]
    fn zero_power_signal_errors() {
        let w = Waveform::new(Tensor::zeros(&[512]), 11025).unwrap();
        assert!(matches!(
            colored_noise(&w, NoiseColor::White, 10.0, 1),
            Err(AugmentError::ZeroPowerSignal)
        ));
    }

    #[test]
    fn snr_scaling_is_respected() {
        let w = sine(500.0, 11025, 8192);
        let out = colored_noise(&w, NoiseColor::White, 6.0, 3).unwrap();
        let noise: Vec<f64> = out
            .samples
            .data()
            .iter()
            .zip(w.samples.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let p_sig: f64 = w.samples.data().iter().map(|&v| v * v).sum::<f64>();
        let p_noise: f64 = noise.iter().map(|&v| v * v).sum::<f64>();
        let snr = 10.0 * (p_sig / p_noise).log10();
        assert!((snr - 6.0).abs() < 1e-9);
    }
}

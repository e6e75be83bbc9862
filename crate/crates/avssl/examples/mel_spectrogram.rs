//! Waveform to log-mel spectrogram.
//!
//! Run with: cargo run --release --example mel_spectrogram

use avssl::data::Waveform;
use avssl::features::{filter_centers, mel_spectrogram, SpectrogramConfig};
use avssl::tensor::Tensor;

fn main() {
    let sr = 11025u32;
    let cfg = SpectrogramConfig::default();

    // a pure tone at the center of mel filter 20
    let centers = filter_centers(&cfg, sr);
    let hz = centers[20];
    let samples: Vec<f64> = (0..4096)
        .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / sr as f64).sin())
        .collect();
    let wave = Waveform::new(Tensor::from_vec(samples), sr).unwrap();
    let spec = mel_spectrogram(&wave, &cfg).unwrap();
    println!(
        "sine at {hz:.1} Hz -> spectrogram [{} mels x {} frames]",
        spec.n_mels(),
        spec.num_frames()
    );

    let frames = spec.num_frames();
    let energy_of = |m: usize| -> f64 {
        spec.values.data()[m * frames..(m + 1) * frames].iter().sum::<f64>() / frames as f64
    };
    let argmax = (0..spec.n_mels())
        .max_by(|&a, &b| energy_of(a).partial_cmp(&energy_of(b)).unwrap())
        .unwrap();
    println!("strongest mel bin: {argmax} (the tone sits on filter 20)");

    // a coarse text rendering of the band energies
    println!("\nmean log-power per mel band:");
    for m in (0..spec.n_mels()).step_by(8) {
        let e = energy_of(m);
        let bar = "#".repeat(((e + 24.0).max(0.0) * 1.2) as usize);
        println!("mel {m:>2} {e:>8.2} {bar}");
    }

    // hop halving doubles the frame count per the closed form
    for hop in [256usize, 128, 64, 32] {
        let c = SpectrogramConfig { hop, ..Default::default() };
        let s = mel_spectrogram(&wave, &c).unwrap();
        println!("hop {hop:>3} -> {} frames", s.num_frames());
    }
}

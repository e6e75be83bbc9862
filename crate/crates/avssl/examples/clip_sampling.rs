//! Positive clip-pair sampling and the 10-clip / 3-crop evaluation sampler.
//!
//! Run with: cargo run --release --example clip_sampling

use avssl::data::{generate_synthetic_dataset, SyntheticDatasetConfig};
use avssl::rng::substream;
use avssl::sampling::{ClipPairSampler, EvalSampler};

fn main() {
    let ds = generate_synthetic_dataset(&SyntheticDatasetConfig {
        num_videos: 1,
        num_classes: 2,
        video_seconds: 10.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let video = &ds.videos[0];

    // the interval between the two clips follows a decreasing density
    let sampler = ClipPairSampler::default();
    let mut rng = substream(3, 0x50, 0, 0);
    let n = 100_000;
    let bins = 12;
    let t_max = 10.0 - sampler.clip_seconds;
    let mut hist = vec![0usize; bins];
    for _ in 0..n {
        let t = sampler.draw_interval(10.0, &mut rng);
        hist[((t / t_max) * bins as f64).min(bins as f64 - 1.0) as usize] += 1;
    }
    println!("interval histogram over {n} draws (should fall monotonically):");
    for (i, count) in hist.iter().enumerate() {
        let bar = "#".repeat(count / 400);
        println!("[{:4.2}, {:4.2}) {count:>6} {bar}",
            i as f64 * t_max / bins as f64,
            (i + 1) as f64 * t_max / bins as f64);
    }

    // a few realized pairs: the delay between the clips is exact
    println!("\nsample pairs:");
    for _ in 0..5 {
        let (a, b, draw) = sampler.sample_pair(video, &mut rng).unwrap();
        println!(
            "  t = {:.3}s -> first frame {} (t={:.3}s), second frame {} (t={:.3}s), delta {} frames",
            draw.t_seconds, draw.first_frame, a.start_time, draw.second_frame, b.start_time,
            draw.t_frames
        );
    }

    // evaluation sampling is deterministic: 10 starts x 3 crops
    let eval = EvalSampler::default();
    let clips = eval.sample(video).unwrap();
    println!("\neval clips: {} total", clips.len());
    let starts: Vec<String> = clips
        .iter()
        .step_by(3)
        .map(|c| format!("{:.2}", c.start_time))
        .collect();
    println!("start times: {}", starts.join(" "));
    println!(
        "each clip is {} frames of {}x{}",
        clips[0].video.num_frames(),
        clips[0].video.height(),
        clips[0].video.width()
    );
}

//! The four spatio-temporal transforms and cross-stream alignment.
//!
//! Run with: cargo run --release --example augmentation_suite

use avssl::augment::{
    build_pipeline, fade, resample, time_mask, time_shift, AugKind, AugmentationSpec, FadeCurve,
    MaskFill, SignalDomain, Stream,
};
use avssl::data::{generate_synthetic_dataset, SyntheticDatasetConfig};
use avssl::rng::clip_substream;
use avssl::sampling::extract_clip;
use avssl::tensor::Tensor;

fn show(name: &str, t: &Tensor) {
    let vals: Vec<String> = t.data().iter().map(|v| format!("{v:4.1}")).collect();
    println!("{name:<26} [{}]", vals.join(" "));
}

fn main() {
    let ramp = Tensor::from_vec((0..12).map(|i| i as f64).collect());
    show("input ramp", &ramp);
    show(
        "fade linear l=1/3 r=1/4",
        &fade(&ramp, FadeCurve::Linear, 1.0 / 3.0, 0.25),
    );
    show(
        "mask [0.25, 0.5) const",
        &time_mask(&ramp, SignalDomain::Audio, 0.25, 0.25, MaskFill::Constant, 0),
    );
    show("shift +1/3 (rollover)", &time_shift(&ramp, 1.0 / 3.0));
    show("resample factor 0.5", &resample(&ramp, 0.5).unwrap());

    // alignment: one draw shared across the audio and video streams
    let ds = generate_synthetic_dataset(&SyntheticDatasetConfig {
        num_videos: 1,
        num_classes: 2,
        video_seconds: 3.0,
        fps: 8,
        sample_rate: 5512,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let clip = extract_clip(&ds.videos[0], 0, 1.28).unwrap();
    let specs = vec![
        AugmentationSpec::new(AugKind::Fade, 0.8),
        AugmentationSpec::new(AugKind::TimeShift, 0.8),
        AugmentationSpec::new(AugKind::Resample, 0.8),
    ];

    for aligned in [true, false] {
        let pipeline = build_pipeline(&specs, aligned).unwrap();
        let mut rng = clip_substream(5, 0, 0, 0);
        let (_, records) = pipeline.apply(&clip, &mut rng).unwrap();
        println!("\naligned = {aligned}:");
        for r in &records {
            let stream = match r.stream {
                Stream::Both => "audio+video",
                Stream::Audio => "audio",
                Stream::Video => "video",
            };
            println!("  {:<11} {}", stream, r.params);
        }
    }
}

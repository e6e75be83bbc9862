//! The audiovisual model: a small conv encoder per stream, concat fusion,
//! and the projection / prediction heads.
//!
//! Both branches end in global pooling, so the output width is fixed no
//! matter the temporal resolution of the inputs: video frames pass through
//! 2-D conv stages with time folded into the batch axis, then a temporal
//! max-pool; audio spectrograms pass through 2-D conv stages over
//! [mel, frames], a max-pool over the time axis, and a mean over mel bands.

use rand_chacha::ChaCha8Rng;

use super::{BnStates, BoundParams, FrameworkError, ParamSet};
use crate::data::AVClip;
use crate::features::MelExtractor;
use crate::rng::randn;
use crate::tensor::{BatchNormState, BnMode, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStageCfg {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvStageCfg {
    pub fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvStageCfg {
            out_channels,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub video_stages: Vec<ConvStageCfg>,
    pub audio_stages: Vec<ConvStageCfg>,
    /// Width of the fused pre-projection embedding.
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            video_stages: vec![ConvStageCfg::new(8, 3, 2), ConvStageCfg::new(16, 3, 2)],
            audio_stages: vec![ConvStageCfg::new(8, 3, 2), ConvStageCfg::new(16, 3, 2)],
            embed_dim: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), FrameworkError> {
        if self.video_stages.is_empty() || self.audio_stages.is_empty() || self.embed_dim == 0 {
            return Err(FrameworkError::InvalidConfig(
                "encoder needs at least one stage per branch and a positive embed dim".into(),
            ));
        }
        for s in self.video_stages.iter().chain(&self.audio_stages) {
            if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(FrameworkError::InvalidConfig(
                    "conv stages need positive channels, kernel, stride".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A batch of preprocessed clips ready for the encoder.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// `[B·T, 3, H, W]`, centered to `[-0.5, 0.5]`.
    pub video: Tensor,
    /// `[B, 1, n_mels, frames]` log-mel spectrograms.
    pub audio: Tensor,
    pub batch: usize,
    pub t_frames: usize,
}

/// Converts clips into batched encoder input: frames transposed to
/// channel-first and centered, audio through the mel extractor.
pub fn preprocess_clips(
    clips: &[&AVClip],
    mel: &mut MelExtractor,
) -> Result<BatchInput, FrameworkError> {
    assert!(!clips.is_empty(), "empty clip batch");
    let b = clips.len();
    let t = clips[0].video.num_frames();
    let (h, w) = (clips[0].video.height(), clips[0].video.width());

    let mut video = vec![0.0; b * t * 3 * h * w];
    for (bi, clip) in clips.iter().enumerate() {
        assert_eq!(clip.video.num_frames(), t, "ragged clip batch");
        let src = clip.video.frames.data();
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let s = ((ti * h + y) * w + x) * 3;
                    for c in 0..3 {
                        video[((((bi * t + ti) * 3) + c) * h + y) * w + x] = src[s + c] - 0.5;
                    }
                }
            }
        }
    }

    let spec0 = mel
        .extract(&clips[0].audio)
        .map_err(|e| FrameworkError::InvalidConfig(e.to_string()))?;
    let (m, f) = (spec0.n_mels(), spec0.num_frames());
    let mut audio = vec![0.0; b * m * f];
    audio[..m * f].copy_from_slice(spec0.values.data());
    for (bi, clip) in clips.iter().enumerate().skip(1) {
        let spec = mel
            .extract(&clip.audio)
            .map_err(|e| FrameworkError::InvalidConfig(e.to_string()))?;
        audio[bi * m * f..(bi + 1) * m * f].copy_from_slice(spec.values.data());
    }

    Ok(BatchInput {
        video: Tensor::new(vec![b * t, 3, h, w], video).expect("video batch shape"),
        audio: Tensor::new(vec![b, 1, m, f], audio).expect("audio batch shape"),
        batch: b,
        t_frames: t,
    })
}

/// The full model: encoder plus heads, identified by parameter names.
#[derive(Debug, Clone)]
pub struct AvModel {
    pub encoder: EncoderConfig,
    pub proj_dim: usize,
    pub pred_hidden: usize,
}

impl AvModel {
    pub fn new(encoder: EncoderConfig, proj_dim: usize, pred_hidden: usize) -> Self {
        AvModel {
            encoder,
            proj_dim,
            pred_hidden,
        }
    }

    /// Deterministic parameter initialization from a seed substream.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> (ParamSet, BnStates) {
        let mut params = ParamSet::new();
        let mut bn = BnStates::new();

        let conv_branch = |prefix: &str, in_channels: usize, stages: &[ConvStageCfg],
                               params: &mut ParamSet,
                               bn: &mut BnStates,
                               rng: &mut ChaCha8Rng| {
            let mut cin = in_channels;
            for (i, s) in stages.iter().enumerate() {
                let fan_in = cin * s.kernel * s.kernel;
                let std = (2.0 / fan_in as f64).sqrt();
                let wlen = s.out_channels * cin * s.kernel * s.kernel;
                let w: Vec<f64> = (0..wlen).map(|_| randn(rng) * std).collect();
                params.push(
                    format!("{prefix}.conv{i}.weight"),
                    Tensor::new(vec![s.out_channels, cin, s.kernel, s.kernel], w)
                        .expect("conv weight shape"),
                );
                params.push(format!("{prefix}.bn{i}.gamma"), Tensor::ones(&[s.out_channels]));
                params.push(format!("{prefix}.bn{i}.beta"), Tensor::zeros(&[s.out_channels]));
                bn.push(format!("{prefix}.bn{i}"), BatchNormState::new(s.out_channels));
                cin = s.out_channels;
            }
            cin
        };

        let cv = conv_branch("video", 3, &self.encoder.video_stages, &mut params, &mut bn, rng);
        let ca = conv_branch("audio", 1, &self.encoder.audio_stages, &mut params, &mut bn, rng);

        let linear = |name: &str, fan_in: usize, fan_out: usize,
                          params: &mut ParamSet,
                          rng: &mut ChaCha8Rng| {
            let std = (2.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| randn(rng) * std).collect();
            params.push(
                format!("{name}.weight"),
                Tensor::new(vec![fan_in, fan_out], w).expect("linear shape"),
            );
            params.push(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        };

        let d = self.encoder.embed_dim;
        linear("fusion", cv + ca, d, &mut params, rng);

        // projection head: 3-layer MLP d → d → d → proj_dim
        linear("proj.fc0", d, d, &mut params, rng);
        params.push("proj.bn0.gamma", Tensor::ones(&[d]));
        params.push("proj.bn0.beta", Tensor::zeros(&[d]));
        bn.push("proj.bn0", BatchNormState::new(d));
        linear("proj.fc1", d, d, &mut params, rng);
        params.push("proj.bn1.gamma", Tensor::ones(&[d]));
        params.push("proj.bn1.beta", Tensor::zeros(&[d]));
        bn.push("proj.bn1", BatchNormState::new(d));
        linear("proj.fc2", d, self.proj_dim, &mut params, rng);

        // prediction head: 2-layer MLP proj_dim → hidden → proj_dim
        linear("pred.fc0", self.proj_dim, self.pred_hidden, &mut params, rng);
        params.push("pred.bn0.gamma", Tensor::ones(&[self.pred_hidden]));
        params.push("pred.bn0.beta", Tensor::zeros(&[self.pred_hidden]));
        bn.push("pred.bn0", BatchNormState::new(self.pred_hidden));
        linear("pred.fc1", self.pred_hidden, self.proj_dim, &mut params, rng);

        (params, bn)
    }

    fn conv_branch_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        bn: &mut BnStates,
        prefix: &str,
        stages: &[ConvStageCfg],
        mut x: Var,
        mode: BnMode,
    ) -> Result<Var, FrameworkError> {
        for (i, s) in stages.iter().enumerate() {
            let w = bound.var(&format!("{prefix}.conv{i}.weight"))?;
            let pad = s.kernel / 2;
            x = tape.conv2d(x, w, (s.stride, s.stride), (pad, pad))?;
            let gamma = bound.var(&format!("{prefix}.bn{i}.gamma"))?;
            let beta = bound.var(&format!("{prefix}.bn{i}.beta"))?;
            let state = bn.get_mut(&format!("{prefix}.bn{i}"))?;
            x = tape.batch_norm(x, gamma, beta, state, mode)?;
            x = tape.relu(x);
        }
        Ok(x)
    }

    /// Encoder forward: `[B, embed_dim]` pre-projection embeddings.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        bn: &mut BnStates,
        input: &BatchInput,
        mode: BnMode,
    ) -> Result<Var, FrameworkError> {
        let video_in = tape.constant(input.video.clone());
        let audio_in = tape.constant(input.audio.clone());

        // video: conv over frames, global spatial mean, max over time
        let v = self.conv_branch_forward(
            tape,
            bound,
            bn,
            "video",
            &self.encoder.video_stages,
            video_in,
            mode,
        )?;
        let v = tape.spatial_mean(v)?; // [B·T, C]
        let cv = tape.value(v).shape()[1];
        let v = tape.reshape(v, &[input.batch, input.t_frames, cv])?;
        let v = tape.temporal_max(v)?; // [B, C]

        // audio: conv over [mel, frames], max over time, mean over mel
        let a = self.conv_branch_forward(
            tape,
            bound,
            bn,
            "audio",
            &self.encoder.audio_stages,
            audio_in,
            mode,
        )?;
        let a_frames = tape.value(a).shape()[3];
        let a = tape.max_pool2d(a, (1, a_frames), (1, 1))?; // [B, C, M', 1]
        let a = tape.spatial_mean(a)?; // [B, C]

        let fused = tape.concat(1, &[v, a])?;
        let w = bound.var("fusion.weight")?;
        let b = bound.var("fusion.bias")?;
        let h = tape.matmul(fused, w)?;
        Ok(tape.add_bias(h, b)?)
    }

    /// Projection head: `[B, proj_dim]`.
    pub fn project(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        bn: &mut BnStates,
        h: Var,
        mode: BnMode,
    ) -> Result<Var, FrameworkError> {
        let mut x = h;
        for i in 0..2 {
            let w = bound.var(&format!("proj.fc{i}.weight"))?;
            let b = bound.var(&format!("proj.fc{i}.bias"))?;
            x = tape.matmul(x, w)?;
            x = tape.add_bias(x, b)?;
            let gamma = bound.var(&format!("proj.bn{i}.gamma"))?;
            let beta = bound.var(&format!("proj.bn{i}.beta"))?;
            let state = bn.get_mut(&format!("proj.bn{i}"))?;
            x = tape.batch_norm(x, gamma, beta, state, mode)?;
            x = tape.relu(x);
        }
        let w = bound.var("proj.fc2.weight")?;
        let b = bound.var("proj.fc2.bias")?;
        x = tape.matmul(x, w)?;
        Ok(tape.add_bias(x, b)?)
    }

    /// Prediction head: `[B, proj_dim]`. Never stacked on momentum-encoder
    /// representations.
    pub fn predict(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        bn: &mut BnStates,
        z: Var,
        mode: BnMode,
    ) -> Result<Var, FrameworkError> {
        let w = bound.var("pred.fc0.weight")?;
        let b = bound.var("pred.fc0.bias")?;
        let mut x = tape.matmul(z, w)?;
        x = tape.add_bias(x, b)?;
        let gamma = bound.var("pred.bn0.gamma")?;
        let beta = bound.var("pred.bn0.beta")?;
        let state = bn.get_mut("pred.bn0")?;
        x = tape.batch_norm(x, gamma, beta, state, mode)?;
        x = tape.relu(x);
        let w = bound.var("pred.fc1.weight")?;
        let b = bound.var("pred.fc1.bias")?;
        x = tape.matmul(x, w)?;
        Ok(tape.add_bias(x, b)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SyntheticDatasetConfig};
    use crate::features::SpectrogramConfig;
    use crate::rng::{purpose, substream};
    use crate::sampling::extract_clip;

    fn batch_for(fps: u32, hop: usize) -> BatchInput {
        let cfg = SyntheticDatasetConfig {
            num_videos: 2,
            num_classes: 2,
            video_seconds: 3.0,
            fps,
            sample_rate: 5512,
            seed: 3,
            frame_height: 12,
            frame_width: 12,
            base_freq_hz: 0.0,
            id_offset: 0,
        };
        let ds = generate_synthetic_dataset(&cfg).unwrap();
        let clips: Vec<_> = ds
            .videos
            .iter()
            .map(|v| extract_clip(v, 0, 1.28).unwrap())
            .collect();
        let refs: Vec<&crate::data::AVClip> = clips.iter().collect();
        let mut mel = MelExtractor::new(
            SpectrogramConfig {
                hop,
                ..Default::default()
            },
            5512,
        )
        .unwrap();
        preprocess_clips(&refs, &mut mel).unwrap()
    }

    fn model() -> AvModel {
        AvModel::new(EncoderConfig::default(), 16, 8)
    }

    #[test]
    fn identical_clips_embed_identically() {
        let m = model();
        let mut rng = substream(1, purpose::PARAM_INIT, 0, 0);
        let (params, bn0) = m.init_params(&mut rng);
        let input = batch_for(8, 128);
        let run = || {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let mut bn = bn0.clone();
            let h = m.encode(&mut tape, &bound, &mut bn, &input, BnMode::Eval).unwrap();
            tape.value(h).clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn output_dim_fixed_across_temporal_resolutions() {
        let m = model();
        let mut rng = substream(1, purpose::PARAM_INIT, 0, 0);
        let (params, bn0) = m.init_params(&mut rng);
        // fps and spectrogram hop vary; the embedding width must not
        for (fps, hop) in [(4u32, 256usize), (8, 128), (16, 64), (8, 32)] {
            let input = batch_for(fps, hop);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let mut bn = bn0.clone();
            let h = m.encode(&mut tape, &bound, &mut bn, &input, BnMode::Eval).unwrap();
            assert_eq!(tape.value(h).shape(), &[2, 32], "fps {fps} hop {hop}");
        }
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let m = model();
        let mut rng = substream(2, purpose::PARAM_INIT, 0, 0);
        let (params, mut bn) = m.init_params(&mut rng);
        let input = batch_for(8, 128);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let h = m.encode(&mut tape, &bound, &mut bn, &input, BnMode::Train).unwrap();
        let z = m.project(&mut tape, &bound, &mut bn, h, BnMode::Train).unwrap();
        let p = m.predict(&mut tape, &bound, &mut bn, z, BnMode::Train).unwrap();
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.mean_all(sq);
        tape.backward(loss).unwrap();
        for (name, v) in bound.vars() {
            assert!(tape.grad(*v).is_some(), "no gradient for {name}");
        }
    }

    #[test]
    fn param_init_is_deterministic() {
        let m = model();
        let a = m.init_params(&mut substream(7, purpose::PARAM_INIT, 0, 0)).0;
        let b = m.init_params(&mut substream(7, purpose::PARAM_INIT, 0, 0)).0;
        assert_eq!(a.content_hash(), b.content_hash());
        let c = m.init_params(&mut substream(8, purpose::PARAM_INIT, 0, 0)).0;
        assert_ne!(a.content_hash(), c.content_hash());
    }
}

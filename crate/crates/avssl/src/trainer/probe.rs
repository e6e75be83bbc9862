//! Linear-probe training on frozen encoder features and the 10-clip /
//! 3-crop evaluation protocol.

use rand::Rng;

use super::{lr_at, sgd_step, OptimizerConfig, ScheduleConfig, SgdState, TrainError, TrainState};
use crate::augment::{build_pipeline, AugmentationSpec};
use crate::data::Dataset;
use crate::features::{MelExtractor, SpectrogramConfig};
use crate::frameworks::{preprocess_clips, AvModel, ParamSet};
use crate::rng::{purpose, substream};
use crate::sampling::{clip_frame_count, extract_clip, EvalSampler};
use crate::tensor::{BnMode, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Base learning rate, scaled by `batch_size / 256` like pre-training.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 30.0,
            epochs: 30,
            batch_size: 64,
            weight_decay: 0.0,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// A trained linear classifier over pre-projection embeddings.
#[derive(Debug, Clone)]
pub struct ProbeClassifier {
    /// `[embed_dim, classes]`
    pub weight: Tensor,
    /// `[classes]`
    pub bias: Tensor,
    pub config_hash: String,
}

impl ProbeClassifier {
    pub fn logits(&self, embedding: &[f64]) -> Vec<f64> {
        let (d, c) = (self.weight.shape()[0], self.weight.shape()[1]);
        let mut out = self.bias.data().to_vec();
        for (k, &e) in embedding.iter().enumerate().take(d) {
            let row = &self.weight.data()[k * c..(k + 1) * c];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += e * w;
            }
        }
        out
    }
}

/// The probe's own optimizer state: a zero-initialized linear layer trained
/// with softmax cross-entropy.
pub struct ProbeTrainer {
    params: ParamSet,
    sgd: SgdState,
    classes: usize,
}

impl ProbeTrainer {
    pub fn new(embed_dim: usize, classes: usize) -> Self {
        let mut params = ParamSet::new();
        params.push("probe.weight", Tensor::zeros(&[embed_dim, classes]));
        params.push("probe.bias", Tensor::zeros(&[classes]));
        let sgd = SgdState::new(&params);
        ProbeTrainer {
            params,
            sgd,
            classes,
        }
    }

    /// One cross-entropy SGD step on a batch of embeddings; returns the loss.
    pub fn step(
        &mut self,
        embeddings: &Tensor,
        labels: &[usize],
        lr: f64,
        opt: &OptimizerConfig,
    ) -> Result<f64, TrainError> {
        let b = embeddings.shape()[0];
        assert_eq!(b, labels.len());
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let x = tape.constant(embeddings.clone());
        let w = bound.var("probe.weight")?;
        let bias = bound.var("probe.bias")?;
        let logits = tape.matmul(x, w)?;
        let logits = tape.add_bias(logits, bias)?;

        let all = Tensor::ones(&[b, self.classes]);
        let lse = tape.log_sum_exp_rows_masked(logits, &all)?;
        let mut onehot = Tensor::zeros(&[b, self.classes]);
        for (i, &l) in labels.iter().enumerate() {
            onehot.data_mut()[i * self.classes + l] = 1.0;
        }
        let onehot = tape.constant(onehot);
        let picked = tape.mul(logits, onehot)?;
        let pos = tape.row_sum(picked)?;
        let per = tape.sub(lse, pos)?;
        let loss = tape.mean_all(per);
        let value = tape.value(loss).item();
        tape.backward(loss)?;

        let grads: Vec<Option<Vec<f64>>> = bound
            .vars()
            .iter()
            .map(|(_, v)| tape.grad(*v).map(|g| g.to_vec()))
            .collect();
        sgd_step(&mut self.params, &grads, &mut self.sgd, lr, opt)?;
        Ok(value)
    }

    pub fn classifier(&self, config_hash: &str) -> ProbeClassifier {
        ProbeClassifier {
            weight: self.params.get("probe.weight").unwrap().clone(),
            bias: self.params.get("probe.bias").unwrap().clone(),
            config_hash: config_hash.to_string(),
        }
    }

    /// Top-1 accuracy of the current probe on a batch.
    pub fn accuracy(&self, embeddings: &Tensor, labels: &[usize]) -> f64 {
        let d = embeddings.shape()[1];
        let probe = self.classifier("");
        let mut correct = 0usize;
        for (row, &label) in embeddings.data().chunks(d).zip(labels) {
            let logits = probe.logits(row);
            let argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == label {
                correct += 1;
            }
        }
        correct as f64 / labels.len() as f64
    }
}

/// Encodes clips with frozen parameters in eval mode (running BN statistics,
/// no gradients) and returns the pre-projection embeddings.
pub fn frozen_embeddings(
    state: &TrainState,
    model: &AvModel,
    clips: &[&crate::data::AVClip],
    mel: &mut MelExtractor,
) -> Result<Tensor, TrainError> {
    let input = preprocess_clips(clips, mel)?;
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape, false);
    let mut bn = state.bn.clone();
    let h = model.encode(&mut tape, &bound, &mut bn, &input, BnMode::Eval)?;
    Ok(tape.value(h).clone())
}

/// Trains the linear probe on frozen features. Only domain-specific
/// augmentations are allowed in the probe pipeline; the encoder parameters
/// are untouched (the state is read-only here).
pub fn train_probe(
    state: &TrainState,
    model: &AvModel,
    dataset: &Dataset,
    spectrogram: &SpectrogramConfig,
    probe_augment: &[AugmentationSpec],
    cfg: &ProbeConfig,
    clip_seconds: f64,
) -> Result<ProbeClassifier, TrainError> {
    let temporal: Vec<&'static str> = probe_augment
        .iter()
        .filter(|s| s.kind.is_temporal())
        .map(|s| s.kind.name())
        .collect();
    if !temporal.is_empty() {
        return Err(TrainError::ProbeHasTemporalKinds(temporal));
    }
    if dataset.is_empty() {
        return Err(TrainError::DatasetTooSmall {
            videos: 0,
            batch: cfg.batch_size,
        });
    }
    let pipeline = build_pipeline(probe_augment, false)?;
    let mut mel = MelExtractor::new(spectrogram.clone(), dataset.meta.sample_rate)?;
    let mut trainer = ProbeTrainer::new(model.encoder.embed_dim, dataset.meta.num_classes);

    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let schedule = ScheduleConfig {
        warmup_epochs: 0,
        total_epochs: cfg.epochs,
        steps_per_epoch,
    };
    schedule.validate()?;
    let opt = OptimizerConfig {
        base_lr: cfg.lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let effective_lr = opt.effective_lr(cfg.batch_size);

    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs as u64 {
        let order = super::epoch_order(dataset.len(), cfg.seed, epoch ^ purpose::PROBE_SHUFFLE);
        for chunk in order.chunks(cfg.batch_size) {
            let mut clips = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &vi in chunk {
                let video = &dataset.videos[vi];
                let mut clip_rng = substream(cfg.seed, purpose::PROBE_CLIP, epoch, video.id);
                let clip_frames = clip_frame_count(clip_seconds, video.frames.fps);
                let max_start = video.frames.num_frames() - clip_frames;
                let start = clip_rng.gen_range(0..=max_start);
                let clip = extract_clip(video, start, clip_seconds)?;
                let mut aug_rng = substream(cfg.seed, purpose::PROBE_AUGMENT, epoch, video.id);
                let (aug, _) = pipeline.apply(&clip, &mut aug_rng)?;
                clips.push(aug);
                labels.push(video.class);
            }
            let refs: Vec<&crate::data::AVClip> = clips.iter().collect();
            let embeddings = frozen_embeddings(state, model, &refs, &mut mel)?;
            let lr = lr_at(global_step, effective_lr, &schedule)?;
            trainer.step(&embeddings, &labels, lr, &opt)?;
            global_step += 1;
        }
    }
    Ok(trainer.classifier(&state.config_hash))
}

/// Evaluation report over a labeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub num_videos: usize,
    pub clips_per_video: usize,
}

/// The full protocol: per video, uniformly spaced clips times deterministic
/// crops, one softmax per clip, arithmetic mean, then top-1/top-5 over
/// videos.
pub fn evaluate(
    state: &TrainState,
    model: &AvModel,
    probe: &ProbeClassifier,
    dataset: &Dataset,
    spectrogram: &SpectrogramConfig,
    sampler: &EvalSampler,
) -> Result<EvalReport, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::DatasetTooSmall { videos: 0, batch: 1 });
    }
    let mut mel = MelExtractor::new(spectrogram.clone(), dataset.meta.sample_rate)?;
    let clips_per_video = sampler.num_clips * sampler.num_crops;
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for video in &dataset.videos {
        let clips = sampler.sample(video)?;
        debug_assert_eq!(clips.len(), clips_per_video);
        let refs: Vec<&crate::data::AVClip> = clips.iter().collect();
        let embeddings = frozen_embeddings(state, model, &refs, &mut mel)?;
        let d = embeddings.shape()[1];
        let mut mean = vec![0.0; dataset.meta.num_classes];
        for row in embeddings.data().chunks(d) {
            let probs = softmax(&probe.logits(row));
            for (m, p) in mean.iter_mut().zip(&probs) {
                *m += p;
            }
        }
        for m in mean.iter_mut() {
            *m /= clips_per_video as f64;
        }
        let rank = rank_of(&mean, video.class);
        if rank == 0 {
            top1 += 1;
        }
        if rank < 5 {
            top5 += 1;
        }
    }
    Ok(EvalReport {
        top1: top1 as f64 / dataset.len() as f64,
        top5: top5 as f64 / dataset.len() as f64,
        num_videos: dataset.len(),
        clips_per_video,
    })
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// How many classes score strictly higher than `class`.
fn rank_of(scores: &[f64], class: usize) -> usize {
    scores.iter().filter(|&&s| s > scores[class]).count()
}

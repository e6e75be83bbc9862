//! Self-supervised pre-training, the optimization recipe, linear-probe
//! training, and the evaluation protocol.

mod optim;
mod probe;

pub use optim::{is_decay_exempt, lr_at, sgd_step, OptimizerConfig, ScheduleConfig, SgdState};
pub use probe::{evaluate, train_probe, EvalReport, ProbeClassifier, ProbeConfig, ProbeTrainer};

use rand::Rng;
use thiserror::Error;

use crate::augment::{build_pipeline, AugmentError, AugmentationSpec};
use crate::data::{DataError, Dataset, CLIP_SECONDS};
use crate::features::{FeatureError, MelExtractor, SpectrogramConfig};
use crate::frameworks::{
    byol_loss, infonce_loss, moco_loss, momentum_update, preprocess_clips, simsiam_loss, AvModel,
    BatchInput, BnStates, EncoderConfig, FrameworkConfig, FrameworkError, FrameworkKind,
    ParamSet, Queue,
};
use crate::rng::{clip_substream, purpose, substream};
use crate::sampling::{ClipPairSampler, SamplingError};
use crate::tensor::{BnMode, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset of {videos} videos is smaller than one batch of {batch}")]
    DatasetTooSmall { videos: usize, batch: usize },
    #[error("schedule step {step} out of range 0..={total}")]
    ScheduleStep { step: usize, total: usize },
    #[error("config hash mismatch: checkpoint has {found}, run has {expected}")]
    ConfigHashMismatch { found: String, expected: String },
    #[error("probe pipeline must not contain temporal kinds, found {0:?}")]
    ProbeHasTemporalKinds(Vec<&'static str>),
    #[error("{0}")]
    Framework(#[from] FrameworkError),
    #[error("{0}")]
    Sampling(#[from] SamplingError),
    #[error("{0}")]
    Augment(#[from] AugmentError),
    #[error("{0}")]
    Feature(#[from] FeatureError),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Tensor(#[from] TensorError),
}

/// Everything a run needs to stop and resume deterministically.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config_hash: String,
    pub seed: u64,
    /// Next epoch to run.
    pub epoch: u64,
    /// Next step within that epoch.
    pub step_in_epoch: u64,
    pub global_step: u64,
    pub params: ParamSet,
    pub bn: BnStates,
    pub momentum_params: Option<ParamSet>,
    pub momentum_bn: Option<BnStates>,
    pub queue: Option<Queue>,
    pub velocity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub clip_seconds: f64,
    pub optimizer: OptimizerConfig,
    pub framework: FrameworkConfig,
    pub encoder: EncoderConfig,
    pub spectrogram: SpectrogramConfig,
    pub augment: Vec<AugmentationSpec>,
    pub aligned: bool,
    pub config_hash: String,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            batch_size: 32,
            warmup_epochs: 10,
            seed: 0,
            clip_seconds: CLIP_SECONDS,
            optimizer: OptimizerConfig::default(),
            framework: FrameworkConfig::default(),
            encoder: EncoderConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            augment: Vec::new(),
            aligned: false,
            config_hash: String::new(),
        }
    }
}

/// One metrics-log line: step, epoch, lr, loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Fisher–Yates shuffle of the video indices for one epoch.
fn epoch_order(num_videos: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = substream(seed, purpose::EPOCH_SHUFFLE, epoch, 0);
    let mut order: Vec<usize> = (0..num_videos).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn fresh_state(cfg: &PretrainConfig, model: &AvModel) -> TrainState {
    let mut rng = substream(cfg.seed, purpose::PARAM_INIT, 0, 0);
    let (params, bn) = model.init_params(&mut rng);
    let (momentum_params, momentum_bn) = if cfg.framework.kind.uses_momentum_encoder() {
        (Some(params.clone()), Some(bn.clone()))
    } else {
        (None, None)
    };
    let queue = cfg
        .framework
        .kind
        .uses_queue()
        .then(|| Queue::new(cfg.framework.proj_dim, cfg.framework.queue_size));
    let velocity = SgdState::new(&params).velocity;
    TrainState {
        config_hash: cfg.config_hash.clone(),
        seed: cfg.seed,
        epoch: 0,
        step_in_epoch: 0,
        global_step: 0,
        params,
        bn,
        momentum_params,
        momentum_bn,
        queue,
        velocity,
    }
}

/// Runs (or resumes) self-supervised pre-training. Deterministic given the
/// dataset and config: the loss trace of two identical runs is bitwise
/// identical, and resuming from a checkpoint continues the exact trace.
///
/// `stop_after_steps` ends the run early after that many global steps, which
/// is how mid-run checkpoints are produced.
pub fn pretrain(
    dataset: &Dataset,
    cfg: &PretrainConfig,
    resume: Option<TrainState>,
    stop_after_steps: Option<u64>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<(TrainState, Vec<f64>), TrainError> {
    cfg.framework.validate()?;
    cfg.encoder.validate()?;
    cfg.spectrogram.validate(dataset.meta.sample_rate)?;
    if dataset.is_empty() {
        return Err(TrainError::DatasetTooSmall { videos: 0, batch: cfg.batch_size });
    }
    if cfg.batch_size < 2 {
        return Err(TrainError::InvalidConfig("batch size must be at least 2".into()));
    }
    // partial batches are dropped: InfoNCE keeps a stable batch shape
    let steps_per_epoch = dataset.len() / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(TrainError::DatasetTooSmall {
            videos: dataset.len(),
            batch: cfg.batch_size,
        });
    }
    let schedule = ScheduleConfig {
        warmup_epochs: cfg.warmup_epochs,
        total_epochs: cfg.epochs,
        steps_per_epoch,
    };
    schedule.validate()?;

    let model = AvModel::new(
        cfg.encoder.clone(),
        cfg.framework.proj_dim,
        cfg.framework.pred_hidden,
    );
    let pipeline = build_pipeline(&cfg.augment, cfg.aligned)?;
    let mut mel = MelExtractor::new(cfg.spectrogram.clone(), dataset.meta.sample_rate)?;
    let sampler = ClipPairSampler {
        clip_seconds: cfg.clip_seconds,
    };

    let mut state = match resume {
        Some(s) => {
            if s.config_hash != cfg.config_hash {
                return Err(TrainError::ConfigHashMismatch {
                    found: s.config_hash,
                    expected: cfg.config_hash.clone(),
                });
            }
            s
        }
        None => fresh_state(cfg, &model),
    };
    let effective_lr = cfg.optimizer.effective_lr(cfg.batch_size);
    let mut trace = Vec::new();
    let mut taken: u64 = 0;

    while (state.epoch as usize) < cfg.epochs {
        let epoch = state.epoch;
        let order = epoch_order(dataset.len(), cfg.seed, epoch);
        while (state.step_in_epoch as usize) < steps_per_epoch {
            if let Some(limit) = stop_after_steps {
                if taken >= limit {
                    return Ok((state, trace));
                }
            }
            let step = state.step_in_epoch as usize;
            let batch_ids = &order[step * cfg.batch_size..(step + 1) * cfg.batch_size];

            // sample and augment both views of each video in the batch
            let mut view1 = Vec::with_capacity(cfg.batch_size);
            let mut view2 = Vec::with_capacity(cfg.batch_size);
            for &vi in batch_ids {
                let video = &dataset.videos[vi];
                let mut pair_rng = substream(cfg.seed, purpose::CLIP_PAIR, epoch, video.id);
                let (a, b, _) = sampler.sample_pair(video, &mut pair_rng)?;
                let mut rng_a = clip_substream(cfg.seed, epoch, video.id, 0);
                let (a_aug, _) = pipeline.apply(&a, &mut rng_a)?;
                let mut rng_b = clip_substream(cfg.seed, epoch, video.id, 1);
                let (b_aug, _) = pipeline.apply(&b, &mut rng_b)?;
                view1.push(a_aug);
                view2.push(b_aug);
            }

            let lr = lr_at(state.global_step as usize, effective_lr, &schedule)?;
            let loss = framework_step(&model, cfg, &mut state, &view1, &view2, &mut mel, lr)?;

            let record = StepRecord {
                step: state.global_step,
                epoch,
                lr,
                loss,
            };
            on_step(&record);
            trace.push(loss);
            state.global_step += 1;
            state.step_in_epoch += 1;
            taken += 1;
        }
        state.epoch += 1;
        state.step_in_epoch = 0;
    }
    Ok((state, trace))
}

/// One optimization step of the configured framework. Returns the loss.
fn framework_step(
    model: &AvModel,
    cfg: &PretrainConfig,
    state: &mut TrainState,
    view1: &[crate::data::AVClip],
    view2: &[crate::data::AVClip],
    mel: &mut MelExtractor,
    lr: f64,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape, true);
    let tau = cfg.framework.temperature;

    let (loss_var, new_keys) = match cfg.framework.kind {
        FrameworkKind::SimClr => {
            // both views through one forward: rows i and i+B pair up
            let clips: Vec<&crate::data::AVClip> = view1.iter().chain(view2.iter()).collect();
            let input = preprocess_clips(&clips, mel)?;
            let h = model.encode(&mut tape, &bound, &mut state.bn, &input, BnMode::Train)?;
            let z = model.project(&mut tape, &bound, &mut state.bn, h, BnMode::Train)?;
            let zn = tape.l2_normalize_rows(z)?;
            (infonce_loss(&mut tape, zn, tau)?, None)
        }
        FrameworkKind::MoCo => {
            let q_in = batch_of(view1, mel)?;
            let k_in = batch_of(view2, mel)?;
            let h = model.encode(&mut tape, &bound, &mut state.bn, &q_in, BnMode::Train)?;
            let z = model.project(&mut tape, &bound, &mut state.bn, h, BnMode::Train)?;
            let p = model.predict(&mut tape, &bound, &mut state.bn, z, BnMode::Train)?;
            let q = tape.l2_normalize_rows(p)?;

            let m_params = state.momentum_params.as_ref().expect("moco momentum params");
            let m_bn = state.momentum_bn.as_mut().expect("moco momentum bn");
            let m_bound = m_params.bind(&mut tape, false);
            let hk = model.encode(&mut tape, &m_bound, m_bn, &k_in, BnMode::Train)?;
            let zk = model.project(&mut tape, &m_bound, m_bn, hk, BnMode::Train)?;
            let keys = tape.l2_normalize_rows(zk)?;
            let key_values = tape.value(keys).clone();

            let queue = state.queue.as_ref().expect("moco queue");
            (moco_loss(&mut tape, q, keys, queue, tau)?, Some(key_values))
        }
        FrameworkKind::Byol => {
            let in1 = batch_of(view1, mel)?;
            let in2 = batch_of(view2, mel)?;
            let p1 = online_prediction(model, &mut tape, &bound, &mut state.bn, &in1)?;
            let p2 = online_prediction(model, &mut tape, &bound, &mut state.bn, &in2)?;

            let m_params = state.momentum_params.as_ref().expect("byol momentum params");
            let m_bn = state.momentum_bn.as_mut().expect("byol momentum bn");
            let m_bound = m_params.bind(&mut tape, false);
            let h1 = model.encode(&mut tape, &m_bound, m_bn, &in1, BnMode::Train)?;
            let z1 = model.project(&mut tape, &m_bound, m_bn, h1, BnMode::Train)?;
            let t1 = tape.l2_normalize_rows(z1)?;
            let h2 = model.encode(&mut tape, &m_bound, m_bn, &in2, BnMode::Train)?;
            let z2 = model.project(&mut tape, &m_bound, m_bn, h2, BnMode::Train)?;
            let t2 = tape.l2_normalize_rows(z2)?;

            (byol_loss(&mut tape, p1, t2, p2, t1)?, None)
        }
        FrameworkKind::SimSiam => {
            let in1 = batch_of(view1, mel)?;
            let in2 = batch_of(view2, mel)?;
            let h1 = model.encode(&mut tape, &bound, &mut state.bn, &in1, BnMode::Train)?;
            let z1 = model.project(&mut tape, &bound, &mut state.bn, h1, BnMode::Train)?;
            let h2 = model.encode(&mut tape, &bound, &mut state.bn, &in2, BnMode::Train)?;
            let z2 = model.project(&mut tape, &bound, &mut state.bn, h2, BnMode::Train)?;
            let z1n = tape.l2_normalize_rows(z1)?;
            let z2n = tape.l2_normalize_rows(z2)?;
            let t1 = tape.stop_gradient(z1n);
            let t2 = tape.stop_gradient(z2n);
            let p1 = model.predict(&mut tape, &bound, &mut state.bn, z1, BnMode::Train)?;
            let p2 = model.predict(&mut tape, &bound, &mut state.bn, z2, BnMode::Train)?;
            (simsiam_loss(&mut tape, p1, t2, p2, t1)?, None)
        }
    };

    let loss = tape.value(loss_var).item();
    tape.backward(loss_var)?;

    let grads: Vec<Option<Vec<f64>>> = bound
        .vars()
        .iter()
        .map(|(_, v)| tape.grad(*v).map(|g| g.to_vec()))
        .collect();
    let mut sgd = SgdState {
        velocity: std::mem::take(&mut state.velocity),
    };
    sgd_step(&mut state.params, &grads, &mut sgd, lr, &cfg.optimizer)?;
    state.velocity = sgd.velocity;

    if let Some(m_params) = state.momentum_params.as_mut() {
        momentum_update(m_params, &state.params, cfg.framework.momentum)?;
    }
    if let (Some(queue), Some(keys)) = (state.queue.as_mut(), new_keys) {
        queue.enqueue_batch(&keys)?;
    }
    Ok(loss)
}

fn batch_of(
    clips: &[crate::data::AVClip],
    mel: &mut MelExtractor,
) -> Result<BatchInput, FrameworkError> {
    let refs: Vec<&crate::data::AVClip> = clips.iter().collect();
    preprocess_clips(&refs, mel)
}

fn online_prediction(
    model: &AvModel,
    tape: &mut Tape,
    bound: &crate::frameworks::BoundParams,
    bn: &mut BnStates,
    input: &BatchInput,
) -> Result<crate::tensor::Var, TrainError> {
    let h = model.encode(tape, bound, bn, input, BnMode::Train)?;
    let z = model.project(tape, bound, bn, h, BnMode::Train)?;
    Ok(model.predict(tape, bound, bn, z, BnMode::Train)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::augment::AugKind;
    use crate::data::{generate_synthetic_dataset, SyntheticDatasetConfig};
    use crate::frameworks::ConvStageCfg;

    pub(crate) fn tiny_dataset(videos: usize, seed: u64) -> Dataset {
        generate_synthetic_dataset(&SyntheticDatasetConfig {
            num_videos: videos,
            num_classes: 2,
            video_seconds: 3.0,
            fps: 4,
            sample_rate: 5512,
            seed,
            frame_height: 10,
            frame_width: 14,
            base_freq_hz: 0.0,
            id_offset: 0,
        })
        .unwrap()
    }

    pub(crate) fn tiny_config(kind: FrameworkKind, epochs: usize) -> PretrainConfig {
        PretrainConfig {
            epochs,
            batch_size: 4,
            warmup_epochs: 0,
            seed: 11,
            clip_seconds: 1.28,
            optimizer: OptimizerConfig::default(),
            framework: FrameworkConfig {
                kind,
                queue_size: 16,
                proj_dim: 12,
                pred_hidden: 6,
                ..Default::default()
            },
            encoder: EncoderConfig {
                video_stages: vec![ConvStageCfg::new(4, 3, 2)],
                audio_stages: vec![ConvStageCfg::new(4, 3, 2)],
                embed_dim: 8,
            },
            spectrogram: SpectrogramConfig::default(),
            augment: vec![
                crate::augment::AugmentationSpec::new(
                    AugKind::Spatial { crop: 10, min_scale: 0.8, jitter: 0.1 },
                    0.0,
                ),
                crate::augment::AugmentationSpec::new(AugKind::Resample, 0.5),
            ],
            aligned: false,
            config_hash: "test".into(),
        }
    }

    #[test]
    fn all_frameworks_take_steps_and_losses_are_finite() {
        let ds = tiny_dataset(8, 5);
        for kind in [
            FrameworkKind::SimClr,
            FrameworkKind::MoCo,
            FrameworkKind::Byol,
            FrameworkKind::SimSiam,
        ] {
            let cfg = tiny_config(kind, 2);
            let (state, trace) =
                pretrain(&ds, &cfg, None, None, &mut |_| {}).unwrap();
            assert_eq!(trace.len(), 2 * (8 / 4), "{kind:?}");
            assert!(trace.iter().all(|l| l.is_finite()), "{kind:?}");
            assert_eq!(state.global_step, trace.len() as u64);
            if kind == FrameworkKind::MoCo {
                // keys enqueued each step
                assert_eq!(state.queue.as_ref().unwrap().len(), 4 * 4);
            }
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_traces() {
        let ds = tiny_dataset(8, 6);
        let cfg = tiny_config(FrameworkKind::SimClr, 2);
        let (_, t1) = pretrain(&ds, &cfg, None, None, &mut |_| {}).unwrap();
        let (_, t2) = pretrain(&ds, &cfg, None, None, &mut |_| {}).unwrap();
        let b1: Vec<u64> = t1.iter().map(|l| l.to_bits()).collect();
        let b2: Vec<u64> = t2.iter().map(|l| l.to_bits()).collect();
        assert_eq!(b1, b2);
    }

    #[test]
    fn stop_and_resume_reproduces_trace_exactly() {
        let ds = tiny_dataset(8, 7);
        let cfg = tiny_config(FrameworkKind::MoCo, 3); // 6 steps total, stops mid-epoch
        let (_, full) = pretrain(&ds, &cfg, None, None, &mut |_| {}).unwrap();
        let (mid, first) = pretrain(&ds, &cfg, None, Some(3), &mut |_| {}).unwrap();
        assert_eq!(first.len(), 3);
        let (_, rest) = pretrain(&ds, &cfg, Some(mid), None, &mut |_| {}).unwrap();
        let stitched: Vec<u64> = first
            .iter()
            .chain(rest.iter())
            .map(|l| l.to_bits())
            .collect();
        let reference: Vec<u64> = full.iter().map(|l| l.to_bits()).collect();
        assert_eq!(stitched, reference);
    }

    #[test]
    fn resume_rejects_wrong_config_hash() {
        let ds = tiny_dataset(8, 8);
        let cfg = tiny_config(FrameworkKind::SimClr, 2);
        let (state, _) = pretrain(&ds, &cfg, None, Some(1), &mut |_| {}).unwrap();
        let mut other = cfg.clone();
        other.config_hash = "different".into();
        assert!(matches!(
            pretrain(&ds, &other, Some(state), None, &mut |_| {}),
            Err(TrainError::ConfigHashMismatch { .. })
        ));
    }

    #[test]
    fn first_simclr_loss_near_uniform_similarity_value() {
        // with near-uniform similarities the per-pair loss is log(2N−1)
        let ds = tiny_dataset(8, 9);
        let mut cfg = tiny_config(FrameworkKind::SimClr, 1);
        cfg.framework.temperature = 1.0;
        cfg.batch_size = 8;
        let mut first_loss = None;
        let _ = pretrain(&ds, &cfg, None, Some(1), &mut |r| {
            if first_loss.is_none() {
                first_loss = Some(r.loss);
            }
        })
        .unwrap();
        let expected = (2.0 * 8.0 - 1.0f64).ln();
        let got = first_loss.unwrap();
        assert!(
            (got - expected).abs() < 0.35,
            "first-batch loss {got:.4} vs log(2N−1) = {expected:.4}"
        );
    }

    #[test]
    fn dataset_smaller_than_batch_errors() {
        let ds = tiny_dataset(2, 10);
        let cfg = tiny_config(FrameworkKind::SimClr, 1);
        assert!(matches!(
            pretrain(&ds, &cfg, None, None, &mut |_| {}),
            Err(TrainError::DatasetTooSmall { .. })
        ));
    }

    #[test]
    fn moco_momentum_branch_gets_no_gradient_and_moves_by_ema() {
        let ds = tiny_dataset(8, 12);
        let mut cfg = tiny_config(FrameworkKind::MoCo, 1);
        cfg.framework.momentum = 0.5;
        let (state, _) = pretrain(&ds, &cfg, None, Some(1), &mut |_| {}).unwrap();
        // after one step the momentum params are the EMA of init and updated
        // online params; with m = 0.5 they sit exactly halfway
        let model = AvModel::new(cfg.encoder.clone(), cfg.framework.proj_dim, cfg.framework.pred_hidden);
        let init = {
            let mut rng = substream(cfg.seed, purpose::PARAM_INIT, 0, 0);
            model.init_params(&mut rng).0
        };
        let m = state.momentum_params.as_ref().unwrap();
        for (((_, mt), (_, it)), (_, ot)) in m
            .entries()
            .iter()
            .zip(init.entries())
            .zip(state.params.entries())
        {
            for ((mv, iv), ov) in mt.data().iter().zip(it.data()).zip(ot.data()) {
                let expected = 0.5 * iv + 0.5 * ov;
                assert!((mv - expected).abs() < 1e-12);
            }
        }
    }
}

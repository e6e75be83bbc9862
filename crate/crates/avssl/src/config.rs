//! Experiment configuration.
//!
//! Plain-text format, documented grammar:
//!
//! ```text
//! # comment                      (also ';')
//! [section.subsection]           (section header)
//! key = value                    (scalar: integer, float, bool, string)
//! list = a, b, c                 (comma-separated values)
//! ```
//!
//! Keys are addressed by dotted path (`section.key`); command-line
//! `--set section.key=value` overrides any file value. The canonical form of
//! a config is the sorted `key = value` listing of every effective field
//! (defaults included); `config_hash` is the SHA-256 of that text, and every
//! run artifact embeds it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::{AugKind, AugmentationSpec, NoiseColor, Placement};
use crate::data::SyntheticDatasetConfig;
use crate::features::SpectrogramConfig;
use crate::frameworks::{ConvStageCfg, EncoderConfig, FrameworkConfig, FrameworkKind};
use crate::sampling::EvalSampler;
use crate::trainer::{OptimizerConfig, PretrainConfig, ProbeConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("config key {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("bad override (expected key=value): {0}")]
    BadOverride(String),
    #[error("unknown ablation axis key {0}")]
    UnknownAxis(String),
}

/// Parsed key-value view of a config file plus overrides.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: idx + 1,
                    reason: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: idx + 1,
                reason: "expected 'key = value'".into(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Parse {
                    line: idx + 1,
                    reason: "empty key".into(),
                });
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            values.insert(full, value.trim().to_string());
        }
        Ok(RawConfig { values })
    }

    pub fn load(path: &Path) -> Result<RawConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override by dotted path.
    pub fn set_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
        if key.trim().is_empty() {
            return Err(ConfigError::BadOverride(spec.to_string()));
        }
        self.values
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                reason: format!("cannot parse {v:?}"),
            }),
        }
    }

    fn string(&self, key: &str, default: &str) -> String {
        self.values
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.values.get(key).map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }
}

/// The complete declarative run description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetConfig,
    pub num_test_videos: usize,
    pub data_dir: PathBuf,
    pub test_data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub spectrogram: SpectrogramConfig,
    pub augment: Vec<AugmentationSpec>,
    pub aligned: bool,
    pub probe_augment: Vec<AugmentationSpec>,
    pub framework: FrameworkConfig,
    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub clip_seconds: f64,
    pub checkpoint_every_epochs: usize,
    pub probe: ProbeConfig,
    pub eval: EvalSampler,
}

fn parse_framework_kind(s: &str) -> Result<FrameworkKind, ConfigError> {
    match s.to_ascii_lowercase().as_str() {
        "simclr" => Ok(FrameworkKind::SimClr),
        "moco" => Ok(FrameworkKind::MoCo),
        "byol" => Ok(FrameworkKind::Byol),
        "simsiam" => Ok(FrameworkKind::SimSiam),
        other => Err(ConfigError::BadValue {
            key: "framework.kind".into(),
            reason: format!("unknown framework {other:?}"),
        }),
    }
}

fn parse_noise_color(s: &str) -> Result<NoiseColor, ConfigError> {
    match s.to_ascii_lowercase().as_str() {
        "white" => Ok(NoiseColor::White),
        "pink" => Ok(NoiseColor::Pink),
        "brown" => Ok(NoiseColor::Brown),
        other => Err(ConfigError::BadValue {
            key: "augment.noise_color".into(),
            reason: format!("unknown noise color {other:?}"),
        }),
    }
}

/// Conv stage lists use the form `8x3s2, 16x3s2` (channels, kernel, stride).
fn parse_stages(key: &str, text: &str) -> Result<Vec<ConvStageCfg>, ConfigError> {
    let mut stages = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("stage {token:?} is not of the form 8x3s2"),
        };
        let (channels, rest) = token.split_once('x').ok_or_else(bad)?;
        let (kernel, stride) = rest.split_once('s').ok_or_else(bad)?;
        stages.push(ConvStageCfg::new(
            channels.trim().parse().map_err(|_| bad())?,
            kernel.trim().parse().map_err(|_| bad())?,
            stride.trim().parse().map_err(|_| bad())?,
        ));
    }
    if stages.is_empty() {
        return Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: "empty stage list".into(),
        });
    }
    Ok(stages)
}

/// Pipeline tokens: `kind[:alpha][@before|@after]`, e.g.
/// `pitch_shift@before, resample:0.75, spatial`.
fn parse_pipeline(
    key: &str,
    tokens: &[String],
    raw: &RawConfig,
) -> Result<Vec<AugmentationSpec>, ConfigError> {
    let mut specs = Vec::new();
    for token in tokens {
        let (head, placement) = match token.split_once('@') {
            Some((h, "before")) => (h, Placement::BeforeTemporal),
            Some((h, "after")) => (h, Placement::AfterTemporal),
            Some((_, other)) => {
                return Err(ConfigError::BadValue {
                    key: key.to_string(),
                    reason: format!("unknown placement {other:?}"),
                })
            }
            None => (token.as_str(), Placement::BeforeTemporal),
        };
        let (name, alpha) = match head.split_once(':') {
            Some((n, a)) => (
                n.trim(),
                a.trim().parse::<f64>().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    reason: format!("bad alpha in {token:?}"),
                })?,
            ),
            None => (head.trim(), raw.typed("augment.alpha", 0.75)?),
        };
        let kind = match name {
            "fade" => AugKind::Fade,
            "time_mask" => AugKind::TimeMask,
            "time_shift" => AugKind::TimeShift,
            "resample" => AugKind::Resample,
            "pitch_shift" => AugKind::PitchShift {
                max_semitones: raw.typed("augment.pitch_semitones", 2)?,
            },
            "colored_noise" => AugKind::ColoredNoise {
                color: parse_noise_color(&raw.string("augment.noise_color", "pink"))?,
                snr_db: raw.typed("augment.noise_snr_db", 10.0)?,
            },
            "spatial" => AugKind::Spatial {
                crop: raw.typed("augment.spatial_crop", 16)?,
                min_scale: raw.typed("augment.spatial_min_scale", 0.7)?,
                jitter: raw.typed("augment.spatial_jitter", 0.2)?,
            },
            "none" => continue,
            other => {
                return Err(ConfigError::BadValue {
                    key: key.to_string(),
                    reason: format!("unknown augmentation kind {other:?}"),
                })
            }
        };
        specs.push(AugmentationSpec::new(kind, alpha).with_placement(placement));
    }
    Ok(specs)
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<ExperimentConfig, ConfigError> {
        let dataset = SyntheticDatasetConfig {
            num_videos: raw.typed("dataset.num_videos", 256)?,
            num_classes: raw.typed("dataset.num_classes", 4)?,
            video_seconds: raw.typed("dataset.video_seconds", 10.0)?,
            fps: raw.typed("dataset.fps", 8)?,
            sample_rate: raw.typed("dataset.sample_rate", 11025)?,
            seed: raw.typed("dataset.seed", 0u64)?,
            frame_height: raw.typed("dataset.frame_height", 16)?,
            frame_width: raw.typed("dataset.frame_width", 24)?,
            base_freq_hz: raw.typed("dataset.base_freq_hz", 0.0)?,
            id_offset: 0,
        };
        let spectrogram = SpectrogramConfig {
            n_fft: raw.typed("features.n_fft", 512)?,
            hop: raw.typed("features.hop", 128)?,
            n_mels: raw.typed("features.n_mels", 64)?,
            f_min: raw.typed("features.f_min", 0.0)?,
            f_max: raw.typed("features.f_max", 0.0)?,
            log_floor: raw.typed("features.log_floor", 1e-10)?,
        };
        // default pipeline: the best-performing recipe — pitch shift before
        // the temporal block, resample-only temporal block, spatial crops,
        // no alignment
        let pipeline_tokens = raw.list("augment.pipeline").unwrap_or_else(|| {
            vec![
                "pitch_shift@before".into(),
                "resample:0.75".into(),
                "spatial".into(),
            ]
        });
        let augment = parse_pipeline("augment.pipeline", &pipeline_tokens, raw)?;
        let probe_tokens = raw.list("probe.pipeline").unwrap_or_else(|| {
            // probe keeps only the domain-specific augmentations
            pipeline_tokens
                .iter()
                .filter(|t| {
                    let name = t.split([':', '@']).next().unwrap_or("");
                    matches!(name, "pitch_shift" | "colored_noise" | "spatial")
                })
                .cloned()
                .collect()
        });
        let probe_augment = parse_pipeline("probe.pipeline", &probe_tokens, raw)?;

        let framework = FrameworkConfig {
            kind: parse_framework_kind(&raw.string("framework.kind", "simclr"))?,
            temperature: raw.typed("framework.temperature", 0.1)?,
            momentum: raw.typed("framework.momentum", 0.99)?,
            queue_size: raw.typed("framework.queue_size", 1024)?,
            proj_dim: raw.typed("framework.proj_dim", 128)?,
            pred_hidden: raw.typed("framework.pred_hidden", 64)?,
        };
        let encoder = EncoderConfig {
            video_stages: parse_stages(
                "encoder.video_stages",
                &raw.string("encoder.video_stages", "8x3s2, 16x3s2"),
            )?,
            audio_stages: parse_stages(
                "encoder.audio_stages",
                &raw.string("encoder.audio_stages", "8x3s2, 16x3s2"),
            )?,
            embed_dim: raw.typed("encoder.embed_dim", 32)?,
        };
        let optimizer = OptimizerConfig {
            base_lr: raw.typed("optimizer.base_lr", 0.1)?,
            momentum: raw.typed("optimizer.momentum", 0.9)?,
            weight_decay: raw.typed("optimizer.weight_decay", 1e-4)?,
        };
        let probe = ProbeConfig {
            lr: raw.typed("probe.lr", 30.0)?,
            epochs: raw.typed("probe.epochs", 30)?,
            batch_size: raw.typed("probe.batch_size", 64)?,
            weight_decay: raw.typed("probe.weight_decay", 0.0)?,
            momentum: raw.typed("probe.momentum", 0.9)?,
            seed: raw.typed("probe.seed", 0u64)?,
        };
        let eval = EvalSampler {
            num_clips: raw.typed("eval.num_clips", 10)?,
            num_crops: raw.typed("eval.num_crops", 3)?,
            clip_seconds: raw.typed("run.clip_seconds", crate::data::CLIP_SECONDS)?,
            crop_size: raw.typed("eval.crop_size", 16)?,
        };

        Ok(ExperimentConfig {
            dataset,
            num_test_videos: raw.typed("dataset.num_test_videos", 96)?,
            data_dir: PathBuf::from(raw.string("dataset.dir", "data/train")),
            test_data_dir: PathBuf::from(raw.string("dataset.test_dir", "data/test")),
            out_dir: PathBuf::from(raw.string("run.out_dir", "runs/default")),
            spectrogram,
            augment,
            aligned: raw.typed("augment.aligned", false)?,
            probe_augment,
            framework,
            encoder,
            optimizer,
            epochs: raw.typed("run.epochs", 50)?,
            batch_size: raw.typed("run.batch_size", 32)?,
            warmup_epochs: raw.typed("run.warmup_epochs", 10)?,
            seed: raw.typed("run.seed", 0u64)?,
            clip_seconds: raw.typed("run.clip_seconds", crate::data::CLIP_SECONDS)?,
            checkpoint_every_epochs: raw.typed("run.checkpoint_every_epochs", 0)?,
            probe,
            eval,
        })
    }

    /// Every effective field in a fixed sorted order; the hash input.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("augment.aligned", self.aligned.to_string());
        kv("augment.pipeline", format_pipeline(&self.augment));
        kv("dataset.base_freq_hz", fmt_f64(self.dataset.base_freq_hz));
        kv("dataset.fps", self.dataset.fps.to_string());
        kv("dataset.frame_height", self.dataset.frame_height.to_string());
        kv("dataset.frame_width", self.dataset.frame_width.to_string());
        kv("dataset.num_classes", self.dataset.num_classes.to_string());
        kv("dataset.num_test_videos", self.num_test_videos.to_string());
        kv("dataset.num_videos", self.dataset.num_videos.to_string());
        kv("dataset.sample_rate", self.dataset.sample_rate.to_string());
        kv("dataset.seed", self.dataset.seed.to_string());
        kv("dataset.video_seconds", fmt_f64(self.dataset.video_seconds));
        kv("encoder.audio_stages", format_stages(&self.encoder.audio_stages));
        kv("encoder.embed_dim", self.encoder.embed_dim.to_string());
        kv("encoder.video_stages", format_stages(&self.encoder.video_stages));
        kv("eval.crop_size", self.eval.crop_size.to_string());
        kv("eval.num_clips", self.eval.num_clips.to_string());
        kv("eval.num_crops", self.eval.num_crops.to_string());
        kv("features.f_max", fmt_f64(self.spectrogram.f_max));
        kv("features.f_min", fmt_f64(self.spectrogram.f_min));
        kv("features.hop", self.spectrogram.hop.to_string());
        kv("features.log_floor", fmt_f64(self.spectrogram.log_floor));
        kv("features.n_fft", self.spectrogram.n_fft.to_string());
        kv("features.n_mels", self.spectrogram.n_mels.to_string());
        kv("framework.kind", self.framework.kind.name().to_string());
        kv("framework.momentum", fmt_f64(self.framework.momentum));
        kv("framework.pred_hidden", self.framework.pred_hidden.to_string());
        kv("framework.proj_dim", self.framework.proj_dim.to_string());
        kv("framework.queue_size", self.framework.queue_size.to_string());
        kv("framework.temperature", fmt_f64(self.framework.temperature));
        kv("optimizer.base_lr", fmt_f64(self.optimizer.base_lr));
        kv("optimizer.momentum", fmt_f64(self.optimizer.momentum));
        kv("optimizer.weight_decay", fmt_f64(self.optimizer.weight_decay));
        kv("probe.batch_size", self.probe.batch_size.to_string());
        kv("probe.epochs", self.probe.epochs.to_string());
        kv("probe.lr", fmt_f64(self.probe.lr));
        kv("probe.momentum", fmt_f64(self.probe.momentum));
        kv("probe.pipeline", format_pipeline(&self.probe_augment));
        kv("probe.seed", self.probe.seed.to_string());
        kv("probe.weight_decay", fmt_f64(self.probe.weight_decay));
        kv("run.batch_size", self.batch_size.to_string());
        kv("run.clip_seconds", fmt_f64(self.clip_seconds));
        kv("run.epochs", self.epochs.to_string());
        kv("run.seed", self.seed.to_string());
        kv("run.warmup_epochs", self.warmup_epochs.to_string());
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_epochs: self.warmup_epochs,
            seed: self.seed,
            clip_seconds: self.clip_seconds,
            optimizer: self.optimizer.clone(),
            framework: self.framework.clone(),
            encoder: self.encoder.clone(),
            spectrogram: self.spectrogram.clone(),
            augment: self.augment.clone(),
            aligned: self.aligned,
            config_hash: self.config_hash(),
        }
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip formatting keeps hashes stable
    format!("{v}")
}

fn format_stages(stages: &[ConvStageCfg]) -> String {
    stages
        .iter()
        .map(|s| format!("{}x{}s{}", s.out_channels, s.kernel, s.stride))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn format_pipeline(specs: &[AugmentationSpec]) -> String {
    if specs.is_empty() {
        return "none".into();
    }
    specs
        .iter()
        .map(|spec| {
            let mut token = match &spec.kind {
                AugKind::PitchShift { max_semitones } => {
                    format!("pitch_shift(max={max_semitones})")
                }
                AugKind::ColoredNoise { color, snr_db } => {
                    format!("colored_noise({color:?},{snr_db})")
                }
                AugKind::Spatial { crop, min_scale, jitter } => {
                    format!("spatial(crop={crop},scale={min_scale},jitter={jitter})")
                }
                k => format!("{}:{}", k.name(), spec.alpha),
            };
            if spec.kind.is_audio_domain() && spec.placement == Placement::AfterTemporal {
                token.push_str("@after");
            }
            token
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# a test config
[dataset]
num_videos = 16
num_classes = 4
sample_rate = 5512

[augment]
pipeline = pitch_shift@before, resample:0.5, spatial
aligned = true

[framework]
kind = moco
temperature = 0.2

[run]
epochs = 3
batch_size = 4
seed = 9
warmup_epochs = 1
"#;

    #[test]
    fn parses_sections_and_types() {
        let raw = RawConfig::parse(SAMPLE).unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.dataset.num_videos, 16);
        assert_eq!(cfg.dataset.sample_rate, 5512);
        assert!(cfg.aligned);
        assert_eq!(cfg.framework.kind, FrameworkKind::MoCo);
        assert_eq!(cfg.framework.temperature, 0.2);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.augment.len(), 3);
        assert_eq!(cfg.augment[1].alpha, 0.5);
        // probe pipeline keeps only domain-specific kinds by default
        assert!(cfg.probe_augment.iter().all(|s| !s.kind.is_temporal()));
        assert_eq!(cfg.probe_augment.len(), 2);
    }

    #[test]
    fn overrides_take_effect_and_change_hash() {
        let mut raw = RawConfig::parse(SAMPLE).unwrap();
        let before = ExperimentConfig::from_raw(&raw).unwrap().config_hash();
        raw.set_override("run.epochs=4").unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.epochs, 4);
        assert_ne!(cfg.config_hash(), before);
        assert!(raw.set_override("no_equals_sign").is_err());
    }

    #[test]
    fn hash_is_stable_for_identical_configs() {
        let raw = RawConfig::parse(SAMPLE).unwrap();
        let a = ExperimentConfig::from_raw(&raw).unwrap().config_hash();
        let b = ExperimentConfig::from_raw(&raw).unwrap().config_hash();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn parse_errors_carry_context() {
        assert!(matches!(
            RawConfig::parse("[unterminated\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            RawConfig::parse("just a line\n"),
            Err(ConfigError::Parse { .. })
        ));
        let raw = RawConfig::parse("[run]\nepochs = many\n").unwrap();
        assert!(matches!(
            ExperimentConfig::from_raw(&raw),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn stage_grammar() {
        let stages = parse_stages("k", "8x3s2, 16x5s1").unwrap();
        assert_eq!(stages.len(), 2);
        assert_eq!(stages[1].kernel, 5);
        assert!(parse_stages("k", "8y3").is_err());
    }

    #[test]
    fn unknown_pipeline_kind_rejected() {
        let raw = RawConfig::parse("[augment]\npipeline = warp\n").unwrap();
        assert!(matches!(
            ExperimentConfig::from_raw(&raw),
            Err(ConfigError::BadValue { .. })
        ));
    }
}

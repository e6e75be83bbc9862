//! Command implementations behind the `avssl` binary: dataset generation,
//! pre-training, probe training, evaluation, ablation grids, and
//! augmentation previews.
//!
//! Every command is idempotent for a fixed config and seed: re-running
//! overwrites its artifacts with identical bytes. The one exception is the
//! runtime column of ablation tables, which reports wall-clock seconds.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::config::{ConfigError, ExperimentConfig, RawConfig};
use crate::data::{
    generate_synthetic_dataset, load_checkpoint, load_dataset, save_checkpoint, save_dataset,
    DataError, Dataset, SyntheticDatasetConfig,
};
use crate::features::FeatureError;
use crate::frameworks::{AvModel, FrameworkError};
use crate::rng::clip_substream;
use crate::sampling::{extract_clip, SamplingError};
use crate::tensor::{save_tensor, TensorError};
use crate::trainer::{
    evaluate, pretrain, train_probe, EvalReport, ProbeClassifier, TrainError, TrainState,
};

pub const PROBE_MAGIC: &[u8; 4] = b"AVP1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Sampling(#[from] SamplingError),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Augment(#[from] AugmentError),
    #[error("{0}")]
    Feature(#[from] FeatureError),
    #[error("{0}")]
    Framework(#[from] FrameworkError),
    #[error("{0}")]
    Tensor(#[from] TensorError),
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

/// Exit codes: 2 config error, 3 data error, 4 numeric failure, 1 otherwise.
pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Config(_) => 2,
        CliError::Data(_) | CliError::Sampling(_) | CliError::Io { .. } => 3,
        CliError::Train(t) => match t {
            TrainError::Data(_) | TrainError::Sampling(_) | TrainError::DatasetTooSmall { .. } => 3,
            TrainError::InvalidConfig(_)
            | TrainError::ConfigHashMismatch { .. }
            | TrainError::ProbeHasTemporalKinds(_) => 2,
            _ => 4,
        },
        CliError::Augment(_) => 2,
        CliError::Feature(_) => 2,
        CliError::Framework(_) | CliError::Tensor(_) => 4,
        CliError::Other(_) => 1,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads a config file and applies `--set` overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut raw = RawConfig::load(path)?;
    for o in overrides {
        raw.set_override(o)?;
    }
    Ok(ExperimentConfig::from_raw(&raw)?)
}

/// `gen-data`: writes the training set and a held-out evaluation set with
/// disjoint per-video randomness but the same class signatures.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let train = generate_synthetic_dataset(&cfg.dataset)?;
    save_dataset(&cfg.data_dir, &train)?;
    let test_cfg = SyntheticDatasetConfig {
        num_videos: cfg.num_test_videos,
        id_offset: cfg.dataset.num_videos as u64,
        ..cfg.dataset.clone()
    };
    let test = generate_synthetic_dataset(&test_cfg)?;
    save_dataset(&cfg.test_data_dir, &test)?;
    println!(
        "gen-data: {} train + {} test videos, {} classes, at {} and {}",
        train.len(),
        test.len(),
        cfg.dataset.num_classes,
        cfg.data_dir.display(),
        cfg.test_data_dir.display()
    );
    Ok(())
}

pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("checkpoint.avc1")
}

pub fn probe_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("probe.avp1")
}

/// `pretrain`: runs (or resumes) self-supervised pre-training, streaming the
/// metrics log and checkpointing at the configured cadence.
pub fn cmd_pretrain(cfg: &ExperimentConfig, resume: bool) -> Result<TrainState, CliError> {
    let dataset = load_dataset(&cfg.data_dir)?;
    let pcfg = cfg.pretrain_config();
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let ckpt = checkpoint_path(cfg);
    let metrics_path = cfg.out_dir.join("metrics.tsv");

    let mut state = if resume {
        Some(load_checkpoint(&ckpt)?)
    } else {
        None
    };
    if let Some(s) = &state {
        if s.config_hash != pcfg.config_hash {
            return Err(CliError::Train(TrainError::ConfigHashMismatch {
                found: s.config_hash.clone(),
                expected: pcfg.config_hash.clone(),
            }));
        }
    }

    let mut metrics = BufWriter::new(if resume && metrics_path.exists() {
        fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(io_err(&metrics_path))?
    } else {
        let mut f = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        writeln!(f, "# config_hash {}", pcfg.config_hash).map_err(io_err(&metrics_path))?;
        writeln!(f, "# step\tepoch\tlr\tloss").map_err(io_err(&metrics_path))?;
        f
    });

    let steps_per_epoch = dataset.len() / pcfg.batch_size;
    let chunk = if cfg.checkpoint_every_epochs > 0 {
        Some((cfg.checkpoint_every_epochs * steps_per_epoch) as u64)
    } else {
        None
    };

    loop {
        let (next, trace) = pretrain(&dataset, &pcfg, state.take(), chunk, &mut |r| {
            let _ = writeln!(metrics, "{}\t{}\t{}\t{}", r.step, r.epoch, r.lr, r.loss);
        })?;
        metrics.flush().map_err(io_err(&metrics_path))?;
        save_checkpoint(&next, &ckpt)?;
        let done = (next.epoch as usize) >= pcfg.epochs || trace.is_empty();
        state = Some(next);
        if chunk.is_none() || done {
            break;
        }
    }
    let state = state.expect("pretrain state");
    println!(
        "pretrain: {} epochs, {} steps, checkpoint at {}",
        state.epoch,
        state.global_step,
        ckpt.display()
    );
    Ok(state)
}

pub fn save_probe(path: &Path, probe: &ProbeClassifier) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp).map_err(io_err(&tmp))?);
        (|| -> std::io::Result<()> {
            w.write_all(PROBE_MAGIC)?;
            w.write_all(&1u32.to_le_bytes())?;
            w.write_all(&(probe.config_hash.len() as u32).to_le_bytes())?;
            w.write_all(probe.config_hash.as_bytes())?;
            crate::tensor::io::write_tensor(&mut w, &probe.weight)?;
            crate::tensor::io::write_tensor(&mut w, &probe.bias)?;
            w.flush()
        })()
        .map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_probe(path: &Path) -> Result<ProbeClassifier, CliError> {
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut header = [0u8; 8];
    f.read_exact(&mut header).map_err(io_err(path))?;
    if &header[0..4] != PROBE_MAGIC {
        return Err(CliError::Data(DataError::CorruptHeader {
            path: path.display().to_string(),
            reason: "bad probe magic".into(),
        }));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != 1 {
        return Err(CliError::Data(DataError::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            expected: 1,
        }));
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4).map_err(io_err(path))?;
    let mut name = vec![0u8; u32::from_le_bytes(len4) as usize];
    f.read_exact(&mut name).map_err(io_err(path))?;
    let config_hash = String::from_utf8(name).map_err(|_| {
        CliError::Data(DataError::CorruptHeader {
            path: path.display().to_string(),
            reason: "probe hash not utf8".into(),
        })
    })?;
    let pstr = path.display().to_string();
    let weight = crate::tensor::io::read_tensor(&mut f, &pstr)?;
    let bias = crate::tensor::io::read_tensor(&mut f, &pstr)?;
    Ok(ProbeClassifier {
        weight,
        bias,
        config_hash,
    })
}

/// `probe`: trains the linear classifier on frozen features.
pub fn cmd_probe(cfg: &ExperimentConfig) -> Result<ProbeClassifier, CliError> {
    let dataset = load_dataset(&cfg.data_dir)?;
    let state = load_checkpoint(&checkpoint_path(cfg))?;
    let expected = cfg.config_hash();
    if state.config_hash != expected {
        return Err(CliError::Train(TrainError::ConfigHashMismatch {
            found: state.config_hash,
            expected,
        }));
    }
    let model = AvModel::new(
        cfg.encoder.clone(),
        cfg.framework.proj_dim,
        cfg.framework.pred_hidden,
    );
    let probe = train_probe(
        &state,
        &model,
        &dataset,
        &cfg.spectrogram,
        &cfg.probe_augment,
        &cfg.probe,
        cfg.clip_seconds,
    )?;
    let path = probe_path(cfg);
    save_probe(&path, &probe)?;
    println!("probe: trained {} epochs, saved to {}", cfg.probe.epochs, path.display());
    Ok(probe)
}

/// `eval`: the full protocol on the held-out set; appends one JSON-lines
/// record and returns the report.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalReport, CliError> {
    let dataset = load_dataset(&cfg.test_data_dir)?;
    let state = load_checkpoint(&checkpoint_path(cfg))?;
    let probe = load_probe(&probe_path(cfg))?;
    let expected = cfg.config_hash();
    if state.config_hash != expected || probe.config_hash != expected {
        return Err(CliError::Train(TrainError::ConfigHashMismatch {
            found: state.config_hash,
            expected,
        }));
    }
    let model = AvModel::new(
        cfg.encoder.clone(),
        cfg.framework.proj_dim,
        cfg.framework.pred_hidden,
    );
    let report = evaluate(&state, &model, &probe, &dataset, &cfg.spectrogram, &cfg.eval)?;

    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let path = cfg.out_dir.join("eval.jsonl");
    let record = format!(
        "{{\"epoch\":{},\"top1\":{},\"top5\":{},\"config_hash\":\"{}\"}}\n",
        state.epoch, report.top1, report.top5, expected
    );
    fs::write(&path, record).map_err(io_err(&path))?;

    if dataset.meta.num_classes > 5 {
        println!(
            "eval: top1 {:.4} top5 {:.4} over {} videos",
            report.top1, report.top5, report.num_videos
        );
    } else {
        println!("eval: top1 {:.4} over {} videos", report.top1, report.num_videos);
    }
    Ok(report)
}

/// `augment-preview`: applies the configured pipeline to one clip, writing
/// the augmented tensors and a plain-text log of every drawn parameter set.
pub fn cmd_augment_preview(
    cfg: &ExperimentConfig,
    video_index: usize,
    start_frame: usize,
) -> Result<(), CliError> {
    let dataset = load_dataset(&cfg.data_dir)?;
    let video = dataset
        .videos
        .get(video_index)
        .ok_or_else(|| CliError::Other(format!("video index {video_index} out of range")))?;
    let clip = extract_clip(video, start_frame, cfg.clip_seconds)?;
    let pipeline = crate::augment::build_pipeline(&cfg.augment, cfg.aligned)?;
    let mut rng = clip_substream(cfg.seed, 0, video.id, 0);
    let (augmented, records) = pipeline.apply(&clip, &mut rng)?;

    let dir = cfg.out_dir.join("preview");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    save_tensor(&dir.join("original_audio.avt"), &clip.audio.samples)?;
    save_tensor(&dir.join("original_frames.avt"), &clip.video.frames)?;
    save_tensor(&dir.join("audio.avt"), &augmented.audio.samples)?;
    save_tensor(&dir.join("frames.avt"), &augmented.video.frames)?;

    let log_path = dir.join("params.log");
    let mut log = String::new();
    for r in &records {
        log.push_str(&format!("{}\t{:?}\t{}\n", r.kind, r.stream, r.params));
    }
    fs::write(&log_path, log).map_err(io_err(&log_path))?;
    println!(
        "augment-preview: video {} clip at frame {}, {} draws logged to {}",
        video_index,
        start_frame,
        records.len(),
        log_path.display()
    );
    Ok(())
}

// ---- ablation ----

/// Keys an ablation grid may vary.
const VALID_AXIS_KEYS: &[&str] = &[
    "augment.alpha",
    "augment.pipeline",
    "augment.aligned",
    "dataset.fps",
    "dataset.sample_rate",
    "features.hop",
    "framework.kind",
    "framework.temperature",
    "run.epochs",
    "run.seed",
    "run.batch_size",
];

#[derive(Debug, Clone)]
struct Axis {
    key: String,
    values: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AblateSpec {
    pairwise: bool,
    axes: Vec<Axis>,
    jobs: usize,
}

pub fn parse_ablate_spec(raw: &RawConfig, jobs: usize) -> Result<AblateSpec, CliError> {
    let mode = raw.get("ablate.mode").unwrap_or("grid").to_string();
    let mut axes = Vec::new();
    for i in 1..=3 {
        let key_key = format!("ablate.axis{i}.key");
        let val_key = format!("ablate.axis{i}.values");
        if let Some(key) = raw.get(&key_key) {
            if !VALID_AXIS_KEYS.contains(&key) {
                return Err(CliError::Config(ConfigError::UnknownAxis(key.to_string())));
            }
            let values: Vec<String> = raw
                .get(&val_key)
                .map(|v| {
                    v.split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                })
                .unwrap_or_default();
            axes.push(Axis {
                key: key.to_string(),
                values,
            });
        }
    }
    Ok(AblateSpec {
        pairwise: mode == "pairwise",
        axes,
        jobs: jobs.max(1),
    })
}

const TEMPORAL_KINDS: [&str; 5] = ["fade", "time_mask", "time_shift", "resample", "none"];

fn sanitize(v: &str) -> String {
    v.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// One ablation cell: a named set of overrides on the base config.
#[derive(Debug, Clone)]
struct Cell {
    label: Vec<String>,
    overrides: Vec<String>,
}

fn grid_cells(spec: &AblateSpec, raw: &RawConfig) -> Result<Vec<Cell>, CliError> {
    if spec.pairwise {
        // Fig-3-style matrix: ordered pairs of temporal kinds plus a
        // no-temporal control; spatial and audio-domain tokens are kept from
        // the base pipeline.
        let alpha = raw.get("augment.alpha").unwrap_or("0.75").to_string();
        let keep: Vec<String> = raw
            .get("augment.pipeline")
            .map(|p| {
                p.split(',')
                    .map(|t| t.trim().to_string())
                    .filter(|t| {
                        let name = t.split([':', '@']).next().unwrap_or("");
                        matches!(name, "pitch_shift" | "colored_noise" | "spatial")
                    })
                    .collect()
            })
            .unwrap_or_else(|| vec!["spatial".to_string()]);
        let mut cells = Vec::new();
        for first in TEMPORAL_KINDS {
            for second in TEMPORAL_KINDS {
                let mut tokens: Vec<String> = Vec::new();
                if first != "none" {
                    tokens.push(format!("{first}:{alpha}"));
                }
                if second != "none" && second != first {
                    tokens.push(format!("{second}:{alpha}"));
                }
                tokens.extend(keep.clone());
                let pipeline = if tokens.is_empty() { "none".to_string() } else { tokens.join(", ") };
                cells.push(Cell {
                    label: vec![first.to_string(), second.to_string()],
                    overrides: vec![format!("augment.pipeline={pipeline}")],
                });
            }
        }
        return Ok(cells);
    }

    // generic cartesian grid
    let mut cells = vec![Cell {
        label: Vec::new(),
        overrides: Vec::new(),
    }];
    for axis in &spec.axes {
        let mut next = Vec::new();
        for cell in &cells {
            for v in &axis.values {
                let mut c = cell.clone();
                c.label.push(v.clone());
                c.overrides.push(format!("{}={}", axis.key, v));
                next.push(c);
            }
        }
        cells = next;
    }
    if spec.axes.is_empty() {
        cells.clear();
    }
    Ok(cells)
}

/// `ablate`: runs the configured grid, one full pretrain→probe→eval chain
/// per cell, and writes `ablate.csv` (plus a Fig-3-style matrix with
/// row/column averages in pairwise mode).
pub fn cmd_ablate(
    raw: &RawConfig,
    config_path: &Path,
    jobs: usize,
) -> Result<PathBuf, CliError> {
    let base = ExperimentConfig::from_raw(raw)?;
    let spec = parse_ablate_spec(raw, jobs)?;
    let cells = grid_cells(&spec, raw)?;
    fs::create_dir_all(&base.out_dir).map_err(io_err(&base.out_dir))?;
    let csv_path = base.out_dir.join("ablate.csv");

    let header = if spec.pairwise {
        "first,second,seed,top1,top5,runtime_s".to_string()
    } else {
        let mut cols: Vec<String> = spec.axes.iter().map(|a| a.key.clone()).collect();
        cols.extend(["seed".into(), "top1".into(), "top5".into(), "runtime_s".into()]);
        cols.join(",")
    };
    let mut rows: Vec<String> = Vec::new();
    let mut results: Vec<(Vec<String>, f64)> = Vec::new();

    // the dataset is shared unless an axis changes dataset parameters
    let dataset_axes = spec
        .axes
        .iter()
        .any(|a| a.key.starts_with("dataset."))
        || spec.pairwise && false;
    if !cells.is_empty() && !dataset_axes {
        cmd_gen_data(&base)?;
    }

    let mut pending = cells.into_iter().collect::<Vec<_>>();
    if spec.jobs > 1 {
        run_cells_in_processes(&mut rows, &mut results, &pending, raw, &base, config_path, spec.jobs)?;
    } else {
        for cell in pending.drain(..) {
            let started = Instant::now();
            let mut cell_raw = raw.clone();
            for o in &cell.overrides {
                cell_raw.set_override(o)?;
            }
            let cell_dir = base.out_dir.join("cells").join(sanitize(&cell.label.join("_")));
            cell_raw.set_override(&format!("run.out_dir={}", cell_dir.display()))?;
            let cfg = ExperimentConfig::from_raw(&cell_raw)?;
            if dataset_axes {
                cmd_gen_data(&cfg)?;
            }
            cmd_pretrain(&cfg, false)?;
            cmd_probe(&cfg)?;
            let report = cmd_eval(&cfg)?;
            let runtime = started.elapsed().as_secs_f64();
            let mut row = cell.label.clone();
            row.push(cfg.seed.to_string());
            row.push(format!("{:.6}", report.top1));
            row.push(format!("{:.6}", report.top5));
            row.push(format!("{runtime:.1}"));
            rows.push(row.join(","));
            results.push((cell.label.clone(), report.top1));
        }
    }

    let mut csv = String::new();
    csv.push_str(&header);
    csv.push('\n');
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    fs::write(&csv_path, &csv).map_err(io_err(&csv_path))?;

    if spec.pairwise && !results.is_empty() {
        write_pairwise_matrix(&base.out_dir.join("ablate_matrix.csv"), &results)?;
    }
    println!("ablate: {} cells written to {}", rows.len(), csv_path.display());
    Ok(csv_path)
}

/// Matrix CSV mirroring the pairwise-sequence figure: rows are the first
/// augmentation, columns the second, with averages in the last row/column.
fn write_pairwise_matrix(path: &Path, results: &[(Vec<String>, f64)]) -> Result<(), CliError> {
    let idx = |name: &str| TEMPORAL_KINDS.iter().position(|&k| k == name).unwrap();
    let n = TEMPORAL_KINDS.len();
    let mut matrix = vec![vec![f64::NAN; n]; n];
    for (label, top1) in results {
        matrix[idx(&label[0])][idx(&label[1])] = *top1;
    }
    let mut out = String::new();
    out.push_str("first\\second,");
    out.push_str(&TEMPORAL_KINDS.join(","));
    out.push_str(",row_avg\n");
    let mut col_sums = vec![0.0; n];
    for i in 0..n {
        let row = &matrix[i];
        let avg = row.iter().sum::<f64>() / n as f64;
        out.push_str(TEMPORAL_KINDS[i]);
        for (j, v) in row.iter().enumerate() {
            col_sums[j] += v;
            out.push_str(&format!(",{v:.6}"));
        }
        out.push_str(&format!(",{avg:.6}\n"));
    }
    out.push_str("col_avg");
    for s in &col_sums {
        out.push_str(&format!(",{:.6}", s / n as f64));
    }
    out.push('\n');
    fs::write(path, out).map_err(io_err(path))
}

/// Parallel ablation: each cell is an isolated chain of child processes
/// (`pretrain`, `probe`, `eval`) sharing nothing but the dataset directory.
fn run_cells_in_processes(
    rows: &mut Vec<String>,
    results: &mut Vec<(Vec<String>, f64)>,
    cells: &[Cell],
    raw: &RawConfig,
    base: &ExperimentConfig,
    config_path: &Path,
    jobs: usize,
) -> Result<(), CliError> {
    use std::process::Command;
    let exe = std::env::current_exe().map_err(|e| CliError::Other(e.to_string()))?;
    let mut queue: std::collections::VecDeque<(usize, &Cell)> =
        cells.iter().enumerate().collect();
    let mut running: Vec<(usize, Vec<String>, PathBuf, Instant, std::process::Child)> = Vec::new();
    let mut finished: Vec<(usize, Vec<String>, f64, f64, f64)> = Vec::new();

    let spawn_chain = |cell: &Cell| -> Result<(PathBuf, std::process::Child), CliError> {
        let cell_dir = base.out_dir.join("cells").join(sanitize(&cell.label.join("_")));
        fs::create_dir_all(&cell_dir).map_err(io_err(&cell_dir))?;
        let mut args: Vec<String> = Vec::new();
        for o in &cell.overrides {
            args.push("--set".into());
            args.push(o.clone());
        }
        args.push("--set".into());
        args.push(format!("run.out_dir={}", cell_dir.display()));
        // chain the three commands in one shell-free child per stage is not
        // possible; run a small driver: pretrain first, the poller advances
        let child = Command::new(&exe)
            .arg("pretrain")
            .arg("--config")
            .arg(config_path)
            .args(&args)
            .stdout(std::process::Stdio::null())
            .spawn()
            .map_err(|e| CliError::Other(format!("spawn failed: {e}")))?;
        Ok((cell_dir, child))
    };

    let run_stage = |stage: &str, cell: &Cell, cell_dir: &Path| -> Result<(), CliError> {
        let mut args: Vec<String> = Vec::new();
        for o in &cell.overrides {
            args.push("--set".into());
            args.push(o.clone());
        }
        args.push("--set".into());
        args.push(format!("run.out_dir={}", cell_dir.display()));
        let status = Command::new(&exe)
            .arg(stage)
            .arg("--config")
            .arg(config_path)
            .args(&args)
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| CliError::Other(format!("spawn failed: {e}")))?;
        if !status.success() {
            return Err(CliError::Other(format!(
                "cell {:?} stage {stage} failed with {status}",
                cell.label
            )));
        }
        Ok(())
    };

    while !queue.is_empty() || !running.is_empty() {
        while running.len() < jobs && !queue.is_empty() {
            let (i, cell) = queue.pop_front().unwrap();
            let (dir, child) = spawn_chain(cell)?;
            running.push((i, cell.label.clone(), dir, Instant::now(), child));
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
        let mut still = Vec::new();
        for (i, label, dir, started, mut child) in running.drain(..) {
            match child.try_wait().map_err(|e| CliError::Other(e.to_string()))? {
                Some(status) => {
                    if !status.success() {
                        return Err(CliError::Other(format!(
                            "cell {label:?} pretrain failed with {status}"
                        )));
                    }
                    let cell = &cells[i];
                    run_stage("probe", cell, &dir)?;
                    run_stage("eval", cell, &dir)?;
                    let (top1, top5) = read_eval_record(&dir.join("eval.jsonl"))?;
                    finished.push((i, label, top1, top5, started.elapsed().as_secs_f64()));
                }
                None => still.push((i, label, dir, started, child)),
            }
        }
        running = still;
    }

    finished.sort_by_key(|(i, ..)| *i);
    for (i, label, top1, top5, runtime) in finished {
        let cell = &cells[i];
        let mut cell_raw = raw.clone();
        for o in &cell.overrides {
            cell_raw.set_override(o)?;
        }
        let cfg = ExperimentConfig::from_raw(&cell_raw)?;
        let mut row = label.clone();
        row.push(cfg.seed.to_string());
        row.push(format!("{top1:.6}"));
        row.push(format!("{top5:.6}"));
        row.push(format!("{runtime:.1}"));
        rows.push(row.join(","));
        results.push((label, top1));
    }
    Ok(())
}

fn read_eval_record(path: &Path) -> Result<(f64, f64), CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let grab = |key: &str| -> Option<f64> {
        let marker = format!("\"{key}\":");
        let at = text.find(&marker)? + marker.len();
        let rest = &text[at..];
        let end = rest.find([',', '}'])?;
        rest[..end].trim().parse().ok()
    };
    match (grab("top1"), grab("top5")) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(CliError::Other(format!(
            "cannot parse eval record at {}",
            path.display()
        ))),
    }
}

/// Convenience used by examples and the acceptance suite: generate data,
/// pretrain, probe, and evaluate in one call, entirely in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(TrainState, EvalReport), CliError> {
    let train = generate_synthetic_dataset(&cfg.dataset)?;
    let test_cfg = SyntheticDatasetConfig {
        num_videos: cfg.num_test_videos,
        id_offset: cfg.dataset.num_videos as u64,
        ..cfg.dataset.clone()
    };
    let test = generate_synthetic_dataset(&test_cfg)?;
    run_experiment_on(cfg, &train, &test)
}

/// Same as [`run_experiment`] but over pre-generated datasets.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(TrainState, EvalReport), CliError> {
    let pcfg = cfg.pretrain_config();
    let (state, _) = pretrain(train, &pcfg, None, None, &mut |_| {})?;
    let model = AvModel::new(
        cfg.encoder.clone(),
        cfg.framework.proj_dim,
        cfg.framework.pred_hidden,
    );
    let probe = train_probe(
        &state,
        &model,
        train,
        &cfg.spectrogram,
        &cfg.probe_augment,
        &cfg.probe,
        cfg.clip_seconds,
    )?;
    let report = evaluate(&state, &model, &probe, test, &cfg.spectrogram, &cfg.eval)?;
    Ok((state, report))
}

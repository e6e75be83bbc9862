//! Dataset directory persistence.
//!
//! Layout: a plain-text `manifest.txt` with `# key value` header lines for
//! the shared properties, then one line per video — id, class, and the
//! relative paths of its audio and frames tensors (both in the "AVT1"
//! format) under `audio/` and `frames/`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, DatasetMeta, FrameSequence, SourceVideo, Waveform};
use crate::tensor::{load_tensor, save_tensor};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<(), DataError> {
    fs::create_dir_all(dir.join("audio")).map_err(io_err(dir))?;
    fs::create_dir_all(dir.join("frames")).map_err(io_err(dir))?;

    let mut manifest = String::new();
    manifest.push_str(&format!("# num_classes {}\n", ds.meta.num_classes));
    manifest.push_str(&format!("# fps {}\n", ds.meta.fps));
    manifest.push_str(&format!("# sample_rate {}\n", ds.meta.sample_rate));
    manifest.push_str(&format!("# video_seconds {}\n", ds.meta.video_seconds));
    manifest.push_str(&format!("# frame_height {}\n", ds.meta.frame_height));
    manifest.push_str(&format!("# frame_width {}\n", ds.meta.frame_width));
    for v in &ds.videos {
        let audio_rel = format!("audio/{}.avt", v.id);
        let frames_rel = format!("frames/{}.avt", v.id);
        save_tensor(&dir.join(&audio_rel), &v.audio.samples)?;
        save_tensor(&dir.join(&frames_rel), &v.frames.frames)?;
        manifest.push_str(&format!("{}\t{}\t{}\t{}\n", v.id, v.class, audio_rel, frames_rel));
    }

    // Single-writer atomic manifest: temp file then rename.
    let tmp = dir.join("manifest.txt.tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(manifest.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, dir.join("manifest.txt")).map_err(io_err(dir))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let mpath = manifest_path.display().to_string();

    let mut header = std::collections::BTreeMap::new();
    let mut videos = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if let (Some(k), Some(v)) = (it.next(), it.next()) {
                header.insert(k.to_string(), v.to_string());
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DataError::Manifest {
                path: mpath.clone(),
                reason: format!("line {}: expected 4 tab-separated fields", lineno + 1),
            });
        }
        let id: u64 = fields[0].parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: format!("line {}: bad video id", lineno + 1),
        })?;
        let class: usize = fields[1].parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: format!("line {}: bad class", lineno + 1),
        })?;
        videos.push((id, class, fields[2].to_string(), fields[3].to_string()));
    }

    let get = |k: &str| -> Result<String, DataError> {
        header.get(k).cloned().ok_or_else(|| DataError::Manifest {
            path: mpath.clone(),
            reason: format!("missing header key {k}"),
        })
    };
    let meta = DatasetMeta {
        num_classes: get("num_classes")?.parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: "bad num_classes".into(),
        })?,
        fps: get("fps")?.parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: "bad fps".into(),
        })?,
        sample_rate: get("sample_rate")?.parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: "bad sample_rate".into(),
        })?,
        video_seconds: get("video_seconds")?.parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: "bad video_seconds".into(),
        })?,
        frame_height: get("frame_height")?.parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: "bad frame_height".into(),
        })?,
        frame_width: get("frame_width")?.parse().map_err(|_| DataError::Manifest {
            path: mpath.clone(),
            reason: "bad frame_width".into(),
        })?,
    };

    let mut loaded = Vec::with_capacity(videos.len());
    for (id, class, audio_rel, frames_rel) in videos {
        let audio = Waveform::new(load_tensor(&dir.join(&audio_rel))?, meta.sample_rate)?;
        let frames = FrameSequence::new(load_tensor(&dir.join(&frames_rel))?, meta.fps)?;
        loaded.push(SourceVideo {
            id,
            class,
            audio,
            frames,
        });
    }
    Ok(Dataset {
        meta,
        videos: loaded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SyntheticDatasetConfig};

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let cfg = SyntheticDatasetConfig {
            num_videos: 4,
            num_classes: 2,
            video_seconds: 3.0,
            fps: 4,
            sample_rate: 5512,
            seed: 9,
            frame_height: 8,
            frame_width: 10,
            base_freq_hz: 0.0,
            id_offset: 0,
        };
        let ds = generate_synthetic_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.videos.len(), ds.videos.len());
        for (a, b) in ds.videos.iter().zip(&back.videos) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.class, b.class);
            assert_eq!(a.audio.samples.data(), b.audio.samples.data());
            assert_eq!(a.frames.frames.data(), b.frames.frames.data());
        }
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(DataError::Io { .. })
        ));
    }
}

//! Checkpoint persistence: one file, "AVC1" magic, versioned sections.
//!
//! `load(save(x))` is bitwise `x`, including parameters, momentum copies,
//! batch-norm running statistics, the memory queue, optimizer velocities,
//! and the RNG counters (seed, epoch, step) that make resumption exact.
//! Writes are atomic: a temp file is renamed into place.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DataError;
use crate::frameworks::{BnStates, ParamSet, Queue};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::{BatchNormState, Tensor};
use crate::trainer::TrainState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVC1";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.inner.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for &v in vs {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn string(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())
    }
    fn tensor(&mut self, t: &Tensor) -> std::io::Result<()> {
        write_tensor(&mut self.inner, t)
    }
    fn params(&mut self, p: &ParamSet) -> std::io::Result<()> {
        self.u32(p.len() as u32)?;
        for (name, t) in p.entries() {
            self.string(name)?;
            self.tensor(t)?;
        }
        Ok(())
    }
    fn bn_states(&mut self, bn: &BnStates) -> std::io::Result<()> {
        self.u32(bn.entries().len() as u32)?;
        for (name, s) in bn.entries() {
            self.string(name)?;
            self.u32(s.running_mean.len() as u32)?;
            self.f64s(&s.running_mean)?;
            self.f64s(&s.running_var)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<(), DataError> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                DataError::Truncated {
                    path: self.path.clone(),
                }
            } else {
                DataError::Io {
                    path: self.path.clone(),
                    source: e,
                }
            }
        })
    }
    fn u8(&mut self) -> Result<u8, DataError> {
        let mut b = [0u8; 1];
        self.bytes(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, DataError> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, DataError> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.bytes(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
    fn string(&mut self) -> Result<String, DataError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.bytes(&mut buf)?;
        String::from_utf8(buf).map_err(|_| DataError::CorruptHeader {
            path: self.path.clone(),
            reason: "non-utf8 string".into(),
        })
    }
    fn tensor(&mut self) -> Result<Tensor, DataError> {
        read_tensor(&mut self.inner, &self.path).map_err(|e| match e {
            crate::tensor::TensorError::Truncated { path } => DataError::Truncated { path },
            crate::tensor::TensorError::BadMagic { path } => DataError::CorruptHeader {
                path,
                reason: "embedded tensor magic".into(),
            },
            other => DataError::Invalid(other.to_string()),
        })
    }
    fn params(&mut self) -> Result<ParamSet, DataError> {
        let count = self.u32()?;
        let mut p = ParamSet::new();
        for _ in 0..count {
            let name = self.string()?;
            let t = self.tensor()?;
            p.push(name, t);
        }
        Ok(p)
    }
    fn bn_states(&mut self) -> Result<BnStates, DataError> {
        let count = self.u32()?;
        let mut bn = BnStates::new();
        for _ in 0..count {
            let name = self.string()?;
            let channels = self.u32()? as usize;
            let running_mean = self.f64s(channels)?;
            let running_var = self.f64s(channels)?;
            bn.push(
                name,
                BatchNormState {
                    running_mean,
                    running_var,
                },
            );
        }
        Ok(bn)
    }
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(|e| DataError::Io {
            path: tmp.display().to_string(),
            source: e,
        })?;
        let mut w = Writer {
            inner: BufWriter::new(file),
        };
        let io = |e: std::io::Error| DataError::Io {
            path: tmp.display().to_string(),
            source: e,
        };
        (|| -> std::io::Result<()> {
            w.inner.write_all(CHECKPOINT_MAGIC)?;
            w.u32(CHECKPOINT_VERSION)?;
            w.string(&state.config_hash)?;
            w.u64(state.seed)?;
            w.u64(state.epoch)?;
            w.u64(state.step_in_epoch)?;
            w.u64(state.global_step)?;

            w.params(&state.params)?;
            w.bn_states(&state.bn)?;

            match (&state.momentum_params, &state.momentum_bn) {
                (Some(p), Some(bn)) => {
                    w.u8(1)?;
                    w.params(p)?;
                    w.bn_states(bn)?;
                }
                _ => w.u8(0)?,
            }

            match &state.queue {
                Some(q) => {
                    w.u8(1)?;
                    w.u64(q.dim() as u64)?;
                    w.u64(q.capacity() as u64)?;
                    w.u64(q.len() as u64)?;
                    for row in q.contents() {
                        w.f64s(row)?;
                    }
                }
                None => w.u8(0)?,
            }

            w.u32(state.velocity.len() as u32)?;
            for v in &state.velocity {
                w.u64(v.len() as u64)?;
                w.f64s(v)?;
            }
            w.inner.flush()
        })()
        .map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, DataError> {
    let file = fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
    };

    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DataError::CorruptHeader {
            path: r.path.clone(),
            reason: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::VersionMismatch {
            path: r.path.clone(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config_hash = r.string()?;
    let seed = r.u64()?;
    let epoch = r.u64()?;
    let step_in_epoch = r.u64()?;
    let global_step = r.u64()?;

    let params = r.params()?;
    let bn = r.bn_states()?;

    let (momentum_params, momentum_bn) = if r.u8()? == 1 {
        (Some(r.params()?), Some(r.bn_states()?))
    } else {
        (None, None)
    };

    let queue = if r.u8()? == 1 {
        let dim = r.u64()? as usize;
        let capacity = r.u64()? as usize;
        let len = r.u64()? as usize;
        let mut q = Queue::new(dim, capacity);
        for _ in 0..len {
            let row = r.f64s(dim)?;
            let t =
                Tensor::new(vec![1, dim], row).map_err(|e| DataError::Invalid(e.to_string()))?;
            q.enqueue_batch(&t)
                .map_err(|e| DataError::Invalid(e.to_string()))?;
        }
        Some(q)
    } else {
        None
    };

    let vcount = r.u32()? as usize;
    let mut velocity = Vec::with_capacity(vcount);
    for _ in 0..vcount {
        let len = r.u64()? as usize;
        velocity.push(r.f64s(len)?);
    }

    Ok(TrainState {
        config_hash,
        seed,
        epoch,
        step_in_epoch,
        global_step,
        params,
        bn,
        momentum_params,
        momentum_bn,
        queue,
        velocity,
    })
}

//! Contrastive frameworks: the audiovisual model (two stream encoders,
//! fusion, projection/prediction heads), the four loss variants, the
//! momentum update, and the memory queue.

mod encoder;
mod losses;

pub use encoder::{preprocess_clips, AvModel, BatchInput, ConvStageCfg, EncoderConfig};
pub use losses::{
    byol_loss, cosine_similarity, infonce_loss, moco_loss, negative_cosine_direction,
    simsiam_loss,
};

use std::collections::VecDeque;

use thiserror::Error;

use crate::tensor::{BatchNormState, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum FrameworkError {
    #[error("invalid framework config: {0}")]
    InvalidConfig(String),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("{op}: embedding rows must be ℓ2-normalized (norm deviates by {deviation:.2e})")]
    UnnormalizedRows { op: &'static str, deviation: f64 },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("{0} target must carry no gradient")]
    TargetRequiresGrad(&'static str),
    #[error("queue entries must be unit-norm (got norm {0})")]
    QueueEntryNotUnit(f64),
    #[error("parameter {name}: shape {lhs:?} does not match {rhs:?}")]
    ParamShapeMismatch {
        name: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("{0}")]
    Tensor(#[from] TensorError),
}

/// Which contrastive variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameworkKind {
    SimClr,
    MoCo,
    Byol,
    SimSiam,
}

impl FrameworkKind {
    pub fn name(&self) -> &'static str {
        match self {
            FrameworkKind::SimClr => "simclr",
            FrameworkKind::MoCo => "moco",
            FrameworkKind::Byol => "byol",
            FrameworkKind::SimSiam => "simsiam",
        }
    }

    pub fn uses_momentum_encoder(&self) -> bool {
        matches!(self, FrameworkKind::MoCo | FrameworkKind::Byol)
    }

    pub fn uses_queue(&self) -> bool {
        matches!(self, FrameworkKind::MoCo)
    }

    pub fn uses_prediction_head(&self) -> bool {
        matches!(self, FrameworkKind::MoCo | FrameworkKind::Byol | FrameworkKind::SimSiam)
    }
}

#[derive(Debug, Clone)]
pub struct FrameworkConfig {
    pub kind: FrameworkKind,
    pub temperature: f64,
    /// Momentum coefficient of the EMA encoder (MoCo, BYOL).
    pub momentum: f64,
    /// Memory queue capacity (MoCo).
    pub queue_size: usize,
    /// Projection head output width.
    pub proj_dim: usize,
    /// Prediction head hidden width.
    pub pred_hidden: usize,
}

impl Default for FrameworkConfig {
    fn default() -> Self {
        FrameworkConfig {
            kind: FrameworkKind::SimClr,
            temperature: 0.1,
            momentum: 0.99,
            queue_size: 1024,
            proj_dim: 128,
            pred_hidden: 64,
        }
    }
}

impl FrameworkConfig {
    pub fn validate(&self) -> Result<(), FrameworkError> {
        match self.kind {
            FrameworkKind::SimClr | FrameworkKind::MoCo => {
                if self.temperature <= 0.0 {
                    return Err(FrameworkError::BadTemperature(self.temperature));
                }
            }
            // BYOL and SimSiam ignore temperature and queue
            FrameworkKind::Byol | FrameworkKind::SimSiam => {}
        }
        if self.kind.uses_momentum_encoder() && !(0.0..=1.0).contains(&self.momentum) {
            return Err(FrameworkError::InvalidConfig(format!(
                "momentum {} outside [0, 1]",
                self.momentum
            )));
        }
        if self.kind.uses_queue() && self.queue_size == 0 {
            return Err(FrameworkError::InvalidConfig("queue size must be positive".into()));
        }
        if self.proj_dim == 0 || self.pred_hidden == 0 {
            return Err(FrameworkError::InvalidConfig("head widths must be positive".into()));
        }
        Ok(())
    }
}

/// Named parameter tensors with a stable iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Vec<(String, Tensor)> {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Places every parameter on a tape. Training binds with gradients;
    /// momentum/frozen copies bind without, so no gradient can reach them.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone(), requires_grad)))
            .collect();
        BoundParams { vars }
    }

    /// FNV-1a over names, shapes, and exact data bits; used to assert that
    /// probe training leaves the encoder untouched.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, t) in &self.entries {
            mix(name.as_bytes());
            for &d in t.shape() {
                mix(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                mix(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Tape handles of one bound parameter set.
pub struct BoundParams {
    vars: Vec<(String, Var)>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var, FrameworkError> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| FrameworkError::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }
}

/// Named batch-norm running statistics, mirroring the BN layers of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStates {
    entries: Vec<(String, BatchNormState)>,
}

impl Default for BnStates {
    fn default() -> Self {
        Self::new()
    }
}

impl BnStates {
    pub fn new() -> Self {
        BnStates { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, state: BatchNormState) {
        self.entries.push((name.into(), state));
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut BatchNormState, FrameworkError> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| FrameworkError::UnknownParam(name.to_string()))
    }

    pub fn entries(&self) -> &[(String, BatchNormState)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Vec<(String, BatchNormState)> {
        &mut self.entries
    }
}

/// `θ_m ← m·θ_m + (1−m)·θ`, elementwise, with no gradient recorded.
pub fn momentum_update(
    momentum_params: &mut ParamSet,
    params: &ParamSet,
    m: f64,
) -> Result<(), FrameworkError> {
    if momentum_params.len() != params.len() {
        return Err(FrameworkError::InvalidConfig(format!(
            "momentum set has {} tensors, online set has {}",
            momentum_params.len(),
            params.len()
        )));
    }
    for ((mname, mt), (name, t)) in momentum_params
        .entries_mut()
        .iter_mut()
        .zip(params.entries())
    {
        if mname != name || mt.shape() != t.shape() {
            return Err(FrameworkError::ParamShapeMismatch {
                name: name.clone(),
                lhs: mt.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        for (a, &b) in mt.data_mut().iter_mut().zip(t.data()) {
            *a = m * *a + (1.0 - m) * b;
        }
    }
    Ok(())
}

/// FIFO ring of ℓ2-normalized key embeddings serving as extra negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Queue {
    dim: usize,
    capacity: usize,
    entries: VecDeque<Vec<f64>>,
}

impl Queue {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Queue {
            dim,
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Enqueues key rows oldest-first; once at capacity the oldest entries
    /// leave in FIFO order.
    pub fn enqueue_batch(&mut self, keys: &Tensor) -> Result<(), FrameworkError> {
        if keys.rank() != 2 || keys.shape()[1] != self.dim {
            return Err(FrameworkError::InvalidConfig(format!(
                "queue of dim {} cannot take keys of shape {:?}",
                self.dim,
                keys.shape()
            )));
        }
        for row in keys.data().chunks(self.dim) {
            let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(FrameworkError::QueueEntryNotUnit(norm));
            }
            self.entries.push_back(row.to_vec());
            if self.entries.len() > self.capacity {
                self.entries.pop_front();
            }
        }
        Ok(())
    }

    /// Queue contents oldest-first as a `[len, dim]` tensor.
    pub fn as_tensor(&self) -> Option<Tensor> {
        if self.entries.is_empty() {
            return None;
        }
        let mut data = Vec::with_capacity(self.entries.len() * self.dim);
        for row in &self.entries {
            data.extend_from_slice(row);
        }
        Some(Tensor::new(vec![self.entries.len(), self.dim], data).expect("queue shape"))
    }

    /// Oldest-first snapshot of the rows.
    pub fn contents(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|r| r.as_slice()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_update_examples() {
        let mk = |v: f64| {
            let mut p = ParamSet::new();
            p.push("w", Tensor::from_vec(vec![v, v]));
            p
        };
        // m = 1 leaves the copy unchanged
        let mut pm = mk(1.0);
        momentum_update(&mut pm, &mk(0.0), 1.0).unwrap();
        assert_eq!(pm.get("w").unwrap().data(), &[1.0, 1.0]);
        // m = 0 copies the online params
        let mut pm = mk(1.0);
        momentum_update(&mut pm, &mk(0.0), 0.0).unwrap();
        assert_eq!(pm.get("w").unwrap().data(), &[0.0, 0.0]);
        // m = 0.9: 0.9·1 + 0.1·0
        let mut pm = mk(1.0);
        momentum_update(&mut pm, &mk(0.0), 0.9).unwrap();
        assert_eq!(pm.get("w").unwrap().data(), &[0.9, 0.9]);
    }

    #[test]
    fn momentum_update_shape_mismatch() {
        let mut pm = ParamSet::new();
        pm.push("w", Tensor::from_vec(vec![1.0, 2.0]));
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(matches!(
            momentum_update(&mut pm, &p, 0.9),
            Err(FrameworkError::ParamShapeMismatch { .. })
        ));
    }

    #[test]
    fn geometric_convergence_with_frozen_target() {
        // ‖θ_m^(n) − θ‖ shrinks by exactly m per step; m = 0.5 is a power of
        // two, so the floating-point arithmetic is exact and the check is
        // bitwise.
        let mut pm = ParamSet::new();
        pm.push("w", Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        let mut target = ParamSet::new();
        target.push("w", Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let initial: Vec<f64> = pm.get("w").unwrap().data().to_vec();
        for n in 1..=50u32 {
            momentum_update(&mut pm, &target, 0.5).unwrap();
            let factor = 0.5f64.powi(n as i32);
            for (a, &b) in pm.get("w").unwrap().data().iter().zip(&initial) {
                assert_eq!(*a, b * factor, "step {n}");
            }
        }
    }

    #[test]
    fn queue_is_fifo_against_list_oracle() {
        let mut q = Queue::new(2, 4);
        let mut oracle: Vec<Vec<f64>> = Vec::new();
        let unit = |a: f64, b: f64| {
            let n = (a * a + b * b).sqrt();
            vec![a / n, b / n]
        };
        for i in 0..10 {
            let row = unit(i as f64 + 1.0, 2.0);
            let t = Tensor::new(vec![1, 2], row.clone()).unwrap();
            q.enqueue_batch(&t).unwrap();
            oracle.push(row);
            if oracle.len() > 4 {
                oracle.remove(0);
            }
            let got: Vec<Vec<f64>> = q.contents().iter().map(|r| r.to_vec()).collect();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn queue_after_two_batches_at_capacity() {
        // capacity 2B holds exactly the 2B keys of two enqueued batches, in order
        let b = 3;
        let mut q = Queue::new(1, 2 * b);
        let batch1 = Tensor::new(vec![b, 1], vec![1.0, -1.0, 1.0]).unwrap();
        let batch2 = Tensor::new(vec![b, 1], vec![-1.0, 1.0, -1.0]).unwrap();
        q.enqueue_batch(&batch1).unwrap();
        q.enqueue_batch(&batch2).unwrap();
        let rows: Vec<f64> = q.contents().iter().map(|r| r[0]).collect();
        assert_eq!(rows, vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn queue_rejects_unnormalized_keys() {
        let mut q = Queue::new(2, 4);
        let t = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert!(matches!(
            q.enqueue_batch(&t),
            Err(FrameworkError::QueueEntryNotUnit(_))
        ));
    }

    #[test]
    fn framework_config_validation() {
        let mut cfg = FrameworkConfig {
            kind: FrameworkKind::SimClr,
            temperature: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.kind = FrameworkKind::SimSiam;
        // BYOL/SimSiam ignore the temperature
        assert!(cfg.validate().is_ok());
    }
}

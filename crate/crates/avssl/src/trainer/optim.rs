//! SGD with momentum, weight-decay exemptions, and the warmup + cosine
//! learning-rate schedule.

use super::TrainError;
use crate::frameworks::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerConfig {
    /// Linear scaling rule: `lr × batch_size / 256`.
    pub fn effective_lr(&self, batch_size: usize) -> f64 {
        self.base_lr * batch_size as f64 / 256.0
    }
}

/// Bias and batch-norm parameters receive no weight decay.
pub fn is_decay_exempt(name: &str) -> bool {
    name.ends_with(".bias") || name.contains(".bn")
}

/// Velocity buffers aligned with a parameter set's entry order.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(params: &ParamSet) -> Self {
        SgdState {
            velocity: params.entries().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }
}

/// One SGD step: `v ← momentum·v + grad + wd·param` (wd = 0 for the exempt
/// set), `param ← param − lr·v`. Parameters whose gradient is `None` are
/// left untouched. A non-finite gradient aborts, naming the parameter.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &[Option<Vec<f64>>],
    state: &mut SgdState,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.velocity.len());
    for (((name, tensor), grad), velocity) in params
        .entries_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.velocity)
    {
        let Some(grad) = grad else { continue };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient { name: name.clone() });
        }
        let wd = if is_decay_exempt(name) { 0.0 } else { cfg.weight_decay };
        for ((p, &g), v) in tensor.data_mut().iter_mut().zip(grad).zip(velocity.iter_mut()) {
            *v = cfg.momentum * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Schedule shape: linear warmup from 0 to the effective rate over the
/// warmup epochs, then a half-cosine to 0 at the final step, no restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

impl ScheduleConfig {
    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps_per_epoch == 0 || self.total_epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "schedule needs at least one step and one epoch".into(),
            ));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(TrainError::InvalidConfig(format!(
                "warmup of {} epochs must be shorter than the run of {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate at a step, continuous at the warmup/cosine junction:
/// `step == 0` gives 0, the end of warmup gives the effective rate, the
/// final step gives 0 again.
pub fn lr_at(step: usize, effective_lr: f64, cfg: &ScheduleConfig) -> Result<f64, TrainError> {
    let total = cfg.total_steps();
    let warmup = cfg.warmup_steps();
    if step > total {
        return Err(TrainError::ScheduleStep { step, total });
    }
    if warmup > 0 && step <= warmup {
        return Ok(effective_lr * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(effective_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sched(warmup: usize, total: usize, steps: usize) -> ScheduleConfig {
        ScheduleConfig {
            warmup_epochs: warmup,
            total_epochs: total,
            steps_per_epoch: steps,
        }
    }

    #[test]
    fn schedule_endpoints_and_junction() {
        let cfg = sched(10, 50, 8);
        let opt = OptimizerConfig::default();
        // effective lr at batch 128 is 0.1 × 128/256 = 0.05
        let eff = opt.effective_lr(128);
        assert_eq!(eff, 0.05);
        assert_eq!(lr_at(0, eff, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(cfg.warmup_steps(), eff, &cfg).unwrap(), eff);
        let end = lr_at(cfg.total_steps(), eff, &cfg).unwrap();
        assert!(end.abs() < 1e-15);
        // continuity across the junction
        let before = lr_at(cfg.warmup_steps() - 1, eff, &cfg).unwrap();
        let after = lr_at(cfg.warmup_steps() + 1, eff, &cfg).unwrap();
        assert!((before - eff).abs() < eff * 0.02);
        assert!((after - eff).abs() < eff * 0.01);
        // out of range
        assert!(matches!(
            lr_at(cfg.total_steps() + 1, eff, &cfg),
            Err(TrainError::ScheduleStep { .. })
        ));
    }

    #[test]
    fn schedule_monotone_after_warmup() {
        let cfg = sched(2, 20, 4);
        let mut prev = f64::INFINITY;
        for step in cfg.warmup_steps()..=cfg.total_steps() {
            let lr = lr_at(step, 1.0, &cfg).unwrap();
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
    }

    #[test]
    fn sgd_basic_updates() {
        let mut params = ParamSet::new();
        params.push("w", Tensor::from_vec(vec![1.0]));
        let mut st = SgdState::new(&params);
        let cfg = OptimizerConfig {
            base_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        // zero grad, zero velocity: unchanged
        sgd_step(&mut params, &[Some(vec![0.0])], &mut st, 0.1, &cfg).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[1.0]);
        // grad 1, lr 0.1: decreases by 0.1
        sgd_step(&mut params, &[Some(vec![1.0])], &mut st, 0.1, &cfg).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn bias_is_decay_exempt() {
        let cfg_wd = OptimizerConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
        };
        let cfg_nowd = OptimizerConfig {
            weight_decay: 0.0,
            ..cfg_wd.clone()
        };
        let run = |cfg: &OptimizerConfig| {
            let mut params = ParamSet::new();
            params.push("fusion.bias", Tensor::from_vec(vec![0.5, -0.25]));
            params.push("video.bn0.gamma", Tensor::from_vec(vec![1.0]));
            params.push("fusion.weight", Tensor::from_vec(vec![2.0]));
            let mut st = SgdState::new(&params);
            for _ in 0..5 {
                sgd_step(
                    &mut params,
                    &[
                        Some(vec![0.01, -0.02]),
                        Some(vec![0.005]),
                        Some(vec![0.01]),
                    ],
                    &mut st,
                    0.05,
                    cfg,
                )
                .unwrap();
            }
            params
        };
        let with_wd = run(&cfg_wd);
        let without = run(&cfg_nowd);
        // exempt parameters take identical trajectories
        assert_eq!(
            with_wd.get("fusion.bias").unwrap().data(),
            without.get("fusion.bias").unwrap().data()
        );
        assert_eq!(
            with_wd.get("video.bn0.gamma").unwrap().data(),
            without.get("video.bn0.gamma").unwrap().data()
        );
        // non-exempt parameters differ
        assert_ne!(
            with_wd.get("fusion.weight").unwrap().data(),
            without.get("fusion.weight").unwrap().data()
        );
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut params = ParamSet::new();
        params.push("audio.conv0.weight", Tensor::from_vec(vec![1.0]));
        let mut st = SgdState::new(&params);
        let err = sgd_step(
            &mut params,
            &[Some(vec![f64::NAN])],
            &mut st,
            0.1,
            &OptimizerConfig::default(),
        )
        .unwrap_err();
        match err {
            TrainError::NonFiniteGradient { name } => assert_eq!(name, "audio.conv0.weight"),
            other => panic!("expected NonFiniteGradient, got {other}"),
        }
    }
}

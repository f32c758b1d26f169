//! Momentum SGD with coupled weight decay, plus cosine learning-rate schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay {} is negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One momentum-SGD update in place:
/// `v ← momentum·v + grad + weight_decay·θ`, `θ ← θ − lr·v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    config: &SgdConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::dim(format!(
            "sgd_step lengths differ: params {}, grads {}, velocity {}",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::Usage(format!("negative learning rate {lr}")));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = config.momentum * *v + g + config.weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD holding one velocity buffer per model parameter.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig, model: &Model) -> Result<Self> {
        config.validate()?;
        let velocity = model
            .params()
            .iter()
            .map(|p| vec![0.0; p.tensor.numel()])
            .collect();
        Ok(Self { config, velocity })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Applies one update; `grads` follows the model's parameter order.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::dim(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((param, g), v) in model
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.velocity)
        {
            sgd_step(param.tensor.data_mut(), g, v, lr, &self.config)?;
        }
        Ok(())
    }
}

/// Learning rate as a function of the (epoch) step.
pub trait LrSchedule {
    fn lr_at(&self, step: usize) -> Result<f64>;

    /// Last valid step.
    fn total_steps(&self) -> usize;
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("cosine schedule needs total_steps > 0".into()));
        }
        if !(lr_max >= lr_min && lr_min >= 0.0) {
            return Err(Error::Config(format!(
                "need lr_max >= lr_min >= 0, got {lr_max}, {lr_min}"
            )));
        }
        Ok(Self {
            lr_max,
            lr_min,
            total_steps,
        })
    }

    /// Schedule with the default 0.1 → 0.0 range.
    pub fn with_defaults(total_steps: usize) -> Result<Self> {
        Self::new(0.1, 0.0, total_steps)
    }

    fn eval(&self, step: usize) -> f64 {
        let t = step as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

impl LrSchedule for CosineSchedule {
    fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Usage(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        Ok(self.eval(step))
    }

    fn total_steps(&self) -> usize {
        self.total_steps
    }
}

/// Cosine annealing restarted every `cycle_length` steps.
///
/// Steps that are multiples of `cycle_length` start a new cycle at `lr_max`,
/// except the final step `cycle_length·num_cycles`, which is the end of the
/// last cycle and evaluates to `lr_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicCosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub cycle_length: usize,
    pub num_cycles: usize,
}

impl CyclicCosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, cycle_length: usize, num_cycles: usize) -> Result<Self> {
        if num_cycles == 0 {
            return Err(Error::Config("cyclic schedule needs num_cycles > 0".into()));
        }
        CosineSchedule::new(lr_max, lr_min, cycle_length)?;
        Ok(Self {
            lr_max,
            lr_min,
            cycle_length,
            num_cycles,
        })
    }

    /// The plain cosine schedule that every cycle follows.
    pub fn cycle(&self) -> CosineSchedule {
        CosineSchedule {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            total_steps: self.cycle_length,
        }
    }

    /// Learning rate reached at the end of every cycle, where snapshots are taken.
    pub fn cycle_end_lr(&self) -> f64 {
        self.cycle().eval(self.cycle_length)
    }

    /// Steps `{L, 2L, …, ML}` that close a cycle.
    pub fn cycle_ends(&self) -> Vec<usize> {
        (1..=self.num_cycles).map(|k| k * self.cycle_length).collect()
    }
}

impl LrSchedule for CyclicCosineSchedule {
    fn lr_at(&self, step: usize) -> Result<f64> {
        let total = self.total_steps();
        if step > total {
            return Err(Error::Usage(format!(
                "step {step} beyond schedule length {total}"
            )));
        }
        if step == total {
            return Ok(self.cycle_end_lr());
        }
        Ok(self.cycle().eval(step % self.cycle_length))
    }

    fn total_steps(&self) -> usize {
        self.cycle_length * self.num_cycles
    }
}

/// Constant learning rate; used by tests and for frozen runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSchedule {
    pub lr: f64,
    pub total_steps: usize,
}

impl LrSchedule for ConstantSchedule {
    fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Usage(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        Ok(self.lr)
    }

    fn total_steps(&self) -> usize {
        self.total_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut v = vec![0.5, 0.5, 0.5];
        sgd_step(&mut p, &[1.0, 1.0, 1.0], &mut v, 0.0, &SgdConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn vanilla_step_subtracts_gradient() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut p = vec![1.0, 2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.25, -0.5], &mut v, 1.0, &cfg).unwrap();
        assert_eq!(p, vec![0.75, 2.5]);
    }

    #[test]
    fn momentum_recurrence_on_quadratic() {
        // Loss 0.5·θ², gradient θ. Independent hand-rolled recurrence.
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let lr = 0.1;
        let mut p = vec![2.0];
        let mut v = vec![0.0];
        let (mut th, mut vel) = (2.0f64, 0.0f64);
        for _ in 0..3 {
            let g = vec![p[0]];
            sgd_step(&mut p, &g, &mut v, lr, &cfg).unwrap();
            vel = 0.9 * vel + th;
            th -= lr * vel;
        }
        // θ₁ = 1.8, θ₂ = 1.8 − 0.1·(0.9·2 + 1.8) = 1.44, θ₃ = 1.44 − 0.1·(0.9·3.6 + 1.44) = 0.972
        assert!((p[0] - th).abs() < 1e-12);
        assert!((p[0] - 0.972).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_is_gradient_coupled() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.5,
        };
        let mut p = vec![2.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.0], &mut v, 0.1, &cfg).unwrap();
        assert!((p[0] - (2.0 - 0.1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_shape_mismatch() {
        let mut p = vec![0.0; 3];
        let mut v = vec![0.0; 2];
        assert!(matches!(
            sgd_step(&mut p, &[0.0; 3], &mut v, 0.1, &SgdConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig { momentum: 1.0, weight_decay: 0.0 }.validate().is_err());
        assert!(SgdConfig { momentum: 0.5, weight_decay: -1.0 }.validate().is_err());
        assert!(SgdConfig::default().validate().is_ok());
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = CosineSchedule::with_defaults(200).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.1);
        assert!(s.lr_at(200).unwrap().abs() < 1e-17);
        assert!((s.lr_at(100).unwrap() - 0.05).abs() < 1e-15);
        assert!(matches!(s.lr_at(201), Err(Error::Usage(_))));
    }

    #[test]
    fn cosine_is_monotone() {
        let s = CosineSchedule::with_defaults(57).unwrap();
        let lrs: Vec<f64> = (0..=57).map(|i| s.lr_at(i).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cyclic_resets_and_tracks_plain_cosine() {
        let c = CyclicCosineSchedule::new(0.1, 0.0, 9, 5).unwrap();
        let plain = CosineSchedule::new(0.1, 0.0, 9).unwrap();
        for k in 0..5 {
            assert_eq!(c.lr_at(k * 9).unwrap(), 0.1);
            for off in 0..9 {
                assert_eq!(c.lr_at(k * 9 + off).unwrap(), plain.lr_at(off).unwrap());
            }
        }
        assert_eq!(c.lr_at(45).unwrap(), c.cycle_end_lr());
        assert!(c.cycle_end_lr().abs() < 1e-17);
        assert_eq!(c.cycle_ends(), vec![9, 18, 27, 36, 45]);
    }

    #[test]
    fn single_cycle_equals_plain_cosine() {
        let c = CyclicCosineSchedule::new(0.1, 0.0, 20, 1).unwrap();
        let plain = CosineSchedule::with_defaults(20).unwrap();
        for i in 0..=20 {
            assert_eq!(c.lr_at(i).unwrap(), plain.lr_at(i).unwrap());
        }
    }
}

//! Learning-rate schedules. Epochs are counted from 0.

use std::f64::consts::PI;

pub const COSINE_MAX_LR: f64 = 0.1;
pub const COSINE_MIN_LR: f64 = 0.001;
pub const STEP_BASE_LR: f64 = 0.001;
pub const STEP_RATE: f64 = 0.5;
pub const STEP_EVERY: usize = 20;

/// Cosine annealing from 0.1 at `epoch = 0` to 0.001 at `epoch = total`.
pub fn cosine_lr(epoch: usize, total: usize) -> f64 {
    cosine_lr_range(epoch, total, COSINE_MAX_LR, COSINE_MIN_LR)
}

pub fn cosine_lr_range(epoch: usize, total: usize, max: f64, min: f64) -> f64 {
    let t = if total == 0 { 0.0 } else { epoch.min(total) as f64 / total as f64 };
    min + 0.5 * (max - min) * (1.0 + (PI * t).cos())
}

/// 0.001, halved after every 20 epochs.
pub fn step_decay_lr(epoch: usize) -> f64 {
    step_decay_lr_with(epoch, STEP_BASE_LR, STEP_RATE, STEP_EVERY)
}

pub fn step_decay_lr_with(epoch: usize, base: f64, rate: f64, every: usize) -> f64 {
    base * rate.powi((epoch / every.max(1)) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Cosine { max: f64, min: f64 },
    StepDecay { base: f64, rate: f64, every: usize },
}

impl LrSchedule {
    pub const COSINE: Self = Self::Cosine {
        max: COSINE_MAX_LR,
        min: COSINE_MIN_LR,
    };
    pub const STEP_DECAY: Self = Self::StepDecay {
        base: STEP_BASE_LR,
        rate: STEP_RATE,
        every: STEP_EVERY,
    };

    pub fn lr(&self, epoch: usize, total: usize) -> f64 {
        match *self {
            Self::Cosine { max, min } => cosine_lr_range(epoch, total, max, min),
            Self::StepDecay { base, rate, every } => step_decay_lr_with(epoch, base, rate, every),
        }
    }
}

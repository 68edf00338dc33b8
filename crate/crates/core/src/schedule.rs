//! Decay-factor schedules `alpha(t)` and pruning-rate ramps `P(t)`.

use alloc::format;

use crate::error::{Error, Result};

/// Values of an exponential schedule below this are snapped to zero.
pub const DEFAULT_ZERO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    /// `alpha0 · (alpha0 / epsilon)^(−t / (t_max − 1))`.
    Exponential,
    /// `alpha0 · (1 − t / (t_max − 1))`.
    Linear,
    /// Always zero: pruned filters are zeroed every epoch.
    ConstantZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySchedule {
    pub kind: DecayKind,
    pub alpha0: f64,
    /// Value reached at the last epoch (exponential only).
    pub epsilon: f64,
    pub t_max: usize,
    pub zero_floor: f64,
}

impl DecaySchedule {
    pub fn exponential(alpha0: f64, epsilon: f64, t_max: usize) -> Self {
        DecaySchedule {
            kind: DecayKind::Exponential,
            alpha0,
            epsilon,
            t_max,
            zero_floor: DEFAULT_ZERO_FLOOR,
        }
    }

    pub fn linear(alpha0: f64, t_max: usize) -> Self {
        DecaySchedule {
            kind: DecayKind::Linear,
            alpha0,
            epsilon: 0.0,
            t_max,
            zero_floor: DEFAULT_ZERO_FLOOR,
        }
    }

    pub fn constant_zero(t_max: usize) -> Self {
        DecaySchedule {
            kind: DecayKind::ConstantZero,
            alpha0: 0.0,
            epsilon: 0.0,
            t_max,
            zero_floor: DEFAULT_ZERO_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max < 2 {
            return Err(Error::Input(format!("t_max must be at least 2, got {}", self.t_max)));
        }
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(Error::Config(format!("alpha0 {} outside [0, 1]", self.alpha0)));
        }
        if self.kind == DecayKind::Exponential && !(self.epsilon > 0.0 && self.epsilon < self.alpha0) {
            return Err(Error::Config(format!(
                "exponential decay needs 0 < epsilon < alpha0, got epsilon {} and alpha0 {}",
                self.epsilon, self.alpha0
            )));
        }
        if self.zero_floor.is_nan() || self.zero_floor < 0.0 {
            return Err(Error::Config(format!("zero floor {} is negative", self.zero_floor)));
        }
        Ok(())
    }

    /// Exponential value before the zero floor is applied.
    pub fn exponential_raw(&self, t: usize) -> f64 {
        let span = (self.t_max - 1) as f64;
        self.alpha0 * libm::pow(self.alpha0 / self.epsilon, -(t as f64) / span)
    }

    /// Decay factor applied to pruned filters after epoch `t`.
    pub fn alpha_at(&self, t: usize) -> Result<f64> {
        self.validate()?;
        if t >= self.t_max {
            return Err(Error::Input(format!("epoch {t} outside [0, {})", self.t_max)));
        }
        Ok(match self.kind {
            DecayKind::Exponential => {
                let a = self.exponential_raw(t);
                if a < self.zero_floor {
                    0.0
                } else {
                    a
                }
            }
            DecayKind::Linear => self.alpha0 * (1.0 - t as f64 / (self.t_max - 1) as f64),
            DecayKind::ConstantZero => 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RampKind {
    /// The target rate from the first epoch.
    Constant,
    /// `target · (1 − e^(−t/tau))`, snapped to `target` once `t >= 3·tau`.
    ExponentialApproach { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRamp {
    pub kind: RampKind,
    pub target: f64,
}

impl RateRamp {
    pub fn constant(target: f64) -> Self {
        RateRamp {
            kind: RampKind::Constant,
            target,
        }
    }

    pub fn exponential_approach(target: f64, tau: f64) -> Self {
        RateRamp {
            kind: RampKind::ExponentialApproach { tau },
            target,
        }
    }

    /// Default time constant for a run of `t_max` epochs.
    pub fn default_tau(t_max: usize) -> f64 {
        t_max as f64 / 8.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target) {
            return Err(Error::Config(format!("target rate {} outside [0, 1)", self.target)));
        }
        if let RampKind::ExponentialApproach { tau } = self.kind {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::Config(format!("ramp tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }

    /// Pruning rate used at epoch `t` of `t_max`.
    pub fn rate_at(&self, t: usize, t_max: usize) -> Result<f64> {
        self.validate()?;
        if t >= t_max {
            return Err(Error::Input(format!("epoch {t} outside [0, {t_max})")));
        }
        Ok(match self.kind {
            RampKind::Constant => self.target,
            RampKind::ExponentialApproach { tau } => {
                let t = t as f64;
                if t >= 3.0 * tau {
                    self.target
                } else {
                    self.target * (1.0 - libm::exp(-t / tau))
                }
            }
        })
    }
}

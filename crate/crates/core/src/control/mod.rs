//! The unit's existing control scheme (PID gate loop plus software cam) and the
//! points where an agent injects its flow and blade biases.

mod cam;
mod pid;

pub use cam::{blade_command, rate_limit, CamGrid};
pub use pid::{pid_step, pid_step_unbiased, PidGains, PidState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("non-finite controller input: {0}")]
    NonFinite(&'static str),
    #[error("invalid PID gains: {0}")]
    InvalidGains(String),
    #[error("malformed cam grid: {0}")]
    MalformedCam(String),
    #[error("cam csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("cam csv line {line}: {msg}")]
    CamCsvValue { line: usize, msg: String },
}

/// Agent biases added to the flow error and to the cam output.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasCommand {
    /// CFS, signed.
    pub q_bias: f64,
    /// Blade %, signed.
    pub bp_bias: f64,
}

impl BiasCommand {
    pub const ZERO: BiasCommand = BiasCommand { q_bias: 0.0, bp_bias: 0.0 };

    pub fn new(q_bias: f64, bp_bias: f64) -> Self {
        Self { q_bias, bp_bias }
    }

    pub fn is_finite(&self) -> bool {
        self.q_bias.is_finite() && self.bp_bias.is_finite()
    }

    pub fn clamped(self, limits: &BiasLimits) -> Self {
        Self {
            q_bias: self.q_bias.clamp(-limits.q_abs_max, limits.q_abs_max),
            bp_bias: self.bp_bias.clamp(-limits.bp_abs_max, limits.bp_abs_max),
        }
    }
}

/// Safety envelope on bias magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasLimits {
    pub q_abs_max: f64,
    pub bp_abs_max: f64,
}

impl Default for BiasLimits {
    fn default() -> Self {
        Self { q_abs_max: 6000.0, bp_abs_max: 10.0 }
    }
}

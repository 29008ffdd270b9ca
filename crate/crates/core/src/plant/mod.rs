//! Ground-truth plant: unit hydraulics and efficiency, thermal and trash
//! sub-models, the tick engine, an operator emulator and the synthetic history
//! generator.

mod config;
pub mod history;
mod models;
pub mod operator;
mod scenario;
mod sim;
pub mod telemetry;
mod truth;

pub use config::{default_cam, default_units, SeasonProfile, SimConfig, TailwaterRating, UnitParams};
pub use models::{
    evaluate_alarms, update_stator_thermal, update_trash, Alarm, AlarmInputs, AlarmKind, AlarmLimits, RoughZone,
    ThermalParams, VibrationParams, DEFAULT_TRASH_RATE,
};
pub use scenario::{EventKind, Scenario, ScenarioEvent};
pub use sim::{HeadState, PlantSim, TickOutput, UnitCommand, UnitSimState};
pub use truth::{true_efficiency, GateFlow, TruthEfficiencyModel, TruthSurface};

use thiserror::Error;

use crate::control::ControlError;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Scenario(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("no unit {0}")]
    NoSuchUnit(usize),
    #[error("unit {0} is already ejecting")]
    AlreadyEjecting(usize),
    #[error("unit {0} is offline")]
    NotOnline(usize),
    #[error("expected {expected} unit commands, got {got}")]
    CommandCount { expected: usize, got: usize },
}

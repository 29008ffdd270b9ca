use std::path::Path;

use serde::{Deserialize, Serialize};

use super::models::{AlarmLimits, ThermalParams, VibrationParams, DEFAULT_TRASH_RATE};
use super::truth::{GateFlow, TruthEfficiencyModel};
use super::PlantError;
use crate::control::{CamGrid, PidGains};

/// One river season: pool elevation held by the Corps and the river flow that
/// sets the tailwater.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonProfile {
    /// ft above sea level.
    pub h_up: f64,
    /// CFS through the whole dam.
    pub river_flow: f64,
}

/// Tailwater elevation as a linear function of river flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailwaterRating {
    pub base: f64,
    /// ft per 1000 CFS.
    pub per_kcfs: f64,
}

impl Default for TailwaterRating {
    fn default() -> Self {
        Self { base: 415.2, per_kcfs: 0.2 }
    }
}

impl TailwaterRating {
    pub fn h_down(&self, river_flow: f64) -> f64 {
        self.base + self.per_kcfs * river_flow / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct UnitParams {
    pub truth: TruthEfficiencyModel,
    pub thermal: ThermalParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_units: usize,
    /// MW per unit.
    pub rated_power: f64,
    /// Minutes per tick.
    pub dt: f64,
    pub rng_seed: u64,
    /// Seconds per control-loop substep inside a tick.
    pub control_substep_s: f64,
    pub pid: PidGains,
    /// Gate-to-flow time constant, minutes.
    pub flow_tau_min: f64,
    pub gate_flow: GateFlow,
    /// Hydraulic ceiling on a unit's commanded flow, CFS.
    pub unit_max_flow: f64,
    /// Ceiling on the equal-share allocation to one unit, CFS.
    pub unit_alloc_max: f64,
    pub blade_rate_pct_per_min: f64,
    /// Optional cam CSV; the built-in index-test cam is used when absent.
    pub cam_csv: Option<String>,
    /// Per-unit parameters; shorter lists repeat their last entry.
    pub units: Vec<UnitParams>,
    pub trash_rate: f64,
    pub eject_duration_min: u32,
    pub vibration: VibrationParams,
    pub alarms: AlarmLimits,
    /// Index 0 is season 1 (high head, low flow), index 1 season 2.
    pub seasons: Vec<SeasonProfile>,
    pub tailwater: TailwaterRating,
    /// Standard deviation of the per-tick pool-level wander, ft.
    pub head_noise_ft: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_units: 3,
            rated_power: 25.0,
            dt: 1.0,
            rng_seed: 1,
            control_substep_s: 1.0,
            pid: PidGains::default(),
            flow_tau_min: 3.0,
            gate_flow: GateFlow::default(),
            unit_max_flow: 11_000.0,
            unit_alloc_max: 10_000.0,
            blade_rate_pct_per_min: 1.0,
            cam_csv: None,
            units: default_units(),
            trash_rate: DEFAULT_TRASH_RATE,
            eject_duration_min: 15,
            vibration: VibrationParams::default(),
            alarms: AlarmLimits::default(),
            seasons: vec![
                SeasonProfile { h_up: 455.0, river_flow: 29_000.0 },
                SeasonProfile { h_up: 453.0, river_flow: 60_000.0 },
            ],
            tailwater: TailwaterRating::default(),
            head_noise_ft: 0.01,
        }
    }
}

/// Three units of one design with different runner wear: unit 2 peaks at high
/// flow and runs cool, unit 3 peaks at low flow and heats early.
pub fn default_units() -> Vec<UnitParams> {
    let base = TruthEfficiencyModel::default();
    vec![
        UnitParams { truth: base, thermal: ThermalParams::default() },
        UnitParams {
            truth: TruthEfficiencyModel { eta_max: 0.94, q_opt_fraction: 0.95, ..base },
            thermal: ThermalParams { heating: 0.6, ..ThermalParams::default() },
        },
        UnitParams {
            truth: TruthEfficiencyModel { eta_max: 0.92, q_opt_fraction: 0.65, ..base },
            thermal: ThermalParams { load_fraction: 0.69, ..ThermalParams::default() },
        },
    ]
}

/// Index-test cam shipped with the plant: BP = 10 + 0.7·GP + 0.5·(H − 34).
pub fn default_cam() -> CamGrid {
    let gate: Vec<f64> = (0..=10).map(|i| i as f64 * 10.0).collect();
    let head: Vec<f64> = (0..=6).map(|i| 20.0 + i as f64 * 4.0).collect();
    CamGrid::from_fn(gate, head, |g, h| 10.0 + 0.7 * g + 0.5 * (h - 34.0)).expect("default cam is well formed")
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PlantError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| PlantError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PlantError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::Config(m.to_string()));
        if self.n_units < 1 {
            return bad("n_units must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.control_substep_s > 0.0) || self.substeps() == 0 {
            return bad("control_substep_s must divide into the tick");
        }
        if self.units.is_empty() {
            return bad("at least one unit parameter block is required");
        }
        if self.seasons.len() != 2 {
            return bad("exactly two seasons are required");
        }
        if !(self.flow_tau_min > 0.0) {
            return bad("flow_tau_min must be positive");
        }
        self.pid.validate().map_err(|e| PlantError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn unit(&self, i: usize) -> &UnitParams {
        &self.units[i.min(self.units.len() - 1)]
    }

    pub fn substeps(&self) -> usize {
        (self.dt * 60.0 / self.control_substep_s).round() as usize
    }

    pub fn cam(&self) -> Result<CamGrid, PlantError> {
        match &self.cam_csv {
            None => Ok(default_cam()),
            Some(path) => {
                let f = std::fs::File::open(path)?;
                CamGrid::from_csv(f).map_err(|e| PlantError::Config(e.to_string()))
            }
        }
    }

    pub fn season_head(&self, season: usize) -> f64 {
        let s = self.seasons[season.min(1)];
        s.h_up - self.tailwater.h_down(s.river_flow)
    }
}

//! Synthetic process history: a seasonal river, Corps flow assignments, an
//! emulated operator and random cooling and vibration disturbances driving the
//! plant minute by minute.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::operator::{equal_allocation, OperatorEmulator, OperatorParams};
use super::sim::{PlantSim, UnitCommand};
use super::telemetry::{AlarmLogRow, AlarmLogWriter, TelemetryRow, TelemetryWriter};
use super::{PlantError, SimConfig};
use crate::control::BiasCommand;
use crate::physics::{corps_available_flow, LOCKING_RESERVE_CFS};

pub const MINUTES_PER_DAY: u64 = 1440;

/// Daily river flow: a spring freshet receding into a summer base flow, with
/// log-normal day-to-day persistence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiverModel {
    pub spring_flow: f64,
    pub summer_flow: f64,
    /// Day of year the recession reaches base flow.
    pub recession_end_day: f64,
    pub recession_days: f64,
    pub log_sigma: f64,
    pub persistence: f64,
    /// River flow above which the Corps lowers the pool toward the season 2 level.
    pub pool_drop_start: f64,
    pub pool_drop_span: f64,
}

impl Default for RiverModel {
    fn default() -> Self {
        Self {
            spring_flow: 70_000.0,
            summer_flow: 29_000.0,
            recession_end_day: 165.0,
            recession_days: 80.0,
            log_sigma: 0.08,
            persistence: 0.85,
            pool_drop_start: 38_000.0,
            pool_drop_span: 20_000.0,
        }
    }
}

impl RiverModel {
    pub fn seasonal_mean(&self, day_of_year: f64) -> f64 {
        let w = ((self.recession_end_day - day_of_year) / self.recession_days).clamp(0.0, 1.0);
        self.summer_flow + (self.spring_flow - self.summer_flow) * w
    }

    /// Pool elevation the Corps holds at this river flow, between the two
    /// season levels.
    pub fn pool_level(&self, cfg: &SimConfig, river_flow: f64) -> f64 {
        let w = ((river_flow - self.pool_drop_start) / self.pool_drop_span).clamp(0.0, 1.0);
        cfg.seasons[0].h_up + (cfg.seasons[1].h_up - cfg.seasons[0].h_up) * w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistoryParams {
    pub days: u32,
    /// Day of year of the first simulated day (1 = Jan 1).
    pub start_day: u32,
    pub river: RiverModel,
    /// Minutes between Corps flow updates, drawn uniformly.
    pub corps_interval_min: (u32, u32),
    pub operator: OperatorParams,
    /// Expected cooling faults per unit-day.
    pub cooling_fault_per_day: f64,
    /// Extra stator heating during a fault, °F/min, drawn uniformly.
    pub cooling_fault_heat: (f64, f64),
    pub cooling_fault_min: (u32, u32),
    pub vibration_per_day: f64,
    pub vibration_min: (u32, u32),
}

impl Default for HistoryParams {
    fn default() -> Self {
        Self {
            days: 200,
            start_day: 75,
            river: RiverModel::default(),
            corps_interval_min: (240, 480),
            operator: OperatorParams { explore_per_min: 1.0 / 240.0, ..OperatorParams::default() },
            cooling_fault_per_day: 0.28,
            cooling_fault_heat: (1.0, 6.0),
            cooling_fault_min: (60, 240),
            vibration_per_day: 0.3,
            vibration_min: (5, 20),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub rows: u64,
    pub log_rows: u64,
    pub load_ejects: Vec<u32>,
    pub energy_mwhr: f64,
}

fn draw_range<R: Rng>(rng: &mut R, (lo, hi): (u32, u32)) -> u32 {
    rng.gen_range(lo..=hi.max(lo))
}

/// Runs the history and hands every telemetry row and alarm-log row to the
/// callbacks, in time order.
pub fn synthesize_history_with(
    cfg: &SimConfig,
    p: &HistoryParams,
    mut on_row: impl FnMut(&TelemetryRow) -> Result<(), PlantError>,
    mut on_log: impl FnMut(&AlarmLogRow) -> Result<(), PlantError>,
) -> Result<HistorySummary, PlantError> {
    let n = cfg.n_units;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed_0fb1_5704);
    let shock = Normal::new(0.0, p.river.log_sigma.max(0.0)).map_err(|e| PlantError::Config(e.to_string()))?;
    let mut z = 0.0;
    let daily: Vec<f64> = (0..=p.days)
        .map(|d| {
            z = p.river.persistence * z + shock.sample(&mut rng);
            p.river.seasonal_mean(f64::from(p.start_day + d)) * z.exp()
        })
        .collect();
    let river_at = |m: u64| {
        let d = (m / MINUTES_PER_DAY) as usize;
        let frac = (m % MINUTES_PER_DAY) as f64 / MINUTES_PER_DAY as f64;
        daily[d] + (daily[d + 1] - daily[d]) * frac
    };
    let plant_cap = n as f64 * cfg.unit_alloc_max;
    let corps_flow = |river: f64| {
        let q = corps_available_flow(river, LOCKING_RESERVE_CFS).min(plant_cap);
        (q / 250.0).round() * 250.0
    };

    let start_minute = u64::from(p.start_day.saturating_sub(1)) * MINUTES_PER_DAY;
    let river0 = river_at(0);
    let mut plant_q = corps_flow(river0);
    let mut sim =
        PlantSim::new(cfg.clone(), 1, &equal_allocation(plant_q, &vec![true; n], cfg.unit_alloc_max), start_minute)?;
    sim.set_river(p.river.pool_level(cfg, river0), river0);
    let mut op = OperatorEmulator::new(p.operator.clone(), n);
    let mut next_corps = 0u64;
    let mut fault_until = vec![0u64; n];
    let mut summary = HistorySummary { load_ejects: vec![0; n], ..Default::default() };
    let total = u64::from(p.days) * MINUTES_PER_DAY;

    for m in 0..total {
        let river = river_at(m);
        sim.set_river(p.river.pool_level(cfg, river), river);
        if m >= next_corps {
            plant_q = corps_flow(river);
            next_corps = m + u64::from(draw_range(&mut rng, p.corps_interval_min));
        }
        for u in 0..n {
            if fault_until[u] > 0 && m >= fault_until[u] {
                sim.force_stator_hot(u, 0.0)?;
                fault_until[u] = 0;
            }
            if fault_until[u] == 0 && rng.gen_bool((p.cooling_fault_per_day / MINUTES_PER_DAY as f64).min(1.0)) {
                let (lo, hi) = p.cooling_fault_heat;
                sim.force_stator_hot(u, rng.gen_range(lo..=hi.max(lo)))?;
                fault_until[u] = m + u64::from(draw_range(&mut rng, p.cooling_fault_min));
            }
            if rng.gen_bool((p.vibration_per_day / MINUTES_PER_DAY as f64).min(1.0)) {
                sim.force_vibration(u, draw_range(&mut rng, p.vibration_min))?;
            }
        }
        for u in 0..n {
            if op.wants_eject(&sim.units()[u]) {
                sim.load_eject(u)?;
                summary.load_ejects[u] += 1;
            }
        }
        let available: Vec<bool> = sim.units().iter().map(|s| s.online).collect();
        let alloc = equal_allocation(plant_q, &available, cfg.unit_alloc_max);
        let minute = sim.minute();
        let mut cmds = Vec::with_capacity(n);
        for (u, share) in alloc.into_iter().enumerate() {
            let state = &sim.units()[u];
            let q = (share - op.stator_response(u, state)).max(0.0);
            let offset = op.blade_offset(u, minute, state, &mut rng);
            cmds.push(if offset == 0.0 {
                UnitCommand::plain(q)
            } else {
                UnitCommand::biased(q, BiasCommand::new(0.0, offset))
            });
        }
        let out = sim.tick(&cmds)?;
        on_row(&out.row)?;
        for l in &out.log {
            on_log(l)?;
        }
        summary.rows += 1;
        summary.log_rows += out.log.len() as u64;
    }
    summary.energy_mwhr = sim.energy_mwhr();
    Ok(summary)
}

/// CSV form of [`synthesize_history_with`].
pub fn synthesize_history<W1: Write, W2: Write>(
    cfg: &SimConfig,
    p: &HistoryParams,
    telemetry: W1,
    alarms: W2,
) -> Result<HistorySummary, PlantError> {
    let mut tw = TelemetryWriter::new(telemetry, cfg.n_units)?;
    let mut aw = AlarmLogWriter::new(alarms)?;
    let summary = synthesize_history_with(cfg, p, |r| Ok(tw.write(r)?), |l| Ok(aw.write(l)?))?;
    tw.finish()?;
    aw.finish()?;
    Ok(summary)
}

//! Emulated human operator: equal flow split, manual blade exploration, fixed
//! load steps on stator trouble and drawdown-triggered load ejects.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sim::UnitSimState;
use crate::physics::DEFAULT_K;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorParams {
    /// MW cut on a stator HI alarm.
    pub stator_step_mw: f64,
    /// °F below which the cut is restored.
    pub normalize_temp: f64,
    /// ft of drawdown that prompts a load eject.
    pub eject_drawdown_ft: f64,
    /// Chance per unit-minute of starting a manual blade excursion.
    pub explore_per_min: f64,
    pub explore_hold_min: (u32, u32),
    /// Blade offsets, %, an operator tries.
    pub explore_offsets: Vec<f64>,
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self {
            stator_step_mw: 5.0,
            normalize_temp: 175.0,
            eject_drawdown_ft: 1.0,
            explore_per_min: 0.0,
            explore_hold_min: (30, 90),
            explore_offsets: (-6..=8).filter(|&o| o != 0).map(f64::from).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub offset: f64,
    pub until: u64,
}

/// Per-unit operator memory.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorEmulator {
    pub params: OperatorParams,
    /// Flow withheld for stator trouble, CFS.
    cuts: Vec<f64>,
    excursions: Vec<Option<Excursion>>,
}

/// Equal split of the plant setpoint among units that can take flow, each
/// capped at `cap`.
pub fn equal_allocation(plant_q_sp: f64, available: &[bool], cap: f64) -> Vec<f64> {
    let n = available.iter().filter(|&&a| a).count();
    let share = if n == 0 { 0.0 } else { (plant_q_sp.max(0.0) / n as f64).min(cap) };
    available.iter().map(|&a| if a { share } else { 0.0 }).collect()
}

impl OperatorEmulator {
    pub fn new(params: OperatorParams, n_units: usize) -> Self {
        Self { params, cuts: vec![0.0; n_units], excursions: vec![None; n_units] }
    }

    pub fn cut(&self, unit: usize) -> f64 {
        self.cuts[unit]
    }

    /// Forgets any stator cut or excursion held on `unit`.
    pub fn release(&mut self, unit: usize) {
        self.cuts[unit] = 0.0;
        self.excursions[unit] = None;
    }

    pub fn excursion(&self, unit: usize) -> Option<Excursion> {
        self.excursions[unit]
    }

    /// Applies the fixed-step stator rule and returns the flow withheld.
    pub fn stator_response(&mut self, unit: usize, s: &UnitSimState) -> f64 {
        let cut = &mut self.cuts[unit];
        if s.stator_hi && *cut == 0.0 && s.online {
            let per_cfs = DEFAULT_K * s.eta.max(0.5) * s.h_net.max(1.0);
            *cut = (self.params.stator_step_mw / per_cfs).min(s.q_act.max(0.0));
        } else if *cut > 0.0 && s.stator_temp < self.params.normalize_temp {
            *cut = 0.0;
        }
        *cut
    }

    pub fn wants_eject(&self, s: &UnitSimState) -> bool {
        s.online && !s.ejecting() && s.drawdown > self.params.eject_drawdown_ft
    }

    /// Blade offset from the cam the operator is holding, %. Starts and ends
    /// excursions at random; none while the unit is in trouble.
    pub fn blade_offset<R: Rng>(&mut self, unit: usize, minute: u64, s: &UnitSimState, rng: &mut R) -> f64 {
        let p = &self.params;
        let slot = &mut self.excursions[unit];
        if slot.is_some_and(|e| minute >= e.until) || s.stator_hi || !s.online {
            *slot = None;
        }
        if slot.is_none()
            && p.explore_per_min > 0.0
            && !p.explore_offsets.is_empty()
            && s.online
            && !s.stator_hi
            && rng.gen_bool(p.explore_per_min.min(1.0))
        {
            let offset = p.explore_offsets[rng.gen_range(0..p.explore_offsets.len())];
            let hold = rng.gen_range(p.explore_hold_min.0..=p.explore_hold_min.1.max(p.explore_hold_min.0));
            *slot = Some(Excursion { offset, until: minute + u64::from(hold) });
        }
        slot.map_or(0.0, |e| e.offset)
    }
}

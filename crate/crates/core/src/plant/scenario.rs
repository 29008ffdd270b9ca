use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PlantError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Corps plant flow setpoint, CFS.
    SetPlantFlow,
    /// Dispatch plant generation target, MW.
    SetLoadTarget,
    ClearLoadTarget,
    /// Dispatch request to drop plant generation by `value` MW.
    LoadShed,
    /// Extra stator heating on `unit`, °F/min; 0 ends the disturbance.
    ForceStatorHot,
    /// Forced vibration on `unit` for `value` minutes; 0 ends it.
    ForceVibration,
    /// Switch to season 1 or 2.
    SetRiverSeason,
    EnableAgent,
    DisableAgent,
}

impl EventKind {
    fn needs_unit(self) -> bool {
        matches!(
            self,
            EventKind::ForceStatorHot | EventKind::ForceVibration | EventKind::EnableAgent | EventKind::DisableAgent
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at_minute: u64,
    pub kind: EventKind,
    /// 1-based unit number.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<usize>,
    #[serde(default)]
    pub value: f64,
}

impl ScenarioEvent {
    pub fn new(at_minute: u64, kind: EventKind, unit: Option<usize>, value: f64) -> Self {
        Self { at_minute, kind, unit, value }
    }

    /// Zero-based unit index, when the event names one.
    pub fn unit_index(&self) -> Option<usize> {
        self.unit.map(|u| u - 1)
    }

    pub fn check(&self, n_units: usize) -> Result<(), String> {
        let v = self.value;
        if !v.is_finite() {
            return Err("value must be finite".into());
        }
        match (self.kind.needs_unit(), self.unit) {
            (true, None) => return Err(format!("{:?} needs a unit", self.kind)),
            (true, Some(u)) if u == 0 || u > n_units => {
                return Err(format!("unit {u} outside 1..={n_units}"));
            }
            (false, Some(_)) => return Err(format!("{:?} takes no unit", self.kind)),
            _ => {}
        }
        let ok = match self.kind {
            EventKind::SetPlantFlow | EventKind::SetLoadTarget => v >= 0.0,
            EventKind::LoadShed => v > 0.0,
            EventKind::ForceStatorHot | EventKind::ForceVibration => v >= 0.0,
            EventKind::SetRiverSeason => v == 1.0 || v == 2.0,
            EventKind::ClearLoadTarget | EventKind::EnableAgent | EventKind::DisableAgent => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("value {v} out of range for {:?}", self.kind))
        }
    }
}

/// A scripted run: initial river conditions plus time-ordered events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub duration_minutes: u64,
    pub initial_plant_flow: f64,
    #[serde(default = "default_season")]
    pub initial_season: u8,
    #[serde(default, rename = "event")]
    pub events: Vec<ScenarioEvent>,
}

fn default_season() -> u8 {
    1
}

impl Scenario {
    pub fn new(id: impl Into<String>, duration_minutes: u64, initial_plant_flow: f64) -> Self {
        Self { id: id.into(), duration_minutes, initial_plant_flow, initial_season: 1, events: Vec::new() }
    }

    pub fn with_event(mut self, e: ScenarioEvent) -> Self {
        self.events.push(e);
        self
    }

    pub fn from_toml_str(text: &str, n_units: usize) -> Result<Self, PlantError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| PlantError::Scenario(vec![e.to_string()]))?;
        s.validate(n_units)?;
        s.events.sort_by_key(|e| e.at_minute);
        Ok(s)
    }

    pub fn load(path: &Path, n_units: usize) -> Result<Self, PlantError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, n_units)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self, n_units: usize) -> Result<(), PlantError> {
        let mut diags = Vec::new();
        if self.duration_minutes == 0 {
            diags.push("duration_minutes must be positive".to_string());
        }
        if !(self.initial_plant_flow >= 0.0 && self.initial_plant_flow.is_finite()) {
            diags.push("initial_plant_flow must be a non-negative number".to_string());
        }
        if !(self.initial_season == 1 || self.initial_season == 2) {
            diags.push(format!("initial_season {} is not 1 or 2", self.initial_season));
        }
        for (i, e) in self.events.iter().enumerate() {
            if let Err(m) = e.check(n_units) {
                diags.push(format!("event {} (minute {}): {m}", i + 1, e.at_minute));
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(PlantError::Scenario(diags))
        }
    }

    /// Events due at `minute`, in file order.
    pub fn events_at(&self, minute: u64) -> impl Iterator<Item = &ScenarioEvent> {
        self.events.iter().filter(move |e| e.at_minute == minute)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
id = "demo"
duration_minutes = 90
initial_plant_flow = 24000.0

[[event]]
at_minute = 30
kind = "force_stator_hot"
unit = 1
value = 4.2

[[event]]
at_minute = 10
kind = "set_plant_flow"
value = 25000.0
"#;

    #[test]
    fn parses_and_orders() {
        let s = Scenario::from_toml_str(TEXT, 3).unwrap();
        assert_eq!(s.events[0].kind, EventKind::SetPlantFlow);
        assert_eq!(s.events[1].unit_index(), Some(0));
        assert_eq!(s.initial_season, 1);
        let again = Scenario::from_toml_str(&s.to_toml_string(), 3).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn reports_all_diagnostics() {
        let s = Scenario::new("bad", 0, -1.0)
            .with_event(ScenarioEvent::new(1, EventKind::ForceStatorHot, None, 1.0))
            .with_event(ScenarioEvent::new(2, EventKind::SetRiverSeason, None, 3.0))
            .with_event(ScenarioEvent::new(3, EventKind::DisableAgent, Some(4), 0.0));
        match s.validate(3) {
            Err(PlantError::Scenario(d)) => assert_eq!(d.len(), 5, "{d:?}"),
            other => panic!("{other:?}"),
        }
    }
}

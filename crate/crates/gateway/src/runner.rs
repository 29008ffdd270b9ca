//! Deterministic batch runs of a scenario and their reports.

use std::io::Write;
use std::sync::Arc;

use hydrotwin::agents::{AgentMode, RuleSet};
use hydrotwin::control::BiasCommand;
use hydrotwin::physics::{co2_offset_tons_per_year, coal_offset_tons_per_year, EmissionsParams};
use hydrotwin::plant::telemetry::{log_kind, TelemetryRow, TelemetryWriter};
use hydrotwin::plant::Scenario;
use hydrotwin::statedb::PlantDb;
use hydrotwin::twin::{Directive, Twin, TwinConfig, TwinTick};
use serde::{Deserialize, Serialize};

use crate::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub mode: AgentMode,
    pub bias: BiasCommand,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub row: TelemetryRow,
    /// Agentless plant at the same minute, when co-simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<TelemetryRow>,
    pub corps_q_sp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_target: Option<f64>,
    pub benefit_mw: f64,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub minute: u64,
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub mwhr_agents: f64,
    pub mwhr_baseline: f64,
    pub benefit_mwhr: f64,
}

/// Coal and CO2 that the benefit energy would otherwise have cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offsets {
    pub energy_mwhr: f64,
    pub coal_tons: f64,
    pub co2_tons: f64,
    /// CO2 with the carbon fraction taken as 1.
    pub co2_tons_full_carbon: f64,
}

impl Offsets {
    pub fn for_energy(energy_mwhr: f64, p: &EmissionsParams) -> Self {
        let coal = coal_offset_tons_per_year(energy_mwhr, p);
        let full = EmissionsParams { carbon_fraction: 1.0, ..*p };
        Self {
            energy_mwhr,
            coal_tons: coal,
            co2_tons: co2_offset_tons_per_year(coal, p),
            co2_tons_full_carbon: co2_offset_tons_per_year(coal, &full),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub with_agents: bool,
    pub series: Vec<TickRecord>,
    pub totals: Totals,
    pub events: Vec<EventRecord>,
    pub offsets: Offsets,
}

impl RunReport {
    pub fn telemetry_rows(&self) -> impl Iterator<Item = &TelemetryRow> {
        self.series.iter().map(|t| &t.row)
    }

    /// The with-agents telemetry in the history CSV layout.
    pub fn write_telemetry<W: Write>(&self, w: W) -> Result<W, GatewayError> {
        let n = self.series.first().map_or(0, |t| t.row.units.len());
        let mut tw = TelemetryWriter::new(w, n)?;
        for r in self.telemetry_rows() {
            tw.write(r)?;
        }
        Ok(tw.finish()?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub with_agents: bool,
    pub rules: RuleSet,
    pub db: Option<Arc<PlantDb>>,
    pub emissions: EmissionsParams,
}

impl RunOptions {
    pub fn new(rules: RuleSet) -> Self {
        Self { with_agents: true, rules, db: None, emissions: EmissionsParams::default() }
    }
}

fn describe(d: &Directive) -> String {
    let who = d.origin.map_or_else(|| "scenario".to_string(), |u| u.to_string());
    match d.unit {
        Some(u) => format!("{who}: {:?} unit {u} value {}", d.kind, d.value),
        None => format!("{who}: {:?} value {}", d.kind, d.value),
    }
}

fn record(t: &TwinTick) -> TickRecord {
    TickRecord {
        row: t.row.clone(),
        baseline: t.shadow_row.clone(),
        corps_q_sp: t.corps_q_sp,
        load_target: t.load_target,
        benefit_mw: t.benefit_mw,
        agents: t.statuses.iter().map(|s| AgentRecord { mode: s.mode, bias: s.bias, enabled: s.enabled }).collect(),
    }
}

/// Runs `sc` to completion. Without agents every unit is left to the
/// operator and no shadow is needed; the baseline is the run itself.
pub fn run_scenario(cfg: &TwinConfig, sc: &Scenario, opts: &RunOptions) -> Result<RunReport, GatewayError> {
    let cfg = TwinConfig { agents_enabled: opts.with_agents, shadow: opts.with_agents, ..cfg.clone() };
    let mut twin = Twin::for_scenario(cfg, opts.rules.clone(), opts.db.clone(), sc)?;
    run_twin(&mut twin, sc, opts)
}

/// Runs `sc` on an already configured twin.
pub fn run_twin(twin: &mut Twin, sc: &Scenario, opts: &RunOptions) -> Result<RunReport, GatewayError> {
    let e0 = twin.plant().energy_mwhr();
    let b0 = twin.shadow().map(|s| s.energy_mwhr());
    let mut series = Vec::with_capacity(sc.duration_minutes as usize);
    let mut events = Vec::new();
    let mut seen = twin.bus().last_message_id();
    for m in 0..sc.duration_minutes {
        for e in sc.events_at(m) {
            twin.submit(Directive::scripted(e))?;
        }
        let t = twin.tick()?;
        let minute = t.row.timestamp;
        events.extend(t.applied.iter().map(|d| EventRecord { minute, source: "directive".into(), text: describe(d) }));
        events.extend(t.log.iter().filter(|l| l.kind != log_kind::STATOR_TEMP).map(|l| EventRecord {
            minute: l.timestamp,
            source: format!("unit{}", l.unit),
            text: format!("{} {}", l.kind, l.value),
        }));
        events.extend(twin.bus().poll_messages(seen).iter().map(|m| EventRecord {
            minute,
            source: m.user.to_string(),
            text: m.render(),
        }));
        seen = twin.bus().last_message_id();
        series.push(record(&t));
    }
    let mwhr_agents = twin.plant().energy_mwhr() - e0;
    let mwhr_baseline = match (twin.shadow(), b0) {
        (Some(s), Some(b0)) => s.energy_mwhr() - b0,
        _ => mwhr_agents,
    };
    let benefit_mwhr = mwhr_agents - mwhr_baseline;
    Ok(RunReport {
        scenario: sc.id.clone(),
        with_agents: opts.with_agents,
        series,
        totals: Totals { mwhr_agents, mwhr_baseline, benefit_mwhr },
        events,
        offsets: Offsets::for_energy(benefit_mwhr, &opts.emissions),
    })
}

/// Extra generation from a number of handled events at a fixed saving each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub events: u32,
    pub mwhr_per_event: f64,
    pub total_mwhr: f64,
    pub offsets: Offsets,
}

pub fn campaign(events: u32, mwhr_per_event: f64, p: &EmissionsParams) -> Campaign {
    let total = f64::from(events) * mwhr_per_event;
    Campaign { events, mwhr_per_event, total_mwhr: total, offsets: Offsets::for_energy(total, p) }
}

//! The plant loop: simulator, unit agents, bus and operator emulator stepped
//! together, with an agentless shadow plant for benefit accounting.
//!
//! Each tick: apply queued directives, build the agent snapshot, run agents in
//! unit order, let the operator handle units without an enabled agent, then
//! advance the plant and the shadow.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    handle_generation_directive, AgentContext, AgentError, AgentOutput, AgentParams, AgentSnapshot, AgentStatus,
    Estimator, PeerView, Published, RuleSet, UnitAgent,
};
use crate::bus::{points, Bus, BusError, Command, PermissionTable, PointAddress, StatusItem, User, Value};
use crate::control::BiasCommand;
use crate::plant::operator::{equal_allocation, OperatorEmulator, OperatorParams};
use crate::plant::telemetry::{AlarmLogRow, TelemetryRow};
use crate::plant::{EventKind, PlantError, PlantSim, Scenario, ScenarioEvent, SimConfig, UnitCommand, UnitSimState};
use crate::statedb::PlantDb;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{user} may not issue {kind:?}")]
    Forbidden { user: User, kind: EventKind },
    #[error("bad directive: {0}")]
    BadDirective(String),
    #[error("estimator needs a state database")]
    NoDatabase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// State database when one is loaded, truth surfaces otherwise.
    #[default]
    Auto,
    Truth,
    StateDb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinConfig {
    pub sim: SimConfig,
    pub agents: AgentParams,
    pub operator: OperatorParams,
    /// Whether agents start enabled.
    pub agents_enabled: bool,
    /// Co-simulate the agentless baseline.
    pub shadow: bool,
    pub estimator: EstimatorKind,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            agents: AgentParams::default(),
            operator: OperatorParams::default(),
            agents_enabled: true,
            shadow: true,
            estimator: EstimatorKind::Auto,
        }
    }
}

/// A request to change plant conditions. `origin: None` marks scripted
/// disturbances, which skip the role check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<User>,
    pub kind: EventKind,
    /// 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<usize>,
    #[serde(default)]
    pub value: f64,
}

impl Directive {
    pub fn scripted(e: &ScenarioEvent) -> Self {
        Self { origin: None, kind: e.kind, unit: e.unit, value: e.value }
    }

    pub fn from_user(user: User, kind: EventKind, unit: Option<usize>, value: f64) -> Self {
        Self { origin: Some(user), kind, unit, value }
    }
}

/// Which role may issue which directive.
pub fn permitted(user: &User, kind: EventKind) -> bool {
    match user {
        User::Corps => kind == EventKind::SetPlantFlow,
        User::Dispatch => {
            matches!(kind, EventKind::SetLoadTarget | EventKind::ClearLoadTarget | EventKind::LoadShed)
        }
        User::Operator => matches!(kind, EventKind::EnableAgent | EventKind::DisableAgent),
        User::Unit(_) => false,
    }
}

/// Role a scripted directive is written to the bus as.
fn writer_for(kind: EventKind) -> Option<User> {
    match kind {
        EventKind::SetPlantFlow => Some(User::Corps),
        EventKind::SetLoadTarget | EventKind::ClearLoadTarget | EventKind::LoadShed => Some(User::Dispatch),
        EventKind::EnableAgent | EventKind::DisableAgent => Some(User::Operator),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedDirective {
    pub minute: u64,
    pub directive: Directive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinTick {
    pub row: TelemetryRow,
    pub shadow_row: Option<TelemetryRow>,
    pub log: Vec<AlarmLogRow>,
    pub statuses: Vec<AgentStatus>,
    pub corps_q_sp: f64,
    pub load_target: Option<f64>,
    /// Plant power minus shadow power, MW; 0 without a shadow.
    pub benefit_mw: f64,
    /// Sum over units of the reallocation component, CFS.
    pub realloc_sum: f64,
    /// Sum over units of the redistribution component, CFS.
    pub redist_sum: f64,
    pub unallocated: f64,
    pub applied: Vec<Directive>,
    /// Zero-based units that began a load eject this tick.
    pub ejects: Vec<usize>,
}

/// The operator's hands on one plant: stator steps, ejects, blade
/// excursions and a share of any generation target.
#[derive(Debug, Clone)]
struct Operator {
    emu: OperatorEmulator,
    trims: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Operator {
    fn new(params: OperatorParams, n: usize, seed: u64) -> Self {
        Self { emu: OperatorEmulator::new(params, n), trims: vec![0.0; n], rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn command(
        &mut self,
        u: usize,
        minute: u64,
        s: &UnitSimState,
        share: f64,
        target: Option<f64>,
        agents: &AgentParams,
    ) -> (f64, f64) {
        let cut = self.emu.stator_response(u, s);
        let base = share - cut;
        let eta = if s.eta > 0.0 { s.eta } else { 0.9 };
        self.trims[u] =
            handle_generation_directive(self.trims[u], base, target, eta, s.h_net, &agents.generation).q_bias;
        let offset = self.emu.blade_offset(u, minute, s, &mut self.rng);
        ((base + self.trims[u]).max(0.0), offset)
    }

    fn release(&mut self, u: usize) {
        self.emu.release(u);
        self.trims[u] = 0.0;
    }
}

#[derive(Debug, Clone)]
struct Shadow {
    sim: PlantSim,
    op: Operator,
}

const OPERATOR_SEED: u64 = 0x0b5e_77e2;

pub struct Twin {
    cfg: TwinConfig,
    plant: PlantSim,
    shadow: Option<Shadow>,
    op: Operator,
    agents: Vec<UnitAgent>,
    bus: Bus,
    estimator: Estimator,
    db: Option<Arc<PlantDb>>,
    mailbox: VecDeque<Directive>,
    corps_q_sp: f64,
    q_sp_changed_at: Option<u64>,
    load_target: Option<f64>,
    enabled: Vec<bool>,
    log: Vec<LoggedDirective>,
    statuses: Vec<AgentStatus>,
    initial: (f64, u8, u64),
}

impl Twin {
    pub fn new(
        cfg: TwinConfig,
        rules: RuleSet,
        db: Option<Arc<PlantDb>>,
        initial_plant_flow: f64,
        season: u8,
        start_minute: u64,
    ) -> Result<Self, TwinError> {
        let n = cfg.sim.n_units;
        let flows = equal_allocation(initial_plant_flow, &vec![true; n], cfg.sim.unit_alloc_max);
        let plant = PlantSim::new(cfg.sim.clone(), season, &flows, start_minute)?;
        let estimator = match (cfg.estimator, &db) {
            (EstimatorKind::Truth, _) | (EstimatorKind::Auto, None) => Estimator::Truth(plant.surfaces().to_vec()),
            (_, Some(db)) => Estimator::state_db(db.clone(), plant.cam().clone(), cfg.sim.gate_flow)?,
            (EstimatorKind::StateDb, None) => return Err(TwinError::NoDatabase),
        };
        let shadow = cfg.shadow.then(|| Shadow {
            sim: plant.clone(),
            op: Operator::new(cfg.operator.clone(), n, cfg.sim.rng_seed ^ OPERATOR_SEED),
        });
        let rules = Arc::new(rules);
        let agents = (0..n).map(|u| UnitAgent::new(u, cfg.agents.clone(), rules.clone())).collect();
        let mut bus = Bus::new(PermissionTable::defaults(n));
        bus.set_time(start_minute);
        bus.write_attr(&User::Corps, &PointAddress::new(points::PLANT, "QSP"), Value::Num(initial_plant_flow))?;
        for u in 1..=n {
            let v = if cfg.agents_enabled { 1.0 } else { 0.0 };
            bus.write_attr(
                &User::Operator,
                &PointAddress::new(points::OPERATOR, points::agent_enabled_attr(u)),
                Value::Num(v),
            )?;
        }
        Ok(Self {
            op: Operator::new(cfg.operator.clone(), n, cfg.sim.rng_seed ^ OPERATOR_SEED),
            enabled: vec![cfg.agents_enabled; n],
            cfg,
            plant,
            shadow,
            agents,
            bus,
            estimator,
            db,
            mailbox: VecDeque::new(),
            corps_q_sp: initial_plant_flow,
            q_sp_changed_at: None,
            load_target: None,
            log: Vec::new(),
            statuses: Vec::new(),
            initial: (initial_plant_flow, season, start_minute),
        })
    }

    /// Twin set up for a scenario's initial conditions.
    pub fn for_scenario(
        cfg: TwinConfig,
        rules: RuleSet,
        db: Option<Arc<PlantDb>>,
        sc: &Scenario,
    ) -> Result<Self, TwinError> {
        sc.validate(cfg.sim.n_units)?;
        Self::new(cfg, rules, db, sc.initial_plant_flow, sc.initial_season, 0)
    }

    pub fn config(&self) -> &TwinConfig {
        &self.cfg
    }

    pub fn plant(&self) -> &PlantSim {
        &self.plant
    }

    pub fn shadow(&self) -> Option<&PlantSim> {
        self.shadow.as_ref().map(|s| &s.sim)
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn db(&self) -> Option<&Arc<PlantDb>> {
        self.db.as_ref()
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn minute(&self) -> u64 {
        self.plant.minute()
    }

    pub fn corps_q_sp(&self) -> f64 {
        self.corps_q_sp
    }

    pub fn load_target(&self) -> Option<f64> {
        self.load_target
    }

    pub fn enabled(&self) -> &[bool] {
        &self.enabled
    }

    /// Statuses from the last tick.
    pub fn statuses(&self) -> &[AgentStatus] {
        &self.statuses
    }

    pub fn directive_log(&self) -> &[LoggedDirective] {
        &self.log
    }

    /// The directives applied so far as a scenario that replays them.
    pub fn log_as_scenario(&self, id: &str, duration_minutes: u64) -> Scenario {
        let (flow, season, start) = self.initial;
        let mut sc = Scenario::new(id, duration_minutes, flow);
        sc.initial_season = season;
        sc.events = self
            .log
            .iter()
            .map(|l| ScenarioEvent::new(l.minute - start, l.directive.kind, l.directive.unit, l.directive.value))
            .collect();
        sc
    }

    /// Checks and queues a directive for the start of the next tick.
    pub fn submit(&mut self, d: Directive) -> Result<(), TwinError> {
        if let Some(user) = &d.origin {
            if !permitted(user, d.kind) {
                return Err(TwinError::Forbidden { user: *user, kind: d.kind });
            }
        }
        let e = ScenarioEvent::new(self.minute(), d.kind, d.unit, d.value);
        e.check(self.cfg.sim.n_units).map_err(TwinError::BadDirective)?;
        self.mailbox.push_back(d);
        Ok(())
    }

    fn apply(&mut self, d: Directive) -> Result<(), TwinError> {
        let minute = self.minute();
        let unit = d.unit.map(|u| u - 1);
        if let Some(w) = writer_for(d.kind) {
            let (attr, value, cmd) = match d.kind {
                EventKind::SetPlantFlow => {
                    self.corps_q_sp = d.value;
                    self.q_sp_changed_at = Some(minute);
                    ((points::PLANT, "QSP".to_string()), Value::Num(d.value), Command::NewQsp(d.value))
                }
                EventKind::SetLoadTarget => {
                    self.load_target = Some(d.value);
                    ((points::PLANT, "LoadTarget".to_string()), Value::Num(d.value), Command::LoadTarget(d.value))
                }
                EventKind::ClearLoadTarget => {
                    self.load_target = None;
                    ((points::PLANT, "LoadTarget".to_string()), Value::Text("none".into()), Command::ClearLoadTarget)
                }
                EventKind::LoadShed => {
                    let now: f64 = self.plant.units().iter().map(|u| u.power).sum();
                    self.load_target = Some((now - d.value).max(0.0));
                    ((points::PLANT, "LoadShed".to_string()), Value::Num(d.value), Command::LoadShed(d.value))
                }
                EventKind::EnableAgent | EventKind::DisableAgent => {
                    let u = unit.expect("checked");
                    let on = d.kind == EventKind::EnableAgent;
                    self.enabled[u] = on;
                    if on {
                        self.op.release(u);
                    }
                    let n = (u + 1) as u8;
                    let cmd = if on { Command::EnableAgent(n) } else { Command::DisableAgent(n) };
                    ((points::OPERATOR, points::agent_enabled_attr(u + 1)), Value::Num(if on { 1.0 } else { 0.0 }), cmd)
                }
                _ => unreachable!(),
            };
            self.bus.write_attr(&w, &PointAddress::new(attr.0, attr.1), value)?;
            self.bus.post(w, vec![StatusItem::Command(cmd)])?;
        } else {
            let u = unit.unwrap_or(0);
            let mut both = |f: &mut dyn FnMut(&mut PlantSim) -> Result<(), PlantError>| -> Result<(), PlantError> {
                f(&mut self.plant)?;
                if let Some(s) = &mut self.shadow {
                    f(&mut s.sim)?;
                }
                Ok(())
            };
            match d.kind {
                EventKind::ForceStatorHot => both(&mut |p| p.force_stator_hot(u, d.value))?,
                EventKind::ForceVibration => both(&mut |p| p.force_vibration(u, d.value as u32))?,
                EventKind::SetRiverSeason => both(&mut |p| {
                    p.set_season(d.value as u8);
                    Ok(())
                })?,
                _ => unreachable!(),
            }
        }
        self.log.push(LoggedDirective { minute, directive: d });
        Ok(())
    }

    fn allocation(cfg: &SimConfig, sim: &PlantSim, plant_q: f64) -> Vec<f64> {
        let available: Vec<bool> = sim.units().iter().map(|s| s.online).collect();
        equal_allocation(plant_q, &available, cfg.unit_alloc_max)
    }

    pub fn tick(&mut self) -> Result<TwinTick, TwinError> {
        let minute = self.minute();
        self.bus.set_time(minute);
        let mut applied = Vec::new();
        while let Some(d) = self.mailbox.pop_front() {
            self.apply(d)?;
            applied.push(d);
        }

        let n = self.cfg.sim.n_units;
        let alloc = Self::allocation(&self.cfg.sim, &self.plant, self.corps_q_sp);
        let peers: Vec<PeerView> = (0..n)
            .map(|u| {
                let s = &self.plant.units()[u];
                PeerView {
                    enabled: self.enabled[u],
                    online: s.online,
                    alarm: s.stator_hi || s.vibration_alarm,
                    h_net: s.h_net,
                    alloc: alloc[u],
                    published: Published::read(&self.bus, u),
                }
            })
            .collect();
        let snapshot = AgentSnapshot {
            minute,
            peers,
            plant_q_sp: self.corps_q_sp,
            q_sp_changed_at: self.q_sp_changed_at,
            load_target: self.load_target,
        };

        let cfg = &self.cfg.sim;
        let mut outs: Vec<AgentOutput> = Vec::with_capacity(n);
        for a in &mut self.agents {
            let u = a.unit();
            let ctx = AgentContext {
                snapshot: &snapshot,
                unit: &self.plant.units()[u],
                cam: self.plant.cam(),
                gate_flow: cfg.gate_flow,
                vibration: &cfg.vibration,
                estimator: &self.estimator,
                db: self.db.as_ref().map(|d| &d.units[u]),
                max_flow: cfg.unit_max_flow,
                max_gate: cfg.pid.output_max,
                eject_minutes: cfg.eject_duration_min,
            };
            outs.push(a.cycle(&ctx, &mut self.bus));
        }

        let mut ejects = Vec::new();
        for u in 0..n {
            let s = &self.plant.units()[u];
            let wants = if self.enabled[u] { outs[u].eject } else { self.op.emu.wants_eject(s) };
            let busy = self.plant.units().iter().any(UnitSimState::ejecting) && self.enabled[u];
            if wants && !busy && s.online {
                self.plant.load_eject(u)?;
                ejects.push(u);
            }
        }

        let n_online = self.plant.units().iter().filter(|s| s.online).count().max(1);
        let share_target = self.load_target.map(|t| t / n_online as f64);
        let mut cmds = Vec::with_capacity(n);
        for u in 0..n {
            if self.enabled[u] {
                cmds.push(UnitCommand::biased(alloc[u], outs[u].bias));
            } else {
                let s = &self.plant.units()[u];
                let (q, offset) = self.op.command(u, minute, s, alloc[u], share_target, &self.cfg.agents);
                cmds.push(UnitCommand::biased(q, BiasCommand::new(0.0, offset)));
            }
        }
        let out = self.plant.tick(&cmds)?;

        let shadow_row = match &mut self.shadow {
            Some(sh) => {
                let alloc = Self::allocation(&self.cfg.sim, &sh.sim, self.corps_q_sp);
                for u in 0..n {
                    if sh.op.emu.wants_eject(&sh.sim.units()[u]) {
                        sh.sim.load_eject(u)?;
                    }
                }
                let n_on = sh.sim.units().iter().filter(|s| s.online).count().max(1);
                let target = self.load_target.map(|t| t / n_on as f64);
                let mut cmds = Vec::with_capacity(n);
                for u in 0..n {
                    let s = sh.sim.units()[u].clone();
                    let (q, offset) = sh.op.command(u, minute, &s, alloc[u], target, &self.cfg.agents);
                    cmds.push(if offset == 0.0 {
                        UnitCommand::plain(q)
                    } else {
                        UnitCommand::biased(q, BiasCommand::new(0.0, offset))
                    });
                }
                Some(sh.sim.tick(&cmds)?.row)
            }
            None => None,
        };

        let mut statuses: Vec<AgentStatus> = outs.into_iter().map(|o| o.status).collect();
        if let Some(sr) = &shadow_row {
            for (st, (a, b)) in statuses.iter_mut().zip(out.row.units.iter().zip(&sr.units)) {
                st.benefit_mw = a.p - b.p;
            }
        }
        let benefit_mw = shadow_row.as_ref().map_or(0.0, |sr| out.row.sum_p - sr.sum_p);
        let tick = TwinTick {
            realloc_sum: statuses.iter().map(|s| s.components.realloc_q).sum(),
            redist_sum: statuses.iter().map(|s| s.components.redist_q).sum(),
            unallocated: statuses.iter().map(|s| s.unallocated).fold(0.0, f64::max),
            row: out.row,
            shadow_row,
            log: out.log,
            statuses: statuses.clone(),
            corps_q_sp: self.corps_q_sp,
            load_target: self.load_target,
            benefit_mw,
            applied,
            ejects,
        };
        self.statuses = statuses;
        Ok(tick)
    }

    /// Runs a whole scenario, feeding its events as scripted directives, and
    /// hands every tick to `on_tick`.
    pub fn run_scenario(
        &mut self,
        sc: &Scenario,
        mut on_tick: impl FnMut(&TwinTick) -> Result<(), TwinError>,
    ) -> Result<(), TwinError> {
        let start = self.minute();
        for m in 0..sc.duration_minutes {
            for e in sc.events_at(m) {
                self.submit(Directive::scripted(e))?;
            }
            debug_assert_eq!(self.minute(), start + m);
            let t = self.tick()?;
            on_tick(&t)?;
        }
        Ok(())
    }
}

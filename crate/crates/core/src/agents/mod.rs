//! Unit agents: a rule engine choosing a mode and handlers that compute the
//! flow and blade biases fed into each unit's control loop.
//!
//! Agents run one cycle per tick, in unit order. Each reads a snapshot taken
//! at tick start (its own unit's telemetry plus what every peer published on
//! the bus last tick) and writes only its own process point.

mod ops;
mod redistribution;
pub mod rules;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{
    handle_generation_directive, handle_stator_hot, handle_vibration, load_eject_decision, steady_state_optimize,
    BladeDecision, GenerationResponse, GenerationStep, StatorView, VibrationResponse, VibrationState,
};
pub use redistribution::{
    exhaustive_redistribution, marginal_pair, reallocate_trouble_flow, redistribute_flow, redistribution_path,
    FlowEfficiency, FlowPlan, FlowSlot, PathPoint, Reallocation, Receiver, Shed, Transfer,
};
pub use rules::{Facts, RuleError, RuleSet, RuleSpec, DEFAULT_RULES};

use crate::bus::{points, AlarmCode, Bus, Command, PointAddress, StatusItem, User, Value};
use crate::control::{BiasCommand, BiasLimits, CamGrid};
use crate::physics::DEFAULT_K;
use crate::plant::{GateFlow, TruthSurface, UnitSimState, VibrationParams};
use crate::statedb::{PlantDb, StateDb};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("state database for unit {0} is empty")]
    EmptyDb(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MajorState {
    #[default]
    SteadyStateOptimization,
    HandlePlantFlowDirective,
    HandleGenerationDirective,
    HandleTemperatureTrouble,
    HandleVibrationTrouble,
}

impl MajorState {
    pub const ALL: [MajorState; 5] = [
        MajorState::SteadyStateOptimization,
        MajorState::HandlePlantFlowDirective,
        MajorState::HandleGenerationDirective,
        MajorState::HandleTemperatureTrouble,
        MajorState::HandleVibrationTrouble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MajorState::SteadyStateOptimization => "SteadyStateOptimization",
            MajorState::HandlePlantFlowDirective => "HandlePlantFlowDirective",
            MajorState::HandleGenerationDirective => "HandleGenerationDirective",
            MajorState::HandleTemperatureTrouble => "HandleTemperatureTrouble",
            MajorState::HandleVibrationTrouble => "HandleVibrationTrouble",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|m| *m == self).unwrap()
    }

    pub fn is_trouble(self) -> bool {
        matches!(self, MajorState::HandleTemperatureTrouble | MajorState::HandleVibrationTrouble)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MinorState {
    ModifyFlowSetpoint,
    ModifyBladePosition,
}

/// Major state plus the minor state entered from it this cycle, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentMode {
    pub major: MajorState,
    pub minor: Option<MinorState>,
}

impl std::fmt::Display for AgentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.major.name())?;
        match self.minor {
            Some(MinorState::ModifyFlowSetpoint) => f.write_str("/ModifyFlowSetpoint"),
            Some(MinorState::ModifyBladePosition) => f.write_str("/ModifyBladePosition"),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    HandleStatorHot,
    HandleVibration,
    TrackGeneration,
    SettlePlantFlow,
    RevertGuard,
    OptimizeBlade,
    ReallocateTroubleFlow,
    RedistributeFlow,
    LoadEject,
}

/// Names a rule condition may read.
pub const FACT_NAMES: &[&str] = &[
    "mode",
    "online",
    "stator_hi",
    "stator_temp",
    "stator_cut",
    "vibration",
    "vib_active",
    "drawdown",
    "power",
    "q_act",
    "h_net",
    "holdoff",
    "guard_failed",
    "flow_directive_age",
    "settle_ticks",
    "load_target_active",
    "directive_bias",
    "shed_total",
    "eligible_units",
    "units_ejecting",
    "eject_worth",
];

pub fn default_rules() -> RuleSet {
    RuleSet::from_toml_str(DEFAULT_RULES, FACT_NAMES).expect("shipped rules parse")
}

pub fn load_rules(text: &str) -> Result<RuleSet, RuleError> {
    RuleSet::from_toml_str(text, FACT_NAMES)
}

/// Default rules limited to stator handling: no blade search, flow plans,
/// directives or ejects.
pub fn temperature_only_rules() -> RuleSet {
    default_rules().filtered(|id| matches!(id, "temperature_trouble" | "steady_state" | "handle_stator_hot"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Cycles to wait after a bias change before the next blade search.
    pub holdoff_ticks: u32,
    /// Cycles a new plant flow setpoint keeps the agent in its directive state.
    pub flow_settle_ticks: u32,
    /// Flow withheld per cycle while the stator alarm holds, CFS.
    pub stator_step: f64,
    /// °F under which a cut stator is considered back to normal.
    pub stator_normal_temp: f64,
    pub vibration: VibrationResponse,
    pub generation: GenerationResponse,
    /// Power drop after a blade change that triggers a revert, MW.
    pub revert_tolerance_mw: f64,
    /// Cycles a reverted blade bias stays off limits.
    pub blacklist_ticks: u64,
    /// Smallest blade bias change worth making, %.
    pub min_bp_change: f64,
    /// Lattice step for flow plans and reallocation chunks, CFS.
    pub flow_step: f64,
    pub max_redistribution_moves: usize,
    /// Lowest flow a plan may leave on a unit, CFS.
    pub min_unit_flow: f64,
    pub eject_lookahead_h: f64,
    pub limits: BiasLimits,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            holdoff_ticks: 5,
            flow_settle_ticks: 10,
            stator_step: 500.0,
            stator_normal_temp: 175.0,
            vibration: VibrationResponse::default(),
            generation: GenerationResponse::default(),
            revert_tolerance_mw: 0.05,
            blacklist_ticks: 60,
            min_bp_change: 0.25,
            flow_step: 250.0,
            max_redistribution_moves: 200,
            min_unit_flow: 5000.0,
            eject_lookahead_h: 24.0,
            limits: BiasLimits::default(),
        }
    }
}

/// How agents score flow plans.
#[derive(Debug, Clone)]
pub enum Estimator {
    /// The simulator's own efficiency surfaces.
    Truth(Vec<TruthSurface>),
    /// Interpolated cluster efficiencies at the cam blade plus the unit's
    /// current blade bias.
    StateDb { db: Arc<PlantDb>, cam: CamGrid, gate_flow: GateFlow },
}

impl Estimator {
    pub fn state_db(db: Arc<PlantDb>, cam: CamGrid, gate_flow: GateFlow) -> Result<Self, AgentError> {
        if let Some(u) = db.units.iter().position(StateDb::is_empty) {
            return Err(AgentError::EmptyDb(u + 1));
        }
        Ok(Estimator::StateDb { db, cam, gate_flow })
    }

    pub fn eta(&self, unit: usize, h_net: f64, q: f64, bp_bias: f64) -> f64 {
        match self {
            Estimator::Truth(s) => {
                let s = &s[unit.min(s.len() - 1)];
                s.efficiency(h_net, q, s.cam_blade(h_net, q) + bp_bias)
            }
            Estimator::StateDb { db, cam, gate_flow } => {
                let bp = cam.lookup(gate_flow.gate_for_flow(q, h_net), h_net) + bp_bias;
                db.units[unit].estimate_efficiency(h_net, q, bp).unwrap_or(0.0)
            }
        }
    }

    /// Fixes each unit's blade bias and returns a flow-only view.
    pub fn with_biases<'a>(&'a self, bp_bias: &'a [f64]) -> impl Fn(usize, f64, f64) -> f64 + 'a {
        move |u, h, q| self.eta(u, h, q, bp_bias[u])
    }
}

/// Named point attributes an agent publishes.
pub mod attrs {
    pub const MODE: &str = "Mode";
    pub const Q_BIAS: &str = "Qbias";
    pub const BP_BIAS: &str = "BPbias";
    /// Flow bias excluding the redistribution share, CFS.
    pub const Q_BASE_BIAS: &str = "QbiasBase";
    pub const SHED: &str = "Shed";
    pub const UNALLOCATED: &str = "Unallocated";
}

/// What a peer published last tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Published {
    pub q_bias: f64,
    pub bp_bias: f64,
    pub q_base_bias: f64,
    pub shed: f64,
}

impl Published {
    pub fn read(bus: &Bus, unit: usize) -> Self {
        let point = points::unit_agent(unit + 1);
        let get = |a: &str| bus.read_f64(&PointAddress::new(point.clone(), a)).unwrap_or(0.0);
        Self {
            q_bias: get(attrs::Q_BIAS),
            bp_bias: get(attrs::BP_BIAS),
            q_base_bias: get(attrs::Q_BASE_BIAS),
            shed: get(attrs::SHED),
        }
    }
}

/// One unit as every agent sees it this tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeerView {
    pub enabled: bool,
    pub online: bool,
    /// Stator or vibration alarm active at tick start.
    pub alarm: bool,
    pub h_net: f64,
    /// Flow the plant allocation gives this unit before biases, CFS.
    pub alloc: f64,
    pub published: Published,
}

impl PeerView {
    fn healthy(&self) -> bool {
        self.enabled && self.online && !self.alarm && self.published.shed == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub minute: u64,
    pub peers: Vec<PeerView>,
    pub plant_q_sp: f64,
    /// Minute the plant flow setpoint last changed.
    pub q_sp_changed_at: Option<u64>,
    /// Plant generation target, MW.
    pub load_target: Option<f64>,
}

/// Per-tick inputs of one agent.
pub struct AgentContext<'a> {
    pub snapshot: &'a AgentSnapshot,
    pub unit: &'a UnitSimState,
    pub cam: &'a CamGrid,
    pub gate_flow: GateFlow,
    pub vibration: &'a VibrationParams,
    pub estimator: &'a Estimator,
    pub db: Option<&'a StateDb>,
    pub max_flow: f64,
    /// Gate opening at the PID's upper output limit, %.
    pub max_gate: f64,
    pub eject_minutes: u32,
}

impl AgentContext<'_> {
    /// Most flow a unit can be asked for at `h_net`: the unit limit or what
    /// the fully open gate passes, whichever is lower, on the `step` lattice.
    fn flow_cap(&self, h_net: f64, step: f64) -> f64 {
        let gate = self.gate_flow.demand(self.max_gate, h_net);
        self.max_flow.min((gate / step).floor() * step)
    }
}

/// Bias split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasComponents {
    /// Trouble flow cut not handed to peers, CFS.
    pub trouble_q: f64,
    /// Reallocated trouble flow, CFS; sums to zero across units.
    pub realloc_q: f64,
    /// Redistribution share, CFS; sums to zero across units.
    pub redist_q: f64,
    pub directive_q: f64,
    pub optimize_bp: f64,
    pub trouble_bp: f64,
}

impl BiasComponents {
    pub fn command(&self, limits: &BiasLimits) -> BiasCommand {
        BiasCommand::new(
            self.trouble_q + self.realloc_q + self.redist_q + self.directive_q,
            self.optimize_bp + self.trouble_bp,
        )
        .clamped(limits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Guard {
    due: u64,
    p_ref: f64,
    qh_ref: f64,
    previous: f64,
    candidate: f64,
}

type PlanKey = Vec<(usize, u64, u64, u64, u64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStatus {
    /// 1-based.
    pub unit: usize,
    pub mode: AgentMode,
    pub bias: BiasCommand,
    pub components: BiasComponents,
    pub enabled: bool,
    pub alarms: Vec<String>,
    /// Realized minus shadow-baseline power, MW; filled in by the plant loop.
    pub benefit_mw: f64,
    /// Shed flow no peer had room for, CFS.
    pub unallocated: f64,
    /// Generation target below what the unit can hold.
    pub target_clamped: bool,
    pub fired: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub bias: BiasCommand,
    pub eject: bool,
    pub status: AgentStatus,
}

#[derive(Debug, Clone)]
pub struct UnitAgent {
    unit: usize,
    params: AgentParams,
    rules: Arc<RuleSet>,
    mode: AgentMode,
    comp: BiasComponents,
    stator_cut: f64,
    last_temp: Option<f64>,
    vib: VibrationState,
    holdoff: u32,
    guard: Option<Guard>,
    blacklist: Vec<(f64, u64)>,
    plan_cache: Option<(PlanKey, FlowPlan)>,
    given: f64,
    unallocated: f64,
    target_clamped: bool,
    eject: bool,
    last_bias: BiasCommand,
    last_alarms: (bool, bool),
    was_enabled: bool,
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

impl UnitAgent {
    /// `unit` is the zero-based unit index.
    pub fn new(unit: usize, params: AgentParams, rules: Arc<RuleSet>) -> Self {
        Self {
            unit,
            params,
            rules,
            mode: AgentMode::default(),
            comp: BiasComponents::default(),
            stator_cut: 0.0,
            last_temp: None,
            vib: VibrationState::default(),
            holdoff: 0,
            guard: None,
            blacklist: Vec::new(),
            plan_cache: None,
            given: 0.0,
            unallocated: 0.0,
            target_clamped: false,
            eject: false,
            last_bias: BiasCommand::ZERO,
            last_alarms: (false, false),
            was_enabled: true,
        }
    }

    pub fn unit(&self) -> usize {
        self.unit
    }

    pub fn mode(&self) -> AgentMode {
        self.mode
    }

    pub fn components(&self) -> BiasComponents {
        self.comp
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    fn reset(&mut self) {
        let (unit, params, rules) = (self.unit, self.params.clone(), self.rules.clone());
        let (last_bias, last_alarms, was_enabled) = (self.last_bias, self.last_alarms, self.was_enabled);
        *self = Self::new(unit, params, rules);
        self.last_bias = last_bias;
        self.last_alarms = last_alarms;
        self.was_enabled = was_enabled;
    }

    fn facts(&self, ctx: &AgentContext) -> Facts {
        let s = ctx.unit;
        let snap = ctx.snapshot;
        let mut f = Facts::default();
        f.set("mode", self.mode.major.index() as f64);
        f.flag("online", s.online);
        f.flag("stator_hi", s.stator_hi);
        f.set("stator_temp", s.stator_temp);
        f.set("stator_cut", self.stator_cut);
        f.flag("vibration", s.vibration_alarm);
        f.flag("vib_active", self.vib.active());
        f.set("drawdown", s.drawdown);
        f.set("power", s.power);
        f.set("q_act", s.q_act);
        f.set("h_net", s.h_net);
        f.set("holdoff", f64::from(self.holdoff));
        let failed = self.guard.is_some_and(|g| {
            snap.minute >= g.due && {
                let qh = s.q_act * s.h_net;
                let p_norm = if qh > 0.0 { s.power * g.qh_ref / qh } else { 0.0 };
                p_norm < g.p_ref - self.params.revert_tolerance_mw
            }
        });
        f.flag("guard_failed", failed);
        f.set(
            "flow_directive_age",
            snap.q_sp_changed_at.map_or(f64::INFINITY, |t| snap.minute.saturating_sub(t) as f64),
        );
        f.set("settle_ticks", f64::from(self.params.flow_settle_ticks));
        f.flag("load_target_active", snap.load_target.is_some());
        f.set("directive_bias", self.comp.directive_q);
        let sheds: f64 = snap.peers.iter().filter(|p| p.enabled && p.online).map(|p| p.published.shed).sum();
        f.set("shed_total", sheds);
        f.set("eligible_units", snap.peers.iter().filter(|p| p.healthy()).count() as f64);
        f.set("units_ejecting", snap.peers.iter().filter(|p| !p.online).count() as f64);
        let p_loss = DEFAULT_K * s.eta * s.q_act * s.drawdown;
        let eject_h = f64::from(ctx.eject_minutes) / 60.0;
        f.flag(
            "eject_worth",
            s.online
                && s.drawdown > 0.0
                && load_eject_decision(p_loss, s.power, self.params.eject_lookahead_h, eject_h),
        );
        f
    }

    fn act(&mut self, action: Action, ctx: &AgentContext) {
        let s = ctx.unit;
        let snap = ctx.snapshot;
        let me = &snap.peers[self.unit];
        match action {
            Action::HandleStatorHot => {
                let max_cut = (me.alloc + self.comp.directive_q - self.vib.flow_cut).max(0.0);
                let view = StatorView {
                    hi: s.stator_hi,
                    cooling: self.last_temp.is_some_and(|t| s.stator_temp < t),
                    normalized: s.stator_temp < self.params.stator_normal_temp,
                };
                self.stator_cut = handle_stator_hot(self.stator_cut, view, self.params.stator_step, max_cut);
            }
            Action::HandleVibration => {
                let bp = s.blade_position;
                let exit = ctx.vibration.zone_at(s.gate_position, bp).map(|z| z.blade_exit(bp));
                let back = bp - self.vib.bp_bias.signum() * self.params.vibration.blade_step;
                let back_is_rough = ctx.vibration.zone_at(s.gate_position, back).is_some();
                self.vib = handle_vibration(self.vib, s.vibration_alarm, exit, back_is_rough, &self.params.vibration);
            }
            Action::TrackGeneration => {
                let n_online = snap.peers.iter().filter(|p| p.online).count().max(1);
                let target = snap.load_target.map(|t| t / n_online as f64);
                let base = me.alloc - self.stator_cut - self.vib.flow_cut;
                let eta = if s.eta > 0.0 { s.eta } else { 0.9 };
                let step = handle_generation_directive(
                    self.comp.directive_q,
                    base,
                    target,
                    eta,
                    s.h_net,
                    &self.params.generation,
                );
                self.comp.directive_q = step.q_bias;
                self.target_clamped = step.clamped;
            }
            Action::SettlePlantFlow => {
                self.holdoff = self.holdoff.max(self.params.holdoff_ticks);
                self.guard = None;
            }
            Action::RevertGuard => {
                if let Some(g) = self.guard.take() {
                    self.comp.optimize_bp = g.previous;
                    self.blacklist.push((g.candidate, snap.minute + self.params.blacklist_ticks));
                    self.holdoff = self.params.holdoff_ticks;
                }
            }
            Action::OptimizeBlade => self.optimize(ctx),
            Action::ReallocateTroubleFlow => {
                let sheds: Vec<Shed> = snap
                    .peers
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.enabled && p.online && p.published.shed > 0.0)
                    .map(|(u, p)| Shed { unit: u, amount: p.published.shed })
                    .collect();
                let receivers: Vec<Receiver> = snap
                    .peers
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.healthy())
                    .map(|(u, p)| Receiver {
                        unit: u,
                        h_net: p.h_net,
                        q: p.alloc + p.published.q_bias,
                        max_q: ctx.flow_cap(p.h_net, self.params.flow_step),
                    })
                    .collect();
                let biases: Vec<f64> = snap.peers.iter().map(|p| p.published.bp_bias).collect();
                let est = ctx.estimator.with_biases(&biases);
                let plan = reallocate_trouble_flow(&sheds, &receivers, &est, self.params.flow_step);
                self.comp.realloc_q = plan.delta(self.unit);
                self.given = plan.given(self.unit);
                self.unallocated = plan.unallocated;
            }
            Action::RedistributeFlow => {
                if me.healthy() {
                    self.comp.redist_q = self.redistribution_share(ctx);
                }
            }
            Action::LoadEject => self.eject = true,
        }
    }

    fn optimize(&mut self, ctx: &AgentContext) {
        let Some(db) = ctx.db else { return };
        let s = ctx.unit;
        let minute = ctx.snapshot.minute;
        self.blacklist.retain(|&(_, until)| until > minute);
        let Some(d) = steady_state_optimize(db, ctx.cam, s.h_net, s.q_sp, s.power) else { return };
        let bias = d.bp_bias.clamp(-self.params.limits.bp_abs_max, self.params.limits.bp_abs_max);
        if (bias - self.comp.optimize_bp).abs() < self.params.min_bp_change
            || self.blacklist.iter().any(|&(b, _)| (b - bias).abs() < self.params.min_bp_change)
        {
            return;
        }
        self.guard = Some(Guard {
            due: minute + u64::from(self.params.holdoff_ticks),
            p_ref: s.power,
            qh_ref: s.q_act * s.h_net,
            previous: self.comp.optimize_bp,
            candidate: bias,
        });
        self.comp.optimize_bp = bias;
        self.holdoff = self.params.holdoff_ticks;
    }

    /// This unit's share of the plant redistribution plan. The plan depends
    /// only on snapshot data, rounded so that a cached plan and a fresh one
    /// agree.
    fn redistribution_share(&mut self, ctx: &AgentContext) -> f64 {
        let snap = ctx.snapshot;
        let slots: Vec<FlowSlot> = snap
            .peers
            .iter()
            .enumerate()
            .filter(|(_, p)| p.healthy())
            .map(|(u, p)| FlowSlot {
                unit: u,
                h_net: round_to(p.h_net, 0.25),
                base_q: p.alloc + p.published.q_base_bias,
                min_q: self.params.min_unit_flow,
                max_q: ctx.flow_cap(p.h_net, self.params.flow_step),
            })
            .collect();
        let biases: Vec<f64> = snap.peers.iter().map(|p| round_to(p.published.bp_bias, 0.5)).collect();
        let key: PlanKey = slots
            .iter()
            .map(|s| (s.unit, s.h_net.to_bits(), s.base_q.to_bits(), s.max_q.to_bits(), biases[s.unit].to_bits()))
            .collect();
        let stale = self.plan_cache.as_ref().is_none_or(|(k, _)| *k != key);
        if stale {
            let est = ctx.estimator.with_biases(&biases);
            let plan = redistribute_flow(&slots, &est, self.params.flow_step, self.params.max_redistribution_moves);
            self.plan_cache = Some((key, plan));
        }
        let (_, plan) = self.plan_cache.as_ref().unwrap();
        slots.iter().position(|s| s.unit == self.unit).map_or(0.0, |i| plan.deltas[i])
    }

    /// One agent cycle. Writes this unit's point and posts status messages.
    pub fn cycle(&mut self, ctx: &AgentContext, bus: &mut Bus) -> AgentOutput {
        let me = ctx.snapshot.peers[self.unit];
        let s = ctx.unit;
        let user = User::Unit((self.unit + 1) as u8);
        let mut fired = Vec::new();
        self.eject = false;
        self.target_clamped = false;

        if !me.enabled || !s.online {
            self.reset();
        } else {
            self.holdoff = self.holdoff.saturating_sub(1);
            self.comp.realloc_q = 0.0;
            self.comp.redist_q = 0.0;
            self.given = 0.0;
            self.unallocated = 0.0;
            let rules = self.rules.clone();
            let mut facts = self.facts(ctx);
            fired = rules.run(&mut facts, |spec, facts| {
                if let Some(m) = spec.then.mode {
                    self.mode.major = m;
                    facts.set("mode", m.index() as f64);
                }
                if let Some(a) = spec.then.action {
                    self.act(a, ctx);
                }
            });
            if self.guard.is_some_and(|g| ctx.snapshot.minute >= g.due) {
                self.guard = None;
            }
            self.comp.trouble_q = -(self.stator_cut + self.vib.flow_cut) + self.given;
            self.last_temp = Some(s.stator_temp);
            self.comp.trouble_bp = self.vib.bp_bias;
        }

        let bias = if me.enabled { self.comp.command(&self.params.limits) } else { BiasCommand::ZERO };
        let previous_mode = self.mode;
        self.mode.minor = if bias.q_bias != self.last_bias.q_bias {
            Some(MinorState::ModifyFlowSetpoint)
        } else if bias.bp_bias != self.last_bias.bp_bias {
            Some(MinorState::ModifyBladePosition)
        } else {
            None
        };
        if bias != self.last_bias && me.enabled {
            self.holdoff = self.holdoff.max(self.params.holdoff_ticks);
        }
        self.publish(bus, &user, bias, previous_mode, s, me.enabled);
        self.last_bias = bias;

        let mut alarms = Vec::new();
        if s.stator_hi {
            alarms.push(AlarmCode::StatorOverTemp.text().to_string());
        }
        if s.vibration_alarm {
            alarms.push(AlarmCode::Vibration.text().to_string());
        }
        AgentOutput {
            bias,
            eject: self.eject && me.enabled,
            status: AgentStatus {
                unit: self.unit + 1,
                mode: self.mode,
                bias,
                components: if me.enabled { self.comp } else { BiasComponents::default() },
                enabled: me.enabled,
                alarms,
                benefit_mw: 0.0,
                unallocated: self.unallocated,
                target_clamped: self.target_clamped,
                fired,
            },
        }
    }

    fn publish(
        &mut self,
        bus: &mut Bus,
        user: &User,
        bias: BiasCommand,
        prev: AgentMode,
        s: &UnitSimState,
        enabled: bool,
    ) {
        let point = points::unit_agent(self.unit + 1);
        let base = self.comp.trouble_q + self.comp.realloc_q + self.comp.directive_q;
        let shed = self.stator_cut + self.vib.flow_cut;
        let nums = [
            (attrs::Q_BIAS, bias.q_bias),
            (attrs::BP_BIAS, bias.bp_bias),
            (attrs::Q_BASE_BIAS, if enabled { base } else { 0.0 }),
            (attrs::SHED, if enabled { shed } else { 0.0 }),
            (attrs::UNALLOCATED, self.unallocated),
        ];
        let mode_text = self.mode.to_string();
        for (attr, v) in nums {
            let addr = PointAddress::new(point.clone(), attr);
            if bus.read_f64(&addr) != Some(v) {
                bus.write_attr(user, &addr, Value::Num(v)).expect("agent owns its point");
            }
        }
        let addr = PointAddress::new(point, attrs::MODE);
        if bus.read_attr(&addr).map_or(true, |a| a.value != Value::Text(mode_text.clone())) {
            bus.write_attr(user, &addr, Value::Text(mode_text.clone())).expect("agent owns its point");
        }

        let mut items = Vec::new();
        let alarms = (s.stator_hi, s.vibration_alarm);
        if alarms.0 != self.last_alarms.0 {
            items.push(StatusItem::Alarm(if alarms.0 { AlarmCode::StatorOverTemp } else { AlarmCode::StatorNormal }));
        }
        if alarms.1 != self.last_alarms.1 {
            items.push(StatusItem::Alarm(if alarms.1 { AlarmCode::Vibration } else { AlarmCode::VibrationCleared }));
        }
        self.last_alarms = alarms;
        if self.mode.major != prev.major || bias != self.last_bias || enabled != self.was_enabled {
            items.push(StatusItem::Mode(mode_text));
            items.push(StatusItem::QBias(bias.q_bias));
            items.push(StatusItem::BpBias(bias.bp_bias));
        }
        if self.eject && enabled {
            items.push(StatusItem::Command(Command::LoadEject));
        }
        self.was_enabled = enabled;
        if !items.is_empty() {
            bus.post(*user, items).expect("agent status items are well formed");
        }
    }
}

#[cfg(test)]
mod tests;

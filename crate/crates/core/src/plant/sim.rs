use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::models::{evaluate_alarms, update_stator_thermal, update_trash, Alarm, AlarmInputs, AlarmKind};
use super::telemetry::{log_kind, AlarmLogRow, TelemetryRow, UnitTelemetry};
use super::truth::TruthSurface;
use super::PlantError;
use crate::control::{blade_command, pid_step, pid_step_unbiased, rate_limit, BiasCommand, CamGrid, PidState};
use crate::physics::{available_power, PhysicsConstants};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSimState {
    /// %.
    pub gate_position: f64,
    /// %.
    pub blade_position: f64,
    pub q_act: f64,
    pub q_sp: f64,
    /// MW.
    pub power: f64,
    /// °F.
    pub stator_temp: f64,
    /// mils.
    pub vibration: f64,
    /// Trash-rack head loss, ft.
    pub drawdown: f64,
    pub online: bool,
    /// Minutes of load eject remaining, 0 when not ejecting.
    pub eject_timer: u32,
    /// Effective net head after drawdown, ft.
    pub h_net: f64,
    pub eta: f64,
    pub minutes_over: u32,
    pub stator_hi: bool,
    pub vibration_alarm: bool,
    /// Scenario-forced extra stator heating, °F/min.
    pub forced_heat: f64,
    /// Minutes of forced vibration remaining.
    pub forced_vibration_min: u32,
    pub pid: PidState,
}

impl UnitSimState {
    pub fn ejecting(&self) -> bool {
        self.eject_timer > 0
    }

    pub fn telemetry(&self) -> UnitTelemetry {
        UnitTelemetry {
            gp: self.gate_position,
            bp: self.blade_position,
            h_net: self.h_net,
            q_act: self.q_act,
            q_sp: self.q_sp,
            p: self.power,
            stator_temp: self.stator_temp,
            vibration: self.vibration,
        }
    }
}

/// One unit's inputs for a tick. `bias: None` runs the plain PID + cam scheme
/// with no bias terms; `Some` routes through the bias injection points.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnitCommand {
    pub q_sp: f64,
    pub bias: Option<BiasCommand>,
}

impl UnitCommand {
    pub fn plain(q_sp: f64) -> Self {
        Self { q_sp, bias: None }
    }

    pub fn biased(q_sp: f64, bias: BiasCommand) -> Self {
        Self { q_sp, bias: Some(bias) }
    }
}

/// Pool level set point, river flow and the random pool wander around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadState {
    pub h_up_set: f64,
    pub river_flow: f64,
    pub wander: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub row: TelemetryRow,
    pub alarms: Vec<Alarm>,
    pub log: Vec<AlarmLogRow>,
    /// MWhr generated this tick.
    pub energy_mwhr: f64,
}

const WANDER_PERSISTENCE: f64 = 0.98;

#[derive(Debug, Clone)]
pub struct PlantSim {
    cfg: SimConfig,
    k: PhysicsConstants,
    cam: CamGrid,
    surfaces: Vec<TruthSurface>,
    units: Vec<UnitSimState>,
    head: HeadState,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    minute: u64,
    energy_mwhr: f64,
    unit_energy_mwhr: Vec<f64>,
    pending_log: Vec<AlarmLogRow>,
}

impl PlantSim {
    /// Plant settled on its cam at `initial_flows`, season 1 or 2, clock at
    /// `start_minute`.
    pub fn new(cfg: SimConfig, season: u8, initial_flows: &[f64], start_minute: u64) -> Result<Self, PlantError> {
        cfg.validate()?;
        if initial_flows.len() != cfg.n_units {
            return Err(PlantError::CommandCount { expected: cfg.n_units, got: initial_flows.len() });
        }
        let cam = cfg.cam()?;
        let surfaces =
            (0..cfg.n_units).map(|i| TruthSurface::new(cfg.unit(i).truth, cfg.gate_flow, cam.clone())).collect();
        let profile = cfg.seasons[usize::from(season.clamp(1, 2)) - 1];
        let noise = Normal::new(0.0, cfg.head_noise_ft.max(0.0)).map_err(|e| PlantError::Config(e.to_string()))?;
        let mut sim = Self {
            k: PhysicsConstants::default(),
            cam,
            surfaces,
            units: Vec::new(),
            head: HeadState { h_up_set: profile.h_up, river_flow: profile.river_flow, wander: 0.0 },
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            noise,
            minute: start_minute,
            energy_mwhr: 0.0,
            unit_energy_mwhr: vec![0.0; cfg.n_units],
            pending_log: Vec::new(),
            cfg,
        };
        let h = sim.gross_head();
        sim.units = initial_flows.iter().enumerate().map(|(i, &q)| sim.settled_unit(i, q, h)).collect();
        Ok(sim)
    }

    fn settled_unit(&self, i: usize, q: f64, h: f64) -> UnitSimState {
        let gate = self.cfg.gate_flow.gate_for_flow(q, h).clamp(self.cfg.pid.output_min, self.cfg.pid.output_max);
        let q_act = self.cfg.gate_flow.demand(gate, h);
        let blade = self.cam.lookup(gate, h).clamp(0.0, 100.0);
        let eta = self.surfaces[i].efficiency(h, q_act, blade);
        let power = self.power(eta, q_act, h);
        let thermal = self.cfg.unit(i).thermal;
        UnitSimState {
            gate_position: gate,
            blade_position: blade,
            q_act,
            q_sp: q,
            power,
            stator_temp: thermal.steady_state(power, self.cfg.rated_power),
            vibration: self.cfg.vibration.baseline,
            drawdown: 0.0,
            online: true,
            eject_timer: 0,
            h_net: h,
            eta,
            minutes_over: 0,
            stator_hi: false,
            vibration_alarm: false,
            forced_heat: 0.0,
            forced_vibration_min: 0,
            pid: PidState::settled_at(&self.cfg.pid, gate),
        }
    }

    fn power(&self, eta: f64, q: f64, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        available_power(self.k, eta, q, h).unwrap_or(0.0)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn cam(&self) -> &CamGrid {
        &self.cam
    }

    pub fn surfaces(&self) -> &[TruthSurface] {
        &self.surfaces
    }

    pub fn units(&self) -> &[UnitSimState] {
        &self.units
    }

    pub fn unit(&self, i: usize) -> Result<&UnitSimState, PlantError> {
        self.units.get(i).ok_or(PlantError::NoSuchUnit(i + 1))
    }

    fn unit_mut(&mut self, i: usize) -> Result<&mut UnitSimState, PlantError> {
        self.units.get_mut(i).ok_or(PlantError::NoSuchUnit(i + 1))
    }

    pub fn minute(&self) -> u64 {
        self.minute
    }

    pub fn head_state(&self) -> HeadState {
        self.head
    }

    /// Gross net head across the plant before any trash-rack loss.
    pub fn gross_head(&self) -> f64 {
        self.head.h_up_set + self.head.wander - self.cfg.tailwater.h_down(self.head.river_flow)
    }

    pub fn energy_mwhr(&self) -> f64 {
        self.energy_mwhr
    }

    pub fn unit_energy_mwhr(&self) -> &[f64] {
        &self.unit_energy_mwhr
    }

    pub fn set_season(&mut self, season: u8) {
        let p = self.cfg.seasons[usize::from(season.clamp(1, 2)) - 1];
        self.head.h_up_set = p.h_up;
        self.head.river_flow = p.river_flow;
    }

    pub fn set_river(&mut self, h_up_set: f64, river_flow: f64) {
        self.head.h_up_set = h_up_set;
        self.head.river_flow = river_flow;
    }

    pub fn force_stator_hot(&mut self, unit: usize, extra_f_per_min: f64) -> Result<(), PlantError> {
        self.unit_mut(unit)?.forced_heat = extra_f_per_min.max(0.0);
        Ok(())
    }

    pub fn force_vibration(&mut self, unit: usize, minutes: u32) -> Result<(), PlantError> {
        self.unit_mut(unit)?.forced_vibration_min = minutes;
        Ok(())
    }

    /// Trips the unit for the configured eject duration; returns the
    /// generation given up at the current output, MWhr.
    pub fn load_eject(&mut self, unit: usize) -> Result<f64, PlantError> {
        let duration = self.cfg.eject_duration_min;
        let minute = self.minute;
        let u = self.unit_mut(unit)?;
        if u.ejecting() {
            return Err(PlantError::AlreadyEjecting(unit + 1));
        }
        if !u.online {
            return Err(PlantError::NotOnline(unit + 1));
        }
        let cost = u.power * f64::from(duration) / 60.0;
        u.eject_timer = duration;
        u.online = false;
        self.pending_log.push(AlarmLogRow {
            timestamp: minute,
            unit: unit + 1,
            kind: log_kind::LOAD_EJECT.to_string(),
            value: cost,
        });
        Ok(cost)
    }

    /// Advances one tick of `cfg.dt` minutes.
    pub fn tick(&mut self, commands: &[UnitCommand]) -> Result<TickOutput, PlantError> {
        if commands.len() != self.units.len() {
            return Err(PlantError::CommandCount { expected: self.units.len(), got: commands.len() });
        }
        let dt = self.cfg.dt;
        self.head.wander = WANDER_PERSISTENCE * self.head.wander + self.noise.sample(&mut self.rng);
        let gross = self.gross_head();
        let mut alarms = Vec::new();
        let mut log = std::mem::take(&mut self.pending_log);
        let mut energy = 0.0;
        for i in 0..self.units.len() {
            let mut u = self.units[i].clone();
            if u.ejecting() {
                self.step_ejecting(&mut u, gross);
            } else {
                self.step_online(i, &mut u, commands[i], gross)?;
            }
            self.step_condition(i, &mut u);
            let inputs = AlarmInputs {
                unit: i,
                stator_temp: u.stator_temp,
                minutes_over: u.minutes_over,
                in_rough_zone: u.online && self.cfg.vibration.zone_at(u.gate_position, u.blade_position).is_some(),
                vibration_forced: u.forced_vibration_min > 0,
                vibration: u.vibration,
            };
            let unit_alarms = evaluate_alarms(&inputs, &self.cfg.alarms);
            u.stator_hi = unit_alarms.iter().any(|a| a.kind == AlarmKind::StatorHi);
            u.vibration_alarm = unit_alarms.iter().any(|a| a.kind == AlarmKind::Vibration);
            if u.forced_vibration_min > 0 {
                u.forced_vibration_min -= 1;
            }
            if u.stator_temp > self.cfg.alarms.stator_hi_temp {
                log.push(self.log_row(i, log_kind::STATOR_TEMP, u.stator_temp));
            }
            if u.vibration_alarm {
                log.push(self.log_row(i, log_kind::VIBRATION, u.vibration));
            }
            alarms.extend(unit_alarms);
            let e = u.power * dt / 60.0;
            self.unit_energy_mwhr[i] += e;
            energy += e;
            self.units[i] = u;
        }
        self.energy_mwhr += energy;
        let row = self.row(gross);
        self.minute += 1;
        Ok(TickOutput { row, alarms, log, energy_mwhr: energy })
    }

    fn log_row(&self, unit: usize, kind: &str, value: f64) -> AlarmLogRow {
        AlarmLogRow { timestamp: self.minute, unit: unit + 1, kind: kind.to_string(), value }
    }

    fn step_ejecting(&self, u: &mut UnitSimState, gross: f64) {
        u.eject_timer -= 1;
        u.gate_position = 0.0;
        u.q_act = 0.0;
        u.q_sp = 0.0;
        u.power = 0.0;
        u.eta = 0.0;
        u.h_net = gross - u.drawdown;
        if u.eject_timer == 0 {
            // back-flushed rack; the unit restarts from a closed gate with
            // the blade where the trip left it
            u.drawdown = 0.0;
            u.online = true;
            u.pid = PidState::default();
            u.h_net = gross;
        }
    }

    fn step_online(&self, i: usize, u: &mut UnitSimState, cmd: UnitCommand, gross: f64) -> Result<(), PlantError> {
        let cfg = &self.cfg;
        let h = gross - u.drawdown;
        let sub_dt = cfg.control_substep_s;
        let decay = (-(sub_dt / 60.0) / cfg.flow_tau_min).exp();
        let blade_step = cfg.blade_rate_pct_per_min * sub_dt / 60.0;
        let mut pid = u.pid;
        let mut gp = u.gate_position;
        for _ in 0..cfg.substeps() {
            let bp_target = match cmd.bias {
                None => {
                    let (g, next) = pid_step_unbiased(&cfg.pid, &pid, cmd.q_sp, u.q_act, sub_dt)?;
                    gp = g;
                    pid = next;
                    self.cam.lookup(gp, h).clamp(0.0, 100.0)
                }
                Some(b) => {
                    let (g, next) = pid_step(&cfg.pid, &pid, cmd.q_sp, u.q_act, b.q_bias, sub_dt)?;
                    gp = g;
                    pid = next;
                    blade_command(self.cam.lookup(gp, h), b.bp_bias)
                }
            };
            u.blade_position = rate_limit(bp_target, u.blade_position, blade_step);
            let demand = cfg.gate_flow.demand(gp, h);
            u.q_act = demand + (u.q_act - demand) * decay;
        }
        u.pid = pid;
        u.gate_position = gp;
        u.q_sp = cmd.q_sp + cmd.bias.map_or(0.0, |b| b.q_bias);
        u.h_net = h;
        u.eta = self.surfaces[i].efficiency(h, u.q_act, u.blade_position);
        u.power = self.power(u.eta, u.q_act, h);
        u.drawdown = update_trash(u.drawdown, u.q_act, cfg.dt, cfg.trash_rate);
        Ok(())
    }

    fn step_condition(&self, i: usize, u: &mut UnitSimState) {
        let cfg = &self.cfg;
        let thermal = cfg.unit(i).thermal;
        let t = update_stator_thermal(&thermal, u.stator_temp, u.power, cfg.rated_power, cfg.dt);
        u.stator_temp = t + cfg.dt * u.forced_heat;
        u.minutes_over = if u.stator_temp > cfg.alarms.stator_hi_temp { u.minutes_over + 1 } else { 0 };
        let rough = u.online && cfg.vibration.zone_at(u.gate_position, u.blade_position).is_some();
        let shaking = rough || u.forced_vibration_min > 0;
        u.vibration = cfg.vibration.baseline + if shaking { cfg.vibration.rough_amplitude } else { 0.0 };
    }

    fn row(&self, gross: f64) -> TelemetryRow {
        let units: Vec<UnitTelemetry> = self.units.iter().map(UnitSimState::telemetry).collect();
        TelemetryRow {
            timestamp: self.minute,
            plant_h_net: gross,
            sum_q_act: units.iter().map(|u| u.q_act).sum(),
            sum_q_sp: units.iter().map(|u| u.q_sp).sum(),
            sum_p: units.iter().map(|u| u.p).sum(),
            units,
        }
    }

    /// Telemetry for the current state without advancing.
    pub fn snapshot_row(&self) -> TelemetryRow {
        self.row(self.gross_head())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(flows: &[f64]) -> PlantSim {
        PlantSim::new(SimConfig::default(), 1, flows, 0).unwrap()
    }

    #[test]
    fn settled_start_holds() {
        let mut s = sim(&[8000.0; 3]);
        let q0: Vec<f64> = s.units().iter().map(|u| u.q_act).collect();
        for _ in 0..30 {
            s.tick(&[UnitCommand::plain(8000.0); 3]).unwrap();
        }
        for (u, q) in s.units().iter().zip(q0) {
            assert!((u.q_act - q).abs() < 20.0, "{} vs {q}", u.q_act);
        }
    }

    #[test]
    fn closed_gate_decays_flow() {
        let mut s = sim(&[8000.0; 3]);
        for _ in 0..30 {
            s.tick(&[UnitCommand::plain(0.0); 3]).unwrap();
        }
        for u in s.units() {
            assert!(u.gate_position < 1e-3);
            assert!(u.q_act < 0.01 * 8000.0, "{}", u.q_act);
        }
    }

    #[test]
    fn eject_cost_and_reset() {
        let mut s = sim(&[8000.0; 3]);
        for _ in 0..120 {
            s.tick(&[UnitCommand::plain(8000.0); 3]).unwrap();
        }
        let p = s.units()[0].power;
        assert!(s.units()[0].drawdown > 0.0);
        let cost = s.load_eject(0).unwrap();
        assert!((cost - p * 0.25).abs() < 1e-12);
        assert!(matches!(s.load_eject(0), Err(PlantError::AlreadyEjecting(1))));
        for _ in 0..15 {
            let out = s.tick(&[UnitCommand::plain(8000.0); 3]).unwrap();
            assert_eq!(out.row.units[0].p, 0.0);
            assert_eq!(out.row.units[0].q_act, 0.0);
        }
        assert!(s.units()[0].online);
        assert_eq!(s.units()[0].drawdown, 0.0);
    }

    #[test]
    fn energy_is_sum_of_ticks() {
        let mut s = sim(&[7000.0, 8000.0, 9000.0]);
        let mut total = 0.0;
        for _ in 0..200 {
            let out = s.tick(&[UnitCommand::plain(8000.0); 3]).unwrap();
            assert!((out.energy_mwhr - out.row.sum_p / 60.0).abs() < 1e-12);
            total += out.energy_mwhr;
        }
        assert!((s.energy_mwhr() - total).abs() <= 1e-9 * total);
    }

    #[test]
    fn zero_bias_matches_plain_path() {
        let mut a = sim(&[8000.0; 3]);
        let mut b = sim(&[8000.0; 3]);
        for t in 0..300 {
            let q = if t < 100 { 8000.0 } else { 9000.0 };
            let ra = a.tick(&[UnitCommand::plain(q); 3]).unwrap();
            let rb = b.tick(&[UnitCommand::biased(q, BiasCommand::ZERO); 3]).unwrap();
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn drawdown_loss_matches_eq15() {
        // same unit with and without accumulated trash, identical commands
        let mut clean = sim(&[8000.0; 3]);
        let mut dirty = sim(&[8000.0; 3]);
        dirty.units[0].drawdown = 0.8;
        let mut c = None;
        let mut d = None;
        for _ in 0..60 {
            c = Some(clean.tick(&[UnitCommand::plain(8000.0); 3]).unwrap());
            d = Some(dirty.tick(&[UnitCommand::plain(8000.0); 3]).unwrap());
        }
        let (c, d) = (c.unwrap().row.units[0], d.unwrap().row.units[0]);
        let eta = clean.units()[0].eta;
        let eq15 =
            crate::physics::drawdown_power_loss(PhysicsConstants::default(), eta, c.q_act, c.h_net, d.q_act, d.h_net);
        let measured = c.p - d.p;
        assert!((measured - eq15).abs() <= 0.01 * eq15.abs().max(0.05), "{measured} vs {eq15}");
    }

    #[test]
    fn forced_heat_raises_alarm() {
        let mut s = sim(&[8000.0; 3]);
        s.force_stator_hot(0, 6.0).unwrap();
        let mut saw = false;
        for _ in 0..60 {
            let out = s.tick(&[UnitCommand::plain(8000.0); 3]).unwrap();
            saw |= out.alarms.iter().any(|a| a.unit == 0 && a.kind == AlarmKind::StatorHi);
        }
        assert!(saw);
    }
}

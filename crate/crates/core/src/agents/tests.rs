use super::*;
use crate::bus::PermissionTable;
use crate::plant::{PlantSim, SimConfig, UnitCommand};

struct Rig {
    sim: PlantSim,
    bus: Bus,
    est: Estimator,
    agents: Vec<UnitAgent>,
}

impl Rig {
    fn new(rules: RuleSet) -> Self {
        let sim = PlantSim::new(SimConfig::default(), 1, &[8000.0; 3], 0).unwrap();
        let est = Estimator::Truth(sim.surfaces().to_vec());
        let rules = Arc::new(rules);
        let agents = (0..3).map(|u| UnitAgent::new(u, AgentParams::default(), rules.clone())).collect();
        Self { sim, bus: Bus::new(PermissionTable::defaults(3)), est, agents }
    }

    fn snapshot(&self, enabled: [bool; 3], load_target: Option<f64>) -> AgentSnapshot {
        let peers = (0..3)
            .map(|u| {
                let s = &self.sim.units()[u];
                PeerView {
                    enabled: enabled[u],
                    online: s.online,
                    alarm: s.stator_hi || s.vibration_alarm,
                    h_net: s.h_net,
                    alloc: 8000.0,
                    published: Published::read(&self.bus, u),
                }
            })
            .collect();
        AgentSnapshot { minute: self.sim.minute(), peers, plant_q_sp: 24000.0, q_sp_changed_at: None, load_target }
    }

    fn step(&mut self, enabled: [bool; 3], load_target: Option<f64>) -> Vec<AgentOutput> {
        let snap = self.snapshot(enabled, load_target);
        let cfg = self.sim.config().clone();
        let mut outs = Vec::new();
        for a in &mut self.agents {
            let ctx = AgentContext {
                snapshot: &snap,
                unit: &self.sim.units()[a.unit()],
                cam: self.sim.cam(),
                gate_flow: cfg.gate_flow,
                vibration: &cfg.vibration,
                estimator: &self.est,
                db: None,
                max_flow: cfg.unit_max_flow,
                max_gate: cfg.pid.output_max,
                eject_minutes: cfg.eject_duration_min,
            };
            outs.push(a.cycle(&ctx, &mut self.bus));
        }
        let cmds: Vec<_> = outs.iter().map(|o| UnitCommand::biased(8000.0, o.bias)).collect();
        self.sim.tick(&cmds).unwrap();
        outs
    }
}

#[test]
fn default_rules_load_and_cover_every_action() {
    let rs = default_rules();
    let actions: std::collections::HashSet<Action> = rs.specs().filter_map(|s| s.then.action).collect();
    assert_eq!(actions.len(), 9);
    let back = load_rules(&rs.to_toml_string()).unwrap();
    assert_eq!(back, rs);
}

#[test]
fn quiet_plant_stays_in_steady_state() {
    let mut rig = Rig::new(temperature_only_rules());
    for _ in 0..5 {
        for o in rig.step([true; 3], None) {
            assert_eq!(o.status.mode.major, MajorState::SteadyStateOptimization);
            assert_eq!(o.bias, BiasCommand::ZERO);
        }
    }
}

#[test]
fn stator_alarm_cuts_in_steps_then_restores() {
    let mut rig = Rig::new(temperature_only_rules());
    rig.sim.force_stator_hot(0, 8.0).unwrap();
    let mut cut_seen = Vec::new();
    for _ in 0..120 {
        let hot = rig.sim.units()[0].stator_hi;
        let o = rig.step([true, false, false], None).remove(0);
        if hot {
            assert_eq!(o.status.mode.major, MajorState::HandleTemperatureTrouble);
        }
        cut_seen.push(o.bias.q_bias);
        if o.bias.q_bias <= -2000.0 {
            rig.sim.force_stator_hot(0, 0.0).unwrap();
        }
    }
    let first = cut_seen.iter().position(|&q| q < 0.0).unwrap();
    assert_eq!(&cut_seen[first..first + 4], &[-500.0, -1000.0, -1500.0, -2000.0]);
    for w in cut_seen.windows(2) {
        assert!((w[1] - w[0]).abs() <= 500.0);
    }
    assert_eq!(*cut_seen.last().unwrap(), 0.0);
}

#[test]
fn disabled_agent_emits_zero() {
    let mut rig = Rig::new(default_rules());
    rig.sim.force_stator_hot(1, 8.0).unwrap();
    for _ in 0..40 {
        let outs = rig.step([true, false, true], None);
        assert_eq!(outs[1].bias, BiasCommand::ZERO);
        assert!(!outs[1].status.enabled);
    }
}

#[test]
fn trouble_outranks_generation_directive() {
    let mut rig = Rig::new(default_rules());
    let p0: f64 = rig.sim.units().iter().map(|u| u.power).sum();
    for _ in 0..3 {
        let outs = rig.step([true; 3], Some(p0 - 3.0));
        assert_eq!(outs[0].status.mode.major, MajorState::HandleGenerationDirective);
    }
    rig.sim.force_stator_hot(0, 8.0).unwrap();
    let mut saw_trouble = false;
    for _ in 0..40 {
        let hot = rig.sim.units()[0].stator_hi;
        let outs = rig.step([true; 3], Some(p0 - 3.0));
        if hot {
            assert_eq!(outs[0].status.mode.major, MajorState::HandleTemperatureTrouble);
            saw_trouble = true;
        }
    }
    assert!(saw_trouble);
}

#[test]
fn flow_plans_conserve_flow() {
    let mut rig = Rig::new(default_rules());
    rig.sim.force_stator_hot(2, 8.0).unwrap();
    let mut moved = false;
    for t in 0..90 {
        if t == 40 {
            rig.sim.force_stator_hot(2, 0.0).unwrap();
        }
        let outs = rig.step([true; 3], None);
        let realloc: f64 = outs.iter().map(|o| o.status.components.realloc_q).sum();
        let redist: f64 = outs.iter().map(|o| o.status.components.redist_q).sum();
        assert!(realloc.abs() < 1e-9 && redist.abs() < 1e-9, "t={t} {realloc} {redist}");
        moved |= outs.iter().any(|o| o.status.components.redist_q != 0.0);
        moved |= outs.iter().any(|o| o.status.components.realloc_q != 0.0);
    }
    assert!(moved);
}

#[test]
fn status_messages_round_trip() {
    let mut rig = Rig::new(default_rules());
    rig.sim.force_stator_hot(0, 8.0).unwrap();
    for _ in 0..30 {
        rig.step([true; 3], None);
    }
    assert!(!rig.bus.messages().is_empty());
    for m in rig.bus.messages() {
        assert_eq!(&crate::bus::Message::parse(&m.render()).unwrap(), m);
    }
}

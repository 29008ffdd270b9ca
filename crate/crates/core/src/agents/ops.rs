//! Per-unit agent operations as pure functions of their inputs.

use serde::{Deserialize, Serialize};

use crate::control::CamGrid;
use crate::physics::DEFAULT_K;
use crate::statedb::StateDb;

/// Outcome of one steady-state query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BladeDecision {
    /// Blade bias relative to the cam, %.
    pub bp_bias: f64,
    /// Blade position the cluster ran at, %.
    pub bp_control: f64,
    /// Cam blade at the cluster's own gate and head, %.
    pub bp_cam: f64,
    /// Projected power at the query point, MW.
    pub p_opt: f64,
}

/// Best stored blade setting for the current head and flow, expressed as a
/// bias off the cam. The cluster's offset from its own cam value is carried
/// to the current point, so the gate loop keeps the flow and only the blade
/// relation changes. `None` when nothing beats the present power.
pub fn steady_state_optimize(db: &StateDb, cam: &CamGrid, h_net: f64, q_sp: f64, p_act: f64) -> Option<BladeDecision> {
    let best = db.query_best_bp(h_net, q_sp, p_act)?;
    let bp_cam = cam.lookup(best.cluster.gp, best.cluster.h_net);
    Some(BladeDecision { bp_bias: best.bp - bp_cam, bp_control: best.bp, bp_cam, p_opt: best.p_opt })
}

/// What the stator handler looks at each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatorView {
    pub hi: bool,
    /// Temperature fell since the previous cycle.
    pub cooling: bool,
    /// Back under the normal-operation temperature.
    pub normalized: bool,
}

/// Flow withheld for a hot stator after one cycle. While the alarm holds, one
/// more step is cut unless the last cut already has the stator cooling; once
/// the alarm has cleared and the temperature is normal again the cut is
/// handed back one step per cycle.
pub fn handle_stator_hot(cut: f64, v: StatorView, step: f64, max_cut: f64) -> f64 {
    if v.hi {
        if v.cooling {
            cut
        } else {
            (cut + step).min(max_cut.max(0.0))
        }
    } else if v.normalized {
        (cut - step).max(0.0)
    } else {
        cut
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VibrationResponse {
    /// Blade move per cycle, %.
    pub blade_step: f64,
    pub max_blade_steps: u32,
    /// Flow shed per cycle once blade moves are exhausted, CFS.
    pub flow_step: f64,
}

impl Default for VibrationResponse {
    fn default() -> Self {
        Self { blade_step: 0.5, max_blade_steps: 10, flow_step: 250.0 }
    }
}

/// Progress of one vibration episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VibrationState {
    pub blade_steps: u32,
    /// +1 or -1 once the first move picks a side.
    pub direction: f64,
    pub bp_bias: f64,
    pub flow_cut: f64,
}

impl VibrationState {
    pub fn active(&self) -> bool {
        self.blade_steps > 0 || self.flow_cut > 0.0 || self.bp_bias != 0.0
    }
}

/// One cycle of the vibration response. `zone_exit` is the signed blade move
/// to the nearer edge of the rough zone the unit sits in, if any;
/// `back_is_rough` says whether undoing one blade step would re-enter a zone.
pub fn handle_vibration(
    st: VibrationState,
    alarm: bool,
    zone_exit: Option<f64>,
    back_is_rough: bool,
    p: &VibrationResponse,
) -> VibrationState {
    let mut s = st;
    if alarm {
        if s.blade_steps < p.max_blade_steps {
            if s.direction == 0.0 {
                s.direction = zone_exit.map_or(1.0, |d| if d < 0.0 { -1.0 } else { 1.0 });
            }
            s.bp_bias += s.direction * p.blade_step;
            s.blade_steps += 1;
        } else {
            s.flow_cut += p.flow_step;
        }
        return s;
    }
    if s.flow_cut > 0.0 {
        s.flow_cut = (s.flow_cut - p.flow_step).max(0.0);
    } else if s.bp_bias != 0.0 && !back_is_rough {
        let back = s.bp_bias.abs().min(p.blade_step);
        s.bp_bias -= s.bp_bias.signum() * back;
    }
    if s.flow_cut == 0.0 && s.bp_bias == 0.0 {
        s = VibrationState::default();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationResponse {
    /// CFS per cycle.
    pub ramp: f64,
    /// MW dead band around the target.
    pub tolerance: f64,
    /// Lowest commanded flow the unit is held to, CFS.
    pub min_flow: f64,
}

impl Default for GenerationResponse {
    fn default() -> Self {
        Self { ramp: 500.0, tolerance: 0.2, min_flow: 5000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStep {
    pub q_bias: f64,
    /// The target asked for less flow than the minimum allows.
    pub clamped: bool,
}

/// Moves the directive flow bias one ramp step toward the flow whose
/// predicted power meets `target_mw`. Flow is never raised above the
/// allocation. With no target the bias ramps back to zero.
pub fn handle_generation_directive(
    q_bias: f64,
    base_q: f64,
    target_mw: Option<f64>,
    eta: f64,
    h_net: f64,
    p: &GenerationResponse,
) -> GenerationStep {
    let step = |to: f64| q_bias + (to - q_bias).clamp(-p.ramp, p.ramp);
    let Some(target) = target_mw else {
        return GenerationStep { q_bias: step(0.0), clamped: false };
    };
    let per_cfs = DEFAULT_K * eta * h_net;
    if !(per_cfs > 0.0) {
        return GenerationStep { q_bias, clamped: false };
    }
    let predicted = per_cfs * (base_q + q_bias);
    if (target - predicted).abs() <= p.tolerance {
        return GenerationStep { q_bias, clamped: false };
    }
    let wanted = target / per_cfs - base_q;
    let floor = (p.min_flow - base_q).min(0.0);
    let clamped = wanted < floor;
    GenerationStep { q_bias: step(wanted.clamp(floor, 0.0)), clamped }
}

/// Load eject pays when the power the trash rack is costing, carried over the
/// lookahead, exceeds the generation lost while ejecting.
pub fn load_eject_decision(p_loss_mw: f64, p_mw: f64, lookahead_h: f64, eject_h: f64) -> bool {
    p_loss_mw > 0.0 && p_loss_mw * lookahead_h > p_mw * eject_h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stator_steps_and_restore() {
        let hot = StatorView { hi: true, cooling: false, normalized: false };
        let mut cut = 0.0;
        let mut seq = Vec::new();
        for _ in 0..4 {
            cut = handle_stator_hot(cut, hot, 500.0, 8000.0);
            seq.push(-cut);
        }
        assert_eq!(seq, vec![-500.0, -1000.0, -1500.0, -2000.0]);
        let easing = StatorView { cooling: true, ..hot };
        assert_eq!(handle_stator_hot(cut, easing, 500.0, 8000.0), cut);
        let warm = StatorView { hi: false, cooling: true, normalized: false };
        assert_eq!(handle_stator_hot(cut, warm, 500.0, 8000.0), cut);
        let normal = StatorView { hi: false, cooling: true, normalized: true };
        for _ in 0..4 {
            cut = handle_stator_hot(cut, normal, 500.0, 8000.0);
        }
        assert_eq!(cut, 0.0);
        assert_eq!(handle_stator_hot(1800.0, hot, 500.0, 2000.0), 2000.0);
    }

    #[test]
    fn generation_inverts_power() {
        let k = DEFAULT_K;
        let (eta, h, base) = (0.9, 33.5, 8000.0);
        let p_now = k * eta * h * base;
        let g = GenerationResponse::default();
        assert_eq!(handle_generation_directive(0.0, base, Some(p_now), eta, h, &g).q_bias, 0.0);
        let mut bias = 0.0;
        for _ in 0..10 {
            let s = handle_generation_directive(bias, base, Some(p_now - 2.5), eta, h, &g);
            assert!((s.q_bias - bias).abs() <= 500.0);
            bias = s.q_bias;
        }
        assert!((bias + 980.0).abs() < 1.0, "{bias}");
        for _ in 0..3 {
            bias = handle_generation_directive(bias, base, None, eta, h, &g).q_bias;
        }
        assert_eq!(bias, 0.0);
        let s = handle_generation_directive(0.0, base, Some(1.0), eta, h, &g);
        assert!(s.clamped);
        let mut b = 0.0;
        for _ in 0..20 {
            b = handle_generation_directive(b, base, Some(1.0), eta, h, &g).q_bias;
        }
        assert_eq!(b, g.min_flow - base);
    }

    #[test]
    fn eject_economics() {
        assert!(!load_eject_decision(0.0, 20.0, 24.0, 0.25));
        assert!(load_eject_decision(0.8, 20.0, 24.0, 0.25));
        assert!(!load_eject_decision(0.01, 20.0, 24.0, 0.25));
    }

    #[test]
    fn vibration_escalates_after_blade_steps() {
        let p = VibrationResponse::default();
        let mut s = VibrationState::default();
        for _ in 0..p.max_blade_steps {
            s = handle_vibration(s, true, Some(-2.0), false, &p);
            assert_eq!(s.flow_cut, 0.0);
        }
        assert_eq!(s.bp_bias, -5.0);
        s = handle_vibration(s, true, Some(-2.0), false, &p);
        assert_eq!(s.flow_cut, 250.0);
        s = handle_vibration(s, false, None, true, &p);
        assert_eq!((s.flow_cut, s.bp_bias), (0.0, -5.0));
        s = handle_vibration(s, false, None, true, &p);
        assert_eq!(s.bp_bias, -5.0);
        for _ in 0..10 {
            s = handle_vibration(s, false, None, false, &p);
        }
        assert_eq!(s, VibrationState::default());
    }
}

//! Stator thermal, trash-rack and vibration sub-models plus alarm evaluation.

use serde::{Deserialize, Serialize};

/// First-order stator heating above a load threshold, cooling toward ambient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermalParams {
    /// °F per (MW · min) of load above the threshold.
    pub heating: f64,
    /// 1/min.
    pub cooling: f64,
    /// Heating threshold as a fraction of rated power.
    pub load_fraction: f64,
    /// °F.
    pub ambient: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self { heating: 1.2, cooling: 0.05, load_fraction: 0.8, ambient: 90.0 }
    }
}

impl ThermalParams {
    /// Temperature the recurrence settles to at constant power.
    pub fn steady_state(&self, power: f64, rated: f64) -> f64 {
        self.ambient + self.heating * (power - self.load_fraction * rated).max(0.0) / self.cooling
    }
}

pub fn update_stator_thermal(p: &ThermalParams, temp: f64, power: f64, rated: f64, dt: f64) -> f64 {
    let heat = p.heating * (power - p.load_fraction * rated).max(0.0);
    let next = temp + dt * (heat - p.cooling * (temp - p.ambient));
    next.max(p.ambient)
}

/// Trash-rack drawdown grows with the water passed, `rate` ft per CFS·min.
pub fn update_trash(drawdown: f64, q_act: f64, dt: f64, rate: f64) -> f64 {
    drawdown + rate * q_act.max(0.0) * dt
}

pub const DEFAULT_TRASH_RATE: f64 = 1e-7;

/// Rectangle in (gate %, blade %) where the runner vibrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughZone {
    pub gp_min: f64,
    pub gp_max: f64,
    pub bp_min: f64,
    pub bp_max: f64,
}

impl RoughZone {
    pub fn contains(&self, gp: f64, bp: f64) -> bool {
        (self.gp_min..=self.gp_max).contains(&gp) && (self.bp_min..=self.bp_max).contains(&bp)
    }

    /// Signed blade move that reaches the nearer blade edge of the zone.
    pub fn blade_exit(&self, bp: f64) -> f64 {
        let down = self.bp_min - bp;
        let up = self.bp_max - bp;
        if up.abs() <= down.abs() {
            up
        } else {
            down
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VibrationParams {
    /// mils in smooth operation.
    pub baseline: f64,
    /// mils added inside a rough zone or while forced.
    pub rough_amplitude: f64,
    pub zones: Vec<RoughZone>,
}

impl Default for VibrationParams {
    fn default() -> Self {
        Self {
            baseline: 2.0,
            rough_amplitude: 6.0,
            zones: vec![RoughZone { gp_min: 10.0, gp_max: 30.0, bp_min: 15.0, bp_max: 32.0 }],
        }
    }
}

impl VibrationParams {
    pub fn zone_at(&self, gp: f64, bp: f64) -> Option<&RoughZone> {
        self.zones.iter().find(|z| z.contains(gp, bp))
    }
}

/// Thresholds for the stator HI alarm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlarmLimits {
    /// °F, strict.
    pub stator_hi_temp: f64,
    /// Minutes over the limit before the alarm raises, strict.
    pub stator_hi_minutes: u32,
}

impl Default for AlarmLimits {
    fn default() -> Self {
        Self { stator_hi_temp: 180.0, stator_hi_minutes: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmKind {
    StatorHi,
    Vibration,
}

impl AlarmKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlarmKind::StatorHi => "stator_hi",
            AlarmKind::Vibration => "vibration",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub unit: usize,
    pub kind: AlarmKind,
    pub value: f64,
}

/// Inputs the alarm logic needs from one unit's state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmInputs {
    pub unit: usize,
    pub stator_temp: f64,
    /// Consecutive minutes with the stator above the limit, including now.
    pub minutes_over: u32,
    pub in_rough_zone: bool,
    pub vibration_forced: bool,
    pub vibration: f64,
}

pub fn evaluate_alarms(s: &AlarmInputs, limits: &AlarmLimits) -> Vec<Alarm> {
    let mut out = Vec::new();
    if s.stator_temp > limits.stator_hi_temp && s.minutes_over > limits.stator_hi_minutes {
        out.push(Alarm { unit: s.unit, kind: AlarmKind::StatorHi, value: s.stator_temp });
    }
    if s.in_rough_zone || s.vibration_forced {
        out.push(Alarm { unit: s.unit, kind: AlarmKind::Vibration, value: s.vibration });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thermal_equilibrium_at_ambient() {
        let p = ThermalParams::default();
        assert_eq!(update_stator_thermal(&p, 90.0, 0.0, 25.0, 1.0), 90.0);
    }

    /// Iterates the recurrence to its fixed point and compares with the
    /// closed-form steady state.
    #[test]
    fn overload_fixed_point() {
        let p = ThermalParams::default();
        let mut t = p.ambient;
        for _ in 0..2000 {
            t = update_stator_thermal(&p, t, 25.0, 25.0, 1.0);
        }
        assert!((t - 210.0).abs() < 1e-6, "{t}");
        assert_eq!(p.steady_state(25.0, 25.0), 210.0);
        assert!(t > 180.0);
    }

    #[test]
    fn reduced_load_settles_below_threshold() {
        let p = ThermalParams::default();
        // heating * (P - 20) = cooling * (180 - 90)  =>  P = 23.75
        let p_edge = 20.0 + p.cooling * 90.0 / p.heating;
        let mut t = 200.0;
        for _ in 0..2000 {
            t = update_stator_thermal(&p, t, p_edge - 0.5, 25.0, 1.0);
        }
        assert!(t < 180.0, "{t}");
        let mut t = 200.0;
        for _ in 0..2000 {
            t = update_stator_thermal(&p, t, p_edge, 25.0, 1.0);
        }
        assert!((t - 180.0).abs() < 1e-6);
    }

    #[test]
    fn thermal_monotone_in_power() {
        let p = ThermalParams::default();
        let mut last = f64::MIN;
        for i in 0..60 {
            let t = update_stator_thermal(&p, 150.0, i as f64 * 0.5, 25.0, 1.0);
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn trash_accumulation() {
        assert_eq!(update_trash(0.3, 0.0, 10.0, DEFAULT_TRASH_RATE), 0.3);
        let mut d = 0.0;
        for _ in 0..1000 {
            d = update_trash(d, 8000.0, 1.0, DEFAULT_TRASH_RATE);
        }
        assert!((d - 0.8).abs() < 1e-9, "{d}");
    }

    fn inputs(temp: f64, minutes: u32) -> AlarmInputs {
        AlarmInputs {
            unit: 0,
            stator_temp: temp,
            minutes_over: minutes,
            in_rough_zone: false,
            vibration_forced: false,
            vibration: 2.0,
        }
    }

    #[test]
    fn stator_alarm_duration_gate() {
        let lim = AlarmLimits::default();
        assert!(evaluate_alarms(&inputs(181.0, 9), &lim).is_empty());
        assert!(evaluate_alarms(&inputs(181.0, 10), &lim).is_empty());
        let a = evaluate_alarms(&inputs(181.0, 11), &lim);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].kind, AlarmKind::StatorHi);
        assert!(evaluate_alarms(&inputs(180.0, 40), &lim).is_empty());
    }

    #[test]
    fn forced_vibration_alarms() {
        let mut s = inputs(100.0, 0);
        s.vibration_forced = true;
        s.vibration = 8.0;
        let a = evaluate_alarms(&s, &AlarmLimits::default());
        assert_eq!(a, vec![Alarm { unit: 0, kind: AlarmKind::Vibration, value: 8.0 }]);
    }

    #[test]
    fn rough_zone_geometry() {
        let z = RoughZone { gp_min: 10.0, gp_max: 30.0, bp_min: 15.0, bp_max: 32.0 };
        assert!(z.contains(20.0, 20.0));
        assert!(!z.contains(31.0, 20.0));
        assert!((z.blade_exit(30.8) - 1.2).abs() < 1e-12);
        assert_eq!(z.blade_exit(16.0), -1.0);
    }
}

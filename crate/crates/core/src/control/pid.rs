use serde::{Deserialize, Serialize};

use super::ControlError;

/// Gate-position PID tuning. `t_i = f64::INFINITY` disables the integral term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    /// % gate per CFS of error.
    pub k_p: f64,
    /// Integral time, s.
    pub t_i: f64,
    /// Derivative time, s.
    pub t_d: f64,
    pub output_min: f64,
    pub output_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { k_p: 0.005, t_i: 120.0, t_d: 0.0, output_min: 0.0, output_max: 100.0 }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::InvalidGains(m.to_string()));
        if !(self.k_p > 0.0 && self.k_p.is_finite()) {
            return bad("k_p must be positive");
        }
        if !(self.t_i > 0.0) {
            return bad("t_i must be positive");
        }
        if !(self.t_d >= 0.0 && self.t_d.is_finite()) {
            return bad("t_d must be non-negative");
        }
        if !(0.0 <= self.output_min && self.output_min < self.output_max && self.output_max <= 100.0) {
            return bad("need 0 <= output_min < output_max <= 100");
        }
        Ok(())
    }

    fn integral_gain(&self) -> f64 {
        if self.t_i.is_infinite() {
            0.0
        } else {
            1.0 / self.t_i
        }
    }

    /// Largest |integral| whose contribution stays inside the output range.
    pub fn integral_bounds(&self) -> Option<(f64, f64)> {
        let ig = self.integral_gain();
        (ig > 0.0).then(|| {
            let scale = self.k_p * ig;
            (self.output_min / scale, self.output_max / scale)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Accumulated error·time, CFS·s.
    pub integral_accum: f64,
    /// Last error, CFS.
    pub prev_error: f64,
    /// Last gate position, %.
    pub last_output: f64,
    /// False until the first step, so the derivative term does not kick.
    pub primed: bool,
}

impl PidState {
    /// State that holds `gate` with zero error, as after a long settled run.
    pub fn settled_at(gains: &PidGains, gate: f64) -> Self {
        let integral = match gains.integral_bounds() {
            Some(_) => gate / (gains.k_p * gains.integral_gain()),
            None => 0.0,
        };
        Self { integral_accum: integral, prev_error: 0.0, last_output: gate, primed: true }
    }
}

/// One PID update on the biased flow error `q_sp + q_bias - q_act`.
///
/// Rectangular integral, backward-difference derivative on error. The integral
/// is frozen while the output is saturated in the direction of the error and is
/// always bounded so its own contribution stays inside the output range.
pub fn pid_step(
    gains: &PidGains,
    state: &PidState,
    q_sp: f64,
    q_act: f64,
    q_bias: f64,
    dt: f64,
) -> Result<(f64, PidState), ControlError> {
    if !q_bias.is_finite() {
        return Err(ControlError::NonFinite("q_bias"));
    }
    check_inputs(q_sp, q_act, dt)?;
    Ok(advance(gains, state, q_sp + q_bias - q_act, dt))
}

/// The agentless loop: error is `q_sp - q_act` with no bias term at all.
pub fn pid_step_unbiased(
    gains: &PidGains,
    state: &PidState,
    q_sp: f64,
    q_act: f64,
    dt: f64,
) -> Result<(f64, PidState), ControlError> {
    check_inputs(q_sp, q_act, dt)?;
    Ok(advance(gains, state, q_sp - q_act, dt))
}

fn check_inputs(q_sp: f64, q_act: f64, dt: f64) -> Result<(), ControlError> {
    if !q_sp.is_finite() {
        return Err(ControlError::NonFinite("q_sp"));
    }
    if !q_act.is_finite() {
        return Err(ControlError::NonFinite("q_act"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ControlError::NonFinite("dt"));
    }
    Ok(())
}

fn advance(gains: &PidGains, state: &PidState, error: f64, dt: f64) -> (f64, PidState) {
    let ig = gains.integral_gain();
    let derivative = if state.primed { (error - state.prev_error) / dt } else { 0.0 };
    let output_for = |integral: f64| gains.k_p * (error + ig * integral + gains.t_d * derivative);

    let mut integral = state.integral_accum + error * dt;
    let raw = output_for(integral);
    let pushing_high = raw > gains.output_max && error > 0.0;
    let pushing_low = raw < gains.output_min && error < 0.0;
    if pushing_high || pushing_low {
        integral = state.integral_accum;
    }
    if let Some((lo, hi)) = gains.integral_bounds() {
        integral = integral.clamp(lo, hi);
    } else {
        integral = 0.0;
    }
    let output = output_for(integral).clamp(gains.output_min, gains.output_max);
    (output, PidState { integral_accum: integral, prev_error: error, last_output: output, primed: true })
}

use serde::{Deserialize, Serialize};

use crate::control::CamGrid;

/// Ground-truth efficiency hill of one unit.
///
/// Quadratic penalties in blade deviation and flow fraction around a peak that
/// sits `bp_opt_offset` above the installed cam, so a unit run on its cam leaves
/// generating capacity unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthEfficiencyModel {
    pub eta_max: f64,
    /// Blade %, true peak minus cam.
    pub bp_opt_offset: f64,
    /// Efficiency lost per (blade %)^2 of deviation from the peak.
    pub curvature_bp: f64,
    /// Efficiency lost per (flow fraction)^2 of deviation from the peak.
    pub curvature_q: f64,
    pub q_opt_fraction: f64,
    /// CFS that defines flow fraction 1.0.
    pub q_rated: f64,
}

impl Default for TruthEfficiencyModel {
    fn default() -> Self {
        Self {
            eta_max: 0.93,
            bp_opt_offset: 4.0,
            curvature_bp: 0.002,
            curvature_q: 1.0,
            q_opt_fraction: 0.80,
            q_rated: 10_000.0,
        }
    }
}

impl TruthEfficiencyModel {
    /// Efficiency given the blade position and the blade position of the
    /// surface's peak at this head and flow.
    pub fn efficiency_about(&self, q_act: f64, bp: f64, bp_peak: f64) -> f64 {
        let db = bp - bp_peak;
        let dq = q_act / self.q_rated - self.q_opt_fraction;
        (self.eta_max - self.curvature_bp * db * db - self.curvature_q * dq * dq).clamp(0.0, self.eta_max)
    }
}

/// Gate-to-flow hydraulics: demand flow scales with gate opening and the square
/// root of head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateFlow {
    /// CFS per % gate at the reference head.
    pub q_per_pct: f64,
    pub h_ref: f64,
}

impl Default for GateFlow {
    fn default() -> Self {
        Self { q_per_pct: 120.0, h_ref: 34.0 }
    }
}

impl GateFlow {
    pub fn demand(&self, gate: f64, h_net: f64) -> f64 {
        self.q_per_pct * gate * (h_net.max(0.0) / self.h_ref).sqrt()
    }

    /// Steady gate opening that passes `q` at `h_net`.
    pub fn gate_for_flow(&self, q: f64, h_net: f64) -> f64 {
        let scale = self.q_per_pct * (h_net.max(1e-9) / self.h_ref).sqrt();
        q / scale
    }
}

/// Truth surface bound to the cam it is offset from.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSurface {
    pub model: TruthEfficiencyModel,
    pub gate_flow: GateFlow,
    pub cam: CamGrid,
}

impl TruthSurface {
    pub fn new(model: TruthEfficiencyModel, gate_flow: GateFlow, cam: CamGrid) -> Self {
        Self { model, gate_flow, cam }
    }

    /// Cam blade position at the steady gate for `q_act`.
    pub fn cam_blade(&self, h_net: f64, q_act: f64) -> f64 {
        self.cam.lookup(self.gate_flow.gate_for_flow(q_act, h_net), h_net)
    }

    pub fn peak_blade(&self, h_net: f64, q_act: f64) -> f64 {
        self.cam_blade(h_net, q_act) + self.model.bp_opt_offset
    }

    pub fn efficiency(&self, h_net: f64, q_act: f64, bp: f64) -> f64 {
        self.model.efficiency_about(q_act, bp, self.peak_blade(h_net, q_act))
    }
}

/// Free-function form of [`TruthSurface::efficiency`].
pub fn true_efficiency(surface: &TruthSurface, h_net: f64, q_act: f64, bp: f64) -> f64 {
    surface.efficiency(h_net, q_act, bp)
}

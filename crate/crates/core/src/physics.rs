//! Hydraulic, power, loss and emissions relations for a run-of-the-river unit.
//!
//! Units are fixed plant-wide: feet for head, cubic feet per second for flow,
//! megawatts for power. All functions are pure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// MW per (ft · CFS) at unit efficiency.
pub const DEFAULT_K: f64 = 1.0 / 11810.0;

/// Flow the Corps withholds from the plant for lock operations.
pub const LOCKING_RESERVE_CFS: f64 = 5000.0;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("efficiency {0} outside [0, 1]")]
    EfficiencyOutOfRange(f64),
    #[error("conversion factor must be positive, got {0}")]
    BadConversion(f64),
    #[error("negative flow {0} CFS")]
    NegativeFlow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConditions {
    /// Upstream elevation, ft above sea level.
    pub h_up: f64,
    /// Downstream (tailwater) elevation, ft.
    pub h_down: f64,
}

impl HeadConditions {
    pub fn new(h_up: f64, h_down: f64) -> Self {
        Self { h_up, h_down }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConstants {
    pub k: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

impl PhysicsConstants {
    pub fn new(k: f64) -> Result<Self, PhysicsError> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(PhysicsError::BadConversion(k));
        }
        Ok(Self { k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowState {
    pub q_sp: f64,
    pub q_act: f64,
}

/// Coefficients of the coal and CO2 offset relations.
///
/// The CO2 factor and the carbon fraction are kept separate because the
/// published offset figure only follows from `carbon_fraction = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionsParams {
    /// MBTU per MWhr.
    pub heat_rate: f64,
    /// MBTU per ton of coal.
    pub hhv: f64,
    pub carbon_fraction: f64,
    pub co2_per_carbon: f64,
}

impl Default for EmissionsParams {
    fn default() -> Self {
        Self { heat_rate: 10.0, hhv: 24.0, carbon_fraction: 0.75, co2_per_carbon: 1.83 }
    }
}

/// Net head across the unit. Negative values are returned as-is; callers
/// treat them as non-generating.
pub fn net_head(hc: HeadConditions) -> f64 {
    hc.h_up - hc.h_down
}

/// Power available for generation, MW.
pub fn available_power(k: PhysicsConstants, eta: f64, q_act: f64, h_net: f64) -> Result<f64, PhysicsError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(PhysicsError::EfficiencyOutOfRange(eta));
    }
    if q_act < 0.0 {
        return Err(PhysicsError::NegativeFlow(q_act));
    }
    Ok(k.k * eta * q_act * h_net)
}

/// Power lost to trash-rack drawdown, comparing the clean operating point
/// `(q_act, h_net)` against the reduced one.
pub fn drawdown_power_loss(
    k: PhysicsConstants,
    eta: f64,
    q_act: f64,
    h_net: f64,
    q_act_reduced: f64,
    h_net_reduced: f64,
) -> f64 {
    k.k * eta * (q_act * h_net - q_act_reduced * h_net_reduced)
}

pub fn coal_offset_tons_per_year(annual_energy_mwhr: f64, p: &EmissionsParams) -> f64 {
    annual_energy_mwhr * p.heat_rate / p.hhv
}

pub fn co2_offset_tons_per_year(coal_tons: f64, p: &EmissionsParams) -> f64 {
    coal_tons * p.co2_per_carbon * p.carbon_fraction
}

/// Flow left for the plant once the locking reserve is withheld.
pub fn corps_available_flow(required_river_flow: f64, locking_reserve: f64) -> f64 {
    (required_river_flow - locking_reserve).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnitFlowPower {
    pub q_act: f64,
    pub q_sp: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantTotals {
    pub sum_q_act: f64,
    pub sum_q_sp: f64,
    pub sum_power: f64,
}

pub fn plant_totals(units: &[UnitFlowPower]) -> PlantTotals {
    units.iter().fold(PlantTotals::default(), |acc, u| PlantTotals {
        sum_q_act: acc.sum_q_act + u.q_act,
        sum_q_sp: acc.sum_q_sp + u.q_sp,
        sum_power: acc.sum_power + u.power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> PhysicsConstants {
        PhysicsConstants::default()
    }

    #[test]
    fn net_head_examples() {
        assert_eq!(net_head(HeadConditions::new(455.0, 421.5)), 33.5);
        assert_eq!(net_head(HeadConditions::new(455.0, 455.0)), 0.0);
        assert_eq!(net_head(HeadConditions::new(454.0, 420.0)), 34.0);
        assert!(net_head(HeadConditions::new(420.0, 421.0)) < 0.0);
    }

    #[test]
    fn available_power_examples() {
        let p = available_power(k(), 0.90, 1000.0, 33.5).unwrap();
        assert!((p - 2.5529).abs() < 1e-4, "{p}");
        assert_eq!(available_power(k(), 0.42, 0.0, 30.0).unwrap(), 0.0);
        let unit = available_power(k(), 1.0, 11810.0, 1.0).unwrap();
        assert!((unit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn available_power_rejects_bad_efficiency() {
        assert_eq!(available_power(k(), 1.2, 10.0, 10.0), Err(PhysicsError::EfficiencyOutOfRange(1.2)));
        assert!(available_power(k(), -0.1, 10.0, 10.0).is_err());
        assert!(PhysicsConstants::new(0.0).is_err());
    }

    #[test]
    fn drawdown_loss_examples() {
        assert_eq!(drawdown_power_loss(k(), 0.9, 8000.0, 33.5, 8000.0, 33.5), 0.0);
        let loss = drawdown_power_loss(k(), 0.9, 8000.0, 33.5, 7800.0, 33.0);
        // 0.9 * (268000 - 257400) / 11810
        assert!((loss - 0.80779).abs() < 1e-4, "{loss}");
        let lost_flow = drawdown_power_loss(k(), 0.9, 1000.0, 33.5, 0.0, 33.5);
        assert!((lost_flow - 2.5529).abs() < 1e-4);
    }

    #[test]
    fn emissions_examples() {
        let p = EmissionsParams::default();
        assert_eq!(coal_offset_tons_per_year(2190.0, &p), 912.5);
        assert_eq!(coal_offset_tons_per_year(0.0, &p), 0.0);
        assert_eq!(coal_offset_tons_per_year(24.0, &p), 10.0);
        assert!((co2_offset_tons_per_year(912.5, &p) - 1252.40625).abs() < 1e-9);
        let full = EmissionsParams { carbon_fraction: 1.0, ..p };
        assert!((co2_offset_tons_per_year(912.5, &full) - 1669.875).abs() < 1e-9);
        assert_eq!(co2_offset_tons_per_year(0.0, &p), 0.0);
    }

    #[test]
    fn corps_flow_examples() {
        assert_eq!(corps_available_flow(30000.0, LOCKING_RESERVE_CFS), 25000.0);
        assert_eq!(corps_available_flow(5000.0, 5000.0), 0.0);
        assert_eq!(corps_available_flow(4000.0, 5000.0), 0.0);
    }

    #[test]
    fn plant_totals_examples() {
        let u = UnitFlowPower { q_act: 1000.0, q_sp: 1000.0, power: 2.5 };
        assert_eq!(plant_totals(&[u, u, u]), PlantTotals { sum_q_act: 3000.0, sum_q_sp: 3000.0, sum_power: 7.5 });
        assert_eq!(plant_totals(&[UnitFlowPower::default()]), PlantTotals::default());
        let mixed = [
            UnitFlowPower { q_act: 7900.0, q_sp: 8000.0, power: 20.1 },
            UnitFlowPower { q_act: 8250.0, q_sp: 8250.0, power: 21.4 },
            UnitFlowPower { q_act: 6100.0, q_sp: 6000.0, power: 14.0 },
        ];
        let t = plant_totals(&mixed);
        assert_eq!(t.sum_q_act, 22250.0);
        assert_eq!(t.sum_q_sp, 22250.0);
        assert!((t.sum_power - 55.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn power_is_linear_in_each_factor(
            eta in 0.0f64..0.5, q in 0.0f64..12000.0, h in 1.0f64..60.0, s in 0.0f64..2.0
        ) {
            let base = available_power(k(), eta, q, h).unwrap();
            let tol = 1e-12 * base.abs().max(1.0);
            prop_assert!((available_power(k(), eta * s, q, h).unwrap() - s * base).abs() < tol * 4.0);
            prop_assert!((available_power(k(), eta, q * s, h).unwrap() - s * base).abs() < tol * 4.0);
            prop_assert!((available_power(k(), eta, q, h * s).unwrap() - s * base).abs() < tol * 4.0);
        }

        #[test]
        fn drawdown_loss_matches_power_difference(
            eta in 0.0f64..1.0, q in 0.0f64..12000.0, h in 1.0f64..60.0,
            fq in 0.0f64..1.0, fh in 0.0f64..1.0
        ) {
            let (qr, hr) = (q * fq, h * fh);
            prop_assert_eq!(drawdown_power_loss(k(), eta, q, h, q, h), 0.0);
            let loss = drawdown_power_loss(k(), eta, q, h, qr, hr);
            let diff = available_power(k(), eta, q, h).unwrap() - available_power(k(), eta, qr, hr).unwrap();
            let scale = available_power(k(), eta, q, h).unwrap().max(1e-300);
            prop_assert!((loss - diff).abs() <= 1e-12 * scale);
            prop_assert!(loss >= -1e-12 * scale);
        }

        #[test]
        fn offsets_monotone_in_energy(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let p = EmissionsParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(coal_offset_tons_per_year(lo, &p) <= coal_offset_tons_per_year(hi, &p));
            let (clo, chi) = (coal_offset_tons_per_year(lo, &p), coal_offset_tons_per_year(hi, &p));
            prop_assert!(co2_offset_tons_per_year(clo, &p) <= co2_offset_tons_per_year(chi, &p));
        }

        #[test]
        fn corps_flow_never_negative(req in -1e5f64..1e6, reserve in 0.0f64..1e5) {
            prop_assert!(corps_available_flow(req, reserve) >= 0.0);
        }
    }
}

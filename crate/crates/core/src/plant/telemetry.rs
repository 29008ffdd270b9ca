//! Per-minute telemetry rows and the alarm log, with their CSV layouts.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// Per-unit fields of one telemetry row, in CSV column order.
pub const UNIT_FIELDS: [&str; 8] = ["gp", "bp", "h_net", "q_act", "q_sp", "p", "stator_temp", "vibration"];
pub const PLANT_FIELDS: [&str; 4] = ["plant_h_net", "plant_q_act", "plant_q_sp", "plant_p"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnitTelemetry {
    /// Gate position, %.
    pub gp: f64,
    /// Blade position, %.
    pub bp: f64,
    /// Effective net head (after trash-rack drawdown), ft.
    pub h_net: f64,
    pub q_act: f64,
    /// Commanded unit flow, allocation plus any agent flow bias, CFS.
    pub q_sp: f64,
    /// MW.
    pub p: f64,
    /// °F.
    pub stator_temp: f64,
    /// mils.
    pub vibration: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TelemetryRow {
    /// Minutes since the start of the simulated year.
    pub timestamp: u64,
    pub units: Vec<UnitTelemetry>,
    /// Gross plant net head, ft.
    pub plant_h_net: f64,
    pub sum_q_act: f64,
    pub sum_q_sp: f64,
    pub sum_p: f64,
}

pub fn header(n_units: usize) -> Vec<String> {
    let mut cols = vec!["timestamp".to_string()];
    for u in 1..=n_units {
        cols.extend(UNIT_FIELDS.iter().map(|f| format!("u{u}_{f}")));
    }
    cols.extend(PLANT_FIELDS.iter().map(|s| s.to_string()));
    cols
}

impl TelemetryRow {
    /// Fixed-precision CSV cells; the precision is part of the file format.
    pub fn csv_cells(&self) -> Vec<String> {
        let mut cells = Vec::with_capacity(1 + self.units.len() * 8 + 4);
        cells.push(self.timestamp.to_string());
        for u in &self.units {
            cells.push(format!("{:.3}", u.gp));
            cells.push(format!("{:.3}", u.bp));
            cells.push(format!("{:.3}", u.h_net));
            cells.push(format!("{:.1}", u.q_act));
            cells.push(format!("{:.1}", u.q_sp));
            cells.push(format!("{:.4}", u.p));
            cells.push(format!("{:.2}", u.stator_temp));
            cells.push(format!("{:.3}", u.vibration));
        }
        cells.push(format!("{:.3}", self.plant_h_net));
        cells.push(format!("{:.1}", self.sum_q_act));
        cells.push(format!("{:.1}", self.sum_q_sp));
        cells.push(format!("{:.4}", self.sum_p));
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmLogRow {
    pub timestamp: u64,
    /// 1-based unit number.
    pub unit: usize,
    pub kind: String,
    pub value: f64,
}

pub mod log_kind {
    /// Stator temperature, logged every minute it is above the HI limit.
    pub const STATOR_TEMP: &str = "stator_temp";
    /// Stator HI alarm active.
    pub const STATOR_HI: &str = "stator_hi";
    pub const VIBRATION: &str = "vibration";
    /// Load eject started; value is the generation given up, MWhr.
    pub const LOAD_EJECT: &str = "load_eject";
}

pub struct TelemetryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TelemetryWriter<W> {
    pub fn new(w: W, n_units: usize) -> Result<Self, csv::Error> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(header(n_units))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &TelemetryRow) -> Result<(), csv::Error> {
        self.inner.write_record(row.csv_cells())
    }

    pub fn finish(mut self) -> Result<W, csv::Error> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}

pub struct AlarmLogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> AlarmLogWriter<W> {
    pub fn new(w: W) -> Result<Self, csv::Error> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(["timestamp", "unit", "kind", "value"])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &AlarmLogRow) -> Result<(), csv::Error> {
        self.inner.write_record([
            row.timestamp.to_string(),
            row.unit.to_string(),
            row.kind.clone(),
            format!("{:.3}", row.value),
        ])
    }

    pub fn finish(mut self) -> Result<W, csv::Error> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = header(3);
        assert_eq!(h.len(), 1 + 24 + 4);
        assert_eq!(h[1], "u1_gp");
        assert_eq!(h[24], "u3_vibration");
        assert_eq!(h[28], "plant_p");
        let row = TelemetryRow { units: vec![UnitTelemetry::default(); 3], ..Default::default() };
        assert_eq!(row.csv_cells().len(), h.len());
    }
}

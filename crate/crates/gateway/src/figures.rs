//! Plottable CSV artifacts: load-versus-flow scatter from the cluster
//! database, the flow-redistribution trajectory, and event responses with
//! and without agents.

use std::io::Write;

use hydrotwin::agents::{marginal_pair, redistribution_path, Estimator, FlowSlot, PathPoint};
use hydrotwin::physics::DEFAULT_K;
use hydrotwin::plant::history::MINUTES_PER_DAY;
use hydrotwin::plant::{PlantSim, SimConfig};
use hydrotwin::statedb::{ClusterRecord, PlantDb};
use serde::Serialize;

use crate::runner::RunReport;
use crate::GatewayError;

/// Which clusters a load-versus-flow view draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterWindow {
    pub h_lo: f64,
    pub h_hi: f64,
    /// Cluster start minute, half-open.
    pub t_lo: u64,
    pub t_hi: u64,
}

impl ClusterWindow {
    /// 34 ± 0.25 ft over July through September.
    pub fn summer_34ft() -> Self {
        Self { h_lo: 33.75, h_hi: 34.25, t_lo: 181 * MINUTES_PER_DAY, t_hi: 273 * MINUTES_PER_DAY }
    }

    pub fn contains(&self, c: &ClusterRecord) -> bool {
        (self.h_lo..=self.h_hi).contains(&c.h_net) && (self.t_lo..self.t_hi).contains(&c.start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig10Row {
    pub unit: usize,
    pub start: u64,
    pub h_net: f64,
    pub q_act: f64,
    pub bp: f64,
    pub p: f64,
    pub eta: f64,
}

pub fn fig10_rows(db: &PlantDb, w: &ClusterWindow) -> Vec<Fig10Row> {
    db.units
        .iter()
        .enumerate()
        .flat_map(|(u, d)| {
            d.clusters().iter().filter(|c| w.contains(c)).map(move |c| Fig10Row {
                unit: u + 1,
                start: c.start,
                h_net: c.h_net,
                q_act: c.q_act,
                bp: c.bp,
                p: c.p,
                eta: c.eta,
            })
        })
        .collect()
}

/// Spread of load among clusters sharing one flow bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoadSpread {
    pub unit: usize,
    pub q_center: f64,
    pub clusters: usize,
    pub max_mw: f64,
    pub median_mw: f64,
    pub spread_mw: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Max minus median load in the busiest flow bin of one unit. Each cluster's
/// efficiency is carried to the bin centre and `h_ref`, so the spread
/// reflects blade setting rather than scatter in head and flow.
pub fn load_spread(db: &PlantDb, unit: usize, w: &ClusterWindow, q_bin: f64, h_ref: f64) -> Option<LoadSpread> {
    let mut bins: std::collections::BTreeMap<i64, Vec<f64>> = std::collections::BTreeMap::new();
    for c in db.units.get(unit)?.clusters().iter().filter(|c| w.contains(c)) {
        bins.entry((c.q_act / q_bin).floor() as i64).or_default().push(c.eta);
    }
    let (bin, etas) = bins.into_iter().max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))?;
    let q_center = (bin as f64 + 0.5) * q_bin;
    let mut loads: Vec<f64> = etas.iter().map(|e| DEFAULT_K * e * q_center * h_ref).collect();
    loads.sort_by(f64::total_cmp);
    let max_mw = *loads.last()?;
    let median_mw = median(&loads);
    Some(LoadSpread {
        unit: unit + 1,
        q_center,
        clusters: loads.len(),
        max_mw,
        median_mw,
        spread_mw: max_mw - median_mw,
    })
}

/// Plant power as flow keeps moving between the two units whose marginal
/// power differs most, starting from an equal split of `plant_q`.
pub fn fig13_path(cfg: &SimConfig, plant_q: f64, step: f64, n_moves: usize) -> Result<Vec<PathPoint>, GatewayError> {
    let n = cfg.n_units;
    let share = plant_q / n as f64;
    let sim = PlantSim::new(cfg.clone(), 1, &vec![share; n], 0)?;
    let est = Estimator::Truth(sim.surfaces().to_vec());
    let zero = vec![0.0; n];
    let flows = est.with_biases(&zero);
    let slots: Vec<FlowSlot> = sim
        .units()
        .iter()
        .enumerate()
        .map(|(u, s)| FlowSlot {
            unit: u,
            h_net: s.h_net,
            base_q: share,
            min_q: hydrotwin::agents::AgentParams::default().min_unit_flow,
            max_q: cfg.unit_max_flow,
        })
        .collect();
    let Some((donor, receiver)) = marginal_pair(&slots, &flows, step) else {
        return Ok(Vec::new());
    };
    Ok(redistribution_path(&slots, &flows, donor, receiver, step, n_moves))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Fig14Row {
    minute: u64,
    p_agents: f64,
    p_baseline: f64,
    q_sp_agents: f64,
    q_sp_baseline: f64,
    stator_temp_agents: f64,
    stator_temp_baseline: f64,
}

/// Unit `unit` (0-based) and plant power through a run, with and without
/// agents.
fn fig14_rows(report: &RunReport, unit: usize) -> Vec<Fig14Row> {
    report
        .series
        .iter()
        .filter_map(|t| {
            let a = t.row.units.get(unit)?;
            let b = t.baseline.as_ref().map_or(a, |r| &r.units[unit]);
            Some(Fig14Row {
                minute: t.row.timestamp,
                p_agents: t.row.sum_p,
                p_baseline: t.baseline.as_ref().map_or(t.row.sum_p, |r| r.sum_p),
                q_sp_agents: a.q_sp,
                q_sp_baseline: b.q_sp,
                stator_temp_agents: a.stator_temp,
                stator_temp_baseline: b.stator_temp,
            })
        })
        .collect()
}

const FIG10_HEADER: [&str; 7] = ["unit", "start", "h_net", "q_act", "bp", "p", "eta"];
const FIG13_HEADER: [&str; 4] = ["moves", "shifted", "plant_mw", "gain_mw"];
const FIG14_HEADER: [&str; 7] =
    ["minute", "p_agents", "p_baseline", "q_sp_agents", "q_sp_baseline", "stator_temp_agents", "stator_temp_baseline"];

fn write_rows<W: Write, T: Serialize>(w: W, header: &[&str], rows: &[T]) -> Result<(), GatewayError> {
    let mut cw = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    cw.write_record(header)?;
    for r in rows {
        cw.serialize(r)?;
    }
    cw.flush()?;
    Ok(())
}

pub fn write_fig10<W: Write>(w: W, rows: &[Fig10Row]) -> Result<(), GatewayError> {
    write_rows(w, &FIG10_HEADER, rows)
}

pub fn write_fig13<W: Write>(w: W, path: &[PathPoint]) -> Result<(), GatewayError> {
    write_rows(w, &FIG13_HEADER, path)
}

pub fn write_fig14<W: Write>(w: W, report: &RunReport, unit: usize) -> Result<(), GatewayError> {
    write_rows(w, &FIG14_HEADER, &fig14_rows(report, unit))
}

/// The unit whose stator ran hottest, 0-based; the one a response plot is
/// about.
pub fn hottest_unit(report: &RunReport) -> usize {
    let n = report.series.first().map_or(0, |t| t.row.units.len());
    (0..n)
        .max_by(|&a, &b| {
            let peak = |u: usize| report.series.iter().map(|t| t.row.units[u].stator_temp).fold(f64::MIN, f64::max);
            peak(a).total_cmp(&peak(b)).then(b.cmp(&a))
        })
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{Offsets, Totals};

    #[test]
    fn empty_inputs_give_header_only_csvs() {
        let report = RunReport {
            scenario: "empty".into(),
            with_agents: true,
            series: Vec::new(),
            totals: Totals { mwhr_agents: 0.0, mwhr_baseline: 0.0, benefit_mwhr: 0.0 },
            events: Vec::new(),
            offsets: Offsets::for_energy(0.0, &Default::default()),
        };
        let mut out = Vec::new();
        write_fig14(&mut out, &report, hottest_unit(&report)).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), FIG14_HEADER.join(",") + "\n");
        let mut out = Vec::new();
        write_fig13(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), FIG13_HEADER.join(",") + "\n");
        let mut out = Vec::new();
        write_fig10(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), FIG10_HEADER.join(",") + "\n");
    }

    #[test]
    fn redistribution_path_peaks_then_declines() {
        let path = fig13_path(&SimConfig::default(), 24_000.0, 250.0, 24).unwrap();
        let peak = path.iter().map(|p| p.gain_mw).fold(f64::MIN, f64::max);
        assert!(peak > 0.0);
        assert!(path.last().unwrap().gain_mw < peak);
        assert_eq!(path[0].gain_mw, 0.0);
    }
}

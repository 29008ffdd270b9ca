//! History synthesis and database building, on disk or in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hydrotwin::plant::history::{synthesize_history, synthesize_history_with, HistoryParams, HistorySummary};
use hydrotwin::plant::telemetry::AlarmLogRow;
use hydrotwin::plant::SimConfig;
use hydrotwin::statedb::{ingest, read_alarm_log, BinWidths, ClusterTolerances, Diagnostic, OperatingPattern, PlantDb};

use crate::GatewayError;

pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const ALARM_FILE: &str = "alarms.csv";

/// Writes `telemetry.csv` and `alarms.csv` into `dir`.
pub fn synthesize_to_dir(cfg: &SimConfig, p: &HistoryParams, dir: &Path) -> Result<HistorySummary, GatewayError> {
    std::fs::create_dir_all(dir)?;
    let t = BufWriter::new(File::create(dir.join(TELEMETRY_FILE))?);
    let a = BufWriter::new(File::create(dir.join(ALARM_FILE))?);
    Ok(synthesize_history(cfg, p, t, a)?)
}

/// Everything a history run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct History {
    pub patterns: Vec<OperatingPattern>,
    pub log: Vec<AlarmLogRow>,
    pub summary: HistorySummary,
}

pub fn synthesize_in_memory(cfg: &SimConfig, p: &HistoryParams) -> Result<History, GatewayError> {
    let mut patterns = Vec::with_capacity(p.days as usize * 1440);
    let mut log = Vec::new();
    let summary = synthesize_history_with(
        cfg,
        p,
        |r| {
            patterns.push(r.clone());
            Ok(())
        },
        |l| {
            log.push(l.clone());
            Ok(())
        },
    )?;
    Ok(History { patterns, log, summary })
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub db: PlantDb,
    pub rows: usize,
    pub rejected: Vec<Diagnostic>,
}

pub fn ingest_files(
    telemetry: &Path,
    alarms: &Path,
    n_units: usize,
    tol: &ClusterTolerances,
    bins: BinWidths,
) -> Result<IngestOutcome, GatewayError> {
    let ing = ingest(BufReader::new(File::open(telemetry)?), n_units)?;
    let log = read_alarm_log(BufReader::new(File::open(alarms)?))?;
    let db = PlantDb::build(&ing.patterns, &log, n_units, tol, bins);
    Ok(IngestOutcome { db, rows: ing.patterns.len(), rejected: ing.rejected })
}

/// The default history run clustered with default tolerances.
pub fn default_db(cfg: &SimConfig) -> Result<(PlantDb, History), GatewayError> {
    let h = synthesize_in_memory(cfg, &HistoryParams::default())?;
    let db = PlantDb::build(&h.patterns, &h.log, cfg.n_units, &ClusterTolerances::default(), BinWidths::default());
    Ok((db, h))
}

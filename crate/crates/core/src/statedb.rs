//! Operating-state database mined from telemetry: steady-state runs become
//! clusters binned by head and flow, queried for better blade positions and
//! interpolated for efficiency.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::DEFAULT_K;
use crate::plant::telemetry::{header, AlarmLogRow, TelemetryRow, UnitTelemetry};

/// One ingested telemetry row.
pub type OperatingPattern = TelemetryRow;

#[derive(Debug, Error)]
pub enum StateDbError {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: u64,
    pub msg: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub patterns: Vec<OperatingPattern>,
    pub rejected: Vec<Diagnostic>,
}

/// Relative tolerance between plant sums and unit sums.
pub const SUM_TOLERANCE: f64 = 1e-3;

fn sums_agree(plant: f64, units: f64) -> bool {
    (plant - units).abs() <= SUM_TOLERANCE * units.abs().max(1.0)
}

/// Reads the telemetry CSV for `n_units` units. A wrong header is fatal; bad
/// rows are skipped with a line-numbered diagnostic.
pub fn ingest<R: Read>(reader: R, n_units: usize) -> Result<Ingested, StateDbError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let expected = header(n_units);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        let first_diff = expected.iter().zip(&got).position(|(a, b)| a != b).unwrap_or(expected.len().min(got.len()));
        return Err(StateDbError::Schema(format!(
            "expected {} columns, found {}; first difference at column {}",
            expected.len(),
            got.len(),
            first_diff + 1
        )));
    }
    let mut out = Ingested::default();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                let line = rec.position().map_or(0, |p| p.line());
                match parse_row(&rec, n_units) {
                    Ok(row) => out.patterns.push(row),
                    Err(msg) => out.rejected.push(Diagnostic { line, msg }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.rejected.push(Diagnostic { line, msg: e.to_string() });
            }
        }
    }
    Ok(out)
}

fn parse_row(rec: &csv::StringRecord, n_units: usize) -> Result<TelemetryRow, String> {
    let want = 1 + 8 * n_units + 4;
    if rec.len() != want {
        return Err(format!("expected {want} fields, found {}", rec.len()));
    }
    let timestamp = rec[0].parse::<u64>().map_err(|e| format!("timestamp {:?}: {e}", &rec[0]))?;
    let mut vals = Vec::with_capacity(want - 1);
    for (i, cell) in rec.iter().enumerate().skip(1) {
        let v = cell.parse::<f64>().map_err(|e| format!("column {}: {cell:?}: {e}", i + 1))?;
        if !v.is_finite() {
            return Err(format!("column {}: non-finite value", i + 1));
        }
        vals.push(v);
    }
    let units: Vec<UnitTelemetry> = vals
        .chunks(8)
        .take(n_units)
        .map(|c| UnitTelemetry {
            gp: c[0],
            bp: c[1],
            h_net: c[2],
            q_act: c[3],
            q_sp: c[4],
            p: c[5],
            stator_temp: c[6],
            vibration: c[7],
        })
        .collect();
    let plant = &vals[8 * n_units..];
    let row = TelemetryRow {
        timestamp,
        plant_h_net: plant[0],
        sum_q_act: plant[1],
        sum_q_sp: plant[2],
        sum_p: plant[3],
        units,
    };
    let checks = [
        ("plant_q_act", row.sum_q_act, row.units.iter().map(|u| u.q_act).sum::<f64>()),
        ("plant_q_sp", row.sum_q_sp, row.units.iter().map(|u| u.q_sp).sum()),
        ("plant_p", row.sum_p, row.units.iter().map(|u| u.p).sum()),
    ];
    for (name, plant, units) in checks {
        if !sums_agree(plant, units) {
            return Err(format!("{name} {plant} differs from unit sum {units} by more than 0.1%"));
        }
    }
    Ok(row)
}

pub fn read_alarm_log<R: Read>(reader: R) -> Result<Vec<AlarmLogRow>, StateDbError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let hdr: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if hdr != ["timestamp", "unit", "kind", "value"] {
        return Err(StateDbError::Schema(format!("alarm log header {hdr:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(StateDbError::from)).collect()
}

/// Similarity bands for steady-state runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterTolerances {
    /// Max head range within a run, ft.
    pub h_ft: f64,
    /// Max flow range as a fraction of the run's lowest flow.
    pub q_frac: f64,
    /// Max blade range, %.
    pub bp_pct: f64,
    pub min_support: usize,
}

impl Default for ClusterTolerances {
    fn default() -> Self {
        Self { h_ft: 0.2, q_frac: 0.02, bp_pct: 0.5, min_support: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinWidths {
    pub h_ft: f64,
    pub q_cfs: f64,
}

impl Default for BinWidths {
    fn default() -> Self {
        Self { h_ft: 0.5, q_cfs: 250.0 }
    }
}

/// Member means of one steady-state run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub h_net: f64,
    pub q_sp: f64,
    pub q_act: f64,
    pub gp: f64,
    pub bp: f64,
    pub p: f64,
    /// `p / (k · q_act · h_net)`.
    pub eta: f64,
    pub support: usize,
    /// Timestamp of the first member.
    pub start: u64,
}

impl ClusterRecord {
    fn from_members(members: &[(u64, UnitTelemetry)]) -> Option<Self> {
        let n = members.len() as f64;
        let mean = |f: fn(&UnitTelemetry) -> f64| members.iter().map(|(_, u)| f(u)).sum::<f64>() / n;
        let (h, q, p) = (mean(|u| u.h_net), mean(|u| u.q_act), mean(|u| u.p));
        let eta = p / (DEFAULT_K * q * h);
        (eta > 0.0 && eta <= 1.0).then(|| Self {
            h_net: h,
            q_sp: mean(|u| u.q_sp),
            q_act: q,
            gp: mean(|u| u.gp),
            bp: mean(|u| u.bp),
            p,
            eta,
            support: members.len(),
            start: members[0].0,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Band {
    lo: f64,
    hi: f64,
}

impl Band {
    fn new(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn with(self, v: f64) -> Self {
        Self { lo: self.lo.min(v), hi: self.hi.max(v) }
    }
}

/// Steady-state runs of one unit. `excluded` holds timestamps with an alarm
/// for that unit. Input order does not matter; rows are sorted by timestamp.
pub fn cluster_unit(
    patterns: &[OperatingPattern],
    unit: usize,
    excluded: &HashSet<u64>,
    tol: &ClusterTolerances,
) -> Vec<ClusterRecord> {
    let mut rows: Vec<(u64, UnitTelemetry)> =
        patterns.iter().filter_map(|r| r.units.get(unit).map(|u| (r.timestamp, *u))).collect();
    rows.sort_by_key(|(t, _)| *t);
    rows.dedup_by_key(|(t, _)| *t);
    let eligible = |(t, u): &(u64, UnitTelemetry)| u.p > 0.0 && u.q_act > 0.0 && !excluded.contains(t);

    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        if !eligible(&rows[i]) {
            i += 1;
            continue;
        }
        let u0 = rows[i].1;
        let (mut h, mut q, mut b) = (Band::new(u0.h_net), Band::new(u0.q_act), Band::new(u0.bp));
        let mut j = i + 1;
        while j < rows.len() && eligible(&rows[j]) && rows[j].0 == rows[j - 1].0 + 1 {
            let u = rows[j].1;
            let (h2, q2, b2) = (h.with(u.h_net), q.with(u.q_act), b.with(u.bp));
            let fits = h2.hi - h2.lo <= tol.h_ft && q2.hi - q2.lo <= tol.q_frac * q2.lo && b2.hi - b2.lo <= tol.bp_pct;
            if !fits {
                break;
            }
            (h, q, b) = (h2, q2, b2);
            j += 1;
        }
        if j - i >= tol.min_support {
            out.extend(ClusterRecord::from_members(&rows[i..j]));
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Timestamps per unit (0-based) that carry any alarm-log entry.
pub fn alarm_minutes(log: &[AlarmLogRow], n_units: usize) -> Vec<HashSet<u64>> {
    let mut out = vec![HashSet::new(); n_units];
    for r in log {
        if let Some(set) = r.unit.checked_sub(1).and_then(|u| out.get_mut(u)) {
            set.insert(r.timestamp);
        }
    }
    out
}

/// Best blade position found for a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestBp {
    pub bp: f64,
    /// Cluster efficiency carried to the query head and flow, MW.
    pub p_opt: f64,
    pub cluster: ClusterRecord,
}

pub const IDW_NEIGHBOURS: usize = 4;

/// Clusters of one unit indexed by (head bin, flow bin).
#[derive(Debug, Clone, PartialEq)]
pub struct StateDb {
    bins: BinWidths,
    clusters: Vec<ClusterRecord>,
    index: BTreeMap<(i64, i64), Vec<usize>>,
    pub source: String,
}

impl StateDb {
    pub fn new(mut clusters: Vec<ClusterRecord>, bins: BinWidths, source: impl Into<String>) -> Self {
        clusters.sort_by(|a, b| a.start.cmp(&b.start).then(a.bp.total_cmp(&b.bp)));
        let mut index: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, c) in clusters.iter().enumerate() {
            index.entry(bin_of(&bins, c.h_net, c.q_act)).or_default().push(i);
        }
        Self { bins, clusters, index, source: source.into() }
    }

    pub fn build(
        patterns: &[OperatingPattern],
        excluded: &HashSet<u64>,
        unit: usize,
        tol: &ClusterTolerances,
        bins: BinWidths,
        source: impl Into<String>,
    ) -> Self {
        Self::new(cluster_unit(patterns, unit, excluded, tol), bins, source)
    }

    pub fn clusters(&self) -> &[ClusterRecord] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn bins(&self) -> BinWidths {
        self.bins
    }

    pub fn bin_of(&self, h: f64, q: f64) -> (i64, i64) {
        bin_of(&self.bins, h, q)
    }

    /// Clusters in the query's bin and the eight around it.
    pub fn neighbours(&self, h: f64, q: f64) -> impl Iterator<Item = &ClusterRecord> {
        let (hb, qb) = self.bin_of(h, q);
        (hb - 1..=hb + 1)
            .flat_map(move |a| (qb - 1..=qb + 1).map(move |b| (a, b)))
            .filter_map(|k| self.index.get(&k))
            .flatten()
            .map(|&i| &self.clusters[i])
    }

    /// Blade position of the matching cluster with the highest power once its
    /// efficiency is carried to the query point; `None` unless that power
    /// strictly beats `p_act`. Ties go to the cluster that started first.
    pub fn query_best_bp(&self, h_net: f64, q_sp: f64, p_act: f64) -> Option<BestBp> {
        let mut best: Option<BestBp> = None;
        for c in self.neighbours(h_net, q_sp) {
            let p = projected_power(c, h_net, q_sp);
            let better = |b: BestBp| p > b.p_opt || (p == b.p_opt && (c.start, c.bp) < (b.cluster.start, b.cluster.bp));
            if best.is_none_or(better) {
                best = Some(BestBp { bp: c.bp, p_opt: p, cluster: *c });
            }
        }
        best.filter(|b| b.p_opt > p_act)
    }

    /// Inverse-distance-weighted cluster efficiency over (h/Δh, q/Δq, bp)
    /// using the nearest clusters. Exact at a cluster's own coordinates.
    pub fn estimate_efficiency(&self, h_net: f64, q: f64, bp: f64) -> Option<f64> {
        let mut near: Vec<(f64, f64)> = self
            .clusters
            .iter()
            .map(|c| {
                let dh = (c.h_net - h_net) / self.bins.h_ft;
                let dq = (c.q_act - q) / self.bins.q_cfs;
                let db = c.bp - bp;
                (dh * dh + dq * dq + db * db, c.eta)
            })
            .collect();
        if near.is_empty() {
            return None;
        }
        let k = IDW_NEIGHBOURS.min(near.len());
        near.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
        near.truncate(k);
        if let Some(&(_, eta)) = near.iter().find(|(d2, _)| *d2 < 1e-24) {
            return Some(eta);
        }
        let (num, den) = near.iter().fold((0.0, 0.0), |(n, d), &(d2, eta)| (n + eta / d2, d + 1.0 / d2));
        Some(num / den)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), StateDbError> {
        let mut wtr = csv::Writer::from_writer(w);
        for c in &self.clusters {
            wtr.serialize(c)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, bins: BinWidths, source: impl Into<String>) -> Result<Self, StateDbError> {
        let mut rdr = csv::Reader::from_reader(r);
        let clusters = rdr.deserialize().collect::<Result<Vec<ClusterRecord>, _>>()?;
        Ok(Self::new(clusters, bins, source))
    }
}

fn bin_of(bins: &BinWidths, h: f64, q: f64) -> (i64, i64) {
    ((h / bins.h_ft).floor() as i64, (q / bins.q_cfs).floor() as i64)
}

/// `k · η_cluster · q · h` at the query point.
pub fn projected_power(c: &ClusterRecord, h_net: f64, q: f64) -> f64 {
    DEFAULT_K * c.eta * q * h_net
}

/// One database per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantDb {
    pub units: Vec<StateDb>,
}

impl PlantDb {
    pub fn build(
        patterns: &[OperatingPattern],
        log: &[AlarmLogRow],
        n_units: usize,
        tol: &ClusterTolerances,
        bins: BinWidths,
    ) -> Self {
        let excluded = alarm_minutes(log, n_units);
        let units = (0..n_units)
            .map(|u| StateDb::build(patterns, &excluded[u], u, tol, bins, format!("unit{}", u + 1)))
            .collect();
        Self { units }
    }

    pub fn total_clusters(&self) -> usize {
        self.units.iter().map(StateDb::len).sum()
    }

    /// Writes `unit<N>.csv` files into `dir`.
    pub fn save(&self, dir: &std::path::Path) -> Result<(), StateDbError> {
        std::fs::create_dir_all(dir)?;
        for (i, db) in self.units.iter().enumerate() {
            db.write_csv(std::fs::File::create(dir.join(format!("unit{}.csv", i + 1)))?)?;
        }
        Ok(())
    }

    pub fn load(dir: &std::path::Path, n_units: usize, bins: BinWidths) -> Result<Self, StateDbError> {
        let units = (1..=n_units)
            .map(|u| {
                let f = std::fs::File::open(dir.join(format!("unit{u}.csv")))?;
                StateDb::read_csv(f, bins, format!("unit{u}"))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { units })
    }
}

/// Episodes per unit (index 0 is unit 1) in which consecutive `kind` entries
/// stay strictly above `threshold` for strictly more than `min_duration`
/// minutes.
pub fn count_events(log: &[AlarmLogRow], kind: &str, threshold: f64, min_duration: u32, n_units: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n_units];
    // (last timestamp, run length) per unit
    let mut runs: Vec<Option<(u64, u32)>> = vec![None; n_units];
    let close = |run: Option<(u64, u32)>, count: &mut u32| {
        if let Some((_, len)) = run {
            if len > min_duration {
                *count += 1;
            }
        }
    };
    for r in log.iter().filter(|r| r.kind == kind) {
        let Some(u) = r.unit.checked_sub(1).filter(|&u| u < n_units) else { continue };
        if r.value <= threshold {
            close(runs[u].take(), &mut counts[u]);
            continue;
        }
        runs[u] = match runs[u] {
            Some((last, len)) if r.timestamp == last + 1 => Some((r.timestamp, len + 1)),
            Some((last, _)) if r.timestamp == last => runs[u],
            prev => {
                close(prev, &mut counts[u]);
                Some((r.timestamp, 1))
            }
        };
    }
    for (u, run) in runs.into_iter().enumerate() {
        close(run, &mut counts[u]);
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_row(t: u64, h: f64, q: f64, bp: f64, p: f64) -> TelemetryRow {
        let u = UnitTelemetry { gp: 60.0, bp, h_net: h, q_act: q, q_sp: q, p, stator_temp: 120.0, vibration: 2.0 };
        TelemetryRow { timestamp: t, units: vec![u], plant_h_net: h, sum_q_act: q, sum_q_sp: q, sum_p: p }
    }

    fn tol() -> ClusterTolerances {
        ClusterTolerances::default()
    }

    #[test]
    fn support_threshold_and_maximality() {
        let none = HashSet::new();
        let rows: Vec<_> = (0..15).map(|t| unit_row(t, 34.0, 8000.0, 60.0, 20.0)).collect();
        let c = cluster_unit(&rows, 0, &none, &tol());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].support, 15);

        let mut rows: Vec<_> = (0..14).map(|t| unit_row(t, 34.0, 8000.0, 60.0, 20.0)).collect();
        rows.push(unit_row(14, 34.0, 9000.0, 60.0, 22.0));
        assert!(cluster_unit(&rows, 0, &none, &tol()).is_empty());

        let rows: Vec<_> = (0..45).map(|t| unit_row(t, 34.0, 8000.0, 60.0, 20.0)).collect();
        let c = cluster_unit(&rows, 0, &none, &tol());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].support, 45);
    }

    #[test]
    fn alarms_and_gaps_break_runs() {
        let rows: Vec<_> = (0..30).map(|t| unit_row(t, 34.0, 8000.0, 60.0, 20.0)).collect();
        let excluded: HashSet<u64> = [10].into_iter().collect();
        let c = cluster_unit(&rows, 0, &excluded, &tol());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].support, 19);
        let gap: Vec<_> = (0..30).filter(|&t| t != 14).map(|t| unit_row(t, 34.0, 8000.0, 60.0, 20.0)).collect();
        assert_eq!(cluster_unit(&gap, 0, &HashSet::new(), &tol()).len(), 1);
    }

    #[test]
    fn cluster_satisfies_power_relation() {
        let rows: Vec<_> = (0..20)
            .map(|t| unit_row(t, 34.0 + 0.005 * t as f64, 8000.0 + t as f64, 60.0, 20.0 + 0.01 * t as f64))
            .collect();
        let c = cluster_unit(&rows, 0, &HashSet::new(), &tol())[0];
        assert!((c.p - DEFAULT_K * c.eta * c.q_act * c.h_net).abs() < 1e-9);
    }

    fn record(h: f64, q: f64, bp: f64, p: f64) -> ClusterRecord {
        ClusterRecord {
            h_net: h,
            q_sp: q,
            q_act: q,
            gp: 60.0,
            bp,
            p,
            eta: p / (DEFAULT_K * q * h),
            support: 15,
            start: 0,
        }
    }

    #[test]
    fn query_examples() {
        let db = StateDb::new(
            vec![record(34.0, 8000.0, 60.0, 20.0), record(34.0, 8000.0, 64.0, 20.5)],
            BinWidths::default(),
            "t",
        );
        let best = db.query_best_bp(34.0, 8000.0, 20.0).unwrap();
        assert_eq!(best.bp, 64.0);
        assert!((best.p_opt - 20.5).abs() < 1e-9);
        assert!(db.query_best_bp(34.0, 8000.0, 20.6).is_none());
        assert!(db.query_best_bp(40.0, 8000.0, 0.0).is_none());
    }

    #[test]
    fn idw_examples() {
        let a = record(34.0, 8000.0, 60.0, 0.0);
        let a = ClusterRecord { eta: 0.88, ..a };
        let b = ClusterRecord { bp: 62.0, eta: 0.90, ..a };
        let db = StateDb::new(vec![a, b], BinWidths::default(), "t");
        assert_eq!(db.estimate_efficiency(34.0, 8000.0, 60.0), Some(0.88));
        let mid = db.estimate_efficiency(34.0, 8000.0, 61.0).unwrap();
        assert!((mid - 0.89).abs() < 1e-12);
        assert_eq!(StateDb::new(vec![], BinWidths::default(), "e").estimate_efficiency(1.0, 1.0, 1.0), None);
    }

    #[test]
    fn event_counting() {
        let row = |t, v| AlarmLogRow { timestamp: t, unit: 1, kind: "stator_temp".into(), value: v };
        let mut log = Vec::new();
        for start in [0u64, 100, 200] {
            log.extend((start..start + 12).map(|t| row(t, 185.0)));
        }
        log.extend((300..310).map(|t| row(t, 185.0)));
        assert_eq!(count_events(&log, "stator_temp", 180.0, 10, 3), vec![3, 0, 0]);
        let exact: Vec<_> = (0..10).map(|t| row(t, 181.0)).collect();
        assert_eq!(count_events(&exact, "stator_temp", 180.0, 10, 1), vec![0]);
        assert_eq!(count_events(&[], "stator_temp", 180.0, 10, 2), vec![0, 0]);
    }

    #[test]
    fn ingest_validates() {
        let mut buf = Vec::new();
        {
            let mut w = crate::plant::telemetry::TelemetryWriter::new(&mut buf, 1).unwrap();
            w.write(&unit_row(0, 34.0, 8000.0, 60.0, 20.0)).unwrap();
            let mut bad = unit_row(1, 34.0, 8000.0, 60.0, 20.0);
            bad.sum_p = 21.0;
            w.write(&bad).unwrap();
            w.finish().unwrap();
        }
        let got = ingest(buf.as_slice(), 1).unwrap();
        assert_eq!(got.patterns.len(), 1);
        assert_eq!(got.rejected.len(), 1);
        assert_eq!(got.rejected[0].line, 3);
        assert!(ingest(buf.as_slice(), 2).is_err());
        let empty = header(1).join(",") + "\n";
        assert!(ingest(empty.as_bytes(), 1).unwrap().patterns.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let db = StateDb::new(
            vec![record(34.0, 8000.0, 60.0, 20.0), record(33.0, 7000.0, 58.0, 17.0)],
            BinWidths::default(),
            "t",
        );
        let mut buf = Vec::new();
        db.write_csv(&mut buf).unwrap();
        let back = StateDb::read_csv(buf.as_slice(), BinWidths::default(), "t").unwrap();
        assert_eq!(back, db);
    }
}

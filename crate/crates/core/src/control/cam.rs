use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ControlError;

/// Software cam: blade position over a (gate position, net head) grid from an
/// index test, bilinearly interpolated and clamped to the grid edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamGrid {
    gate_axis: Vec<f64>,
    head_axis: Vec<f64>,
    /// Row-major by gate: `blade[g * head_axis.len() + h]`.
    blade: Vec<f64>,
}

fn strictly_ascending(axis: &[f64]) -> bool {
    axis.iter().all(|v| v.is_finite()) && axis.windows(2).all(|w| w[0] < w[1])
}

impl CamGrid {
    pub fn new(gate_axis: Vec<f64>, head_axis: Vec<f64>, blade: Vec<f64>) -> Result<Self, ControlError> {
        let bad = |m: String| Err(ControlError::MalformedCam(m));
        if gate_axis.len() < 2 || head_axis.len() < 2 {
            return bad("each axis needs at least two points".into());
        }
        if !strictly_ascending(&gate_axis) || !strictly_ascending(&head_axis) {
            return bad("axes must be strictly ascending".into());
        }
        if blade.len() != gate_axis.len() * head_axis.len() {
            return bad(format!("table has {} values, axes need {}", blade.len(), gate_axis.len() * head_axis.len()));
        }
        if let Some(v) = blade.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return bad(format!("blade value {v} outside [0, 100]"));
        }
        Ok(Self { gate_axis, head_axis, blade })
    }

    /// Samples `f(gate, head)` at every node.
    pub fn from_fn(
        gate_axis: Vec<f64>,
        head_axis: Vec<f64>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, ControlError> {
        let blade =
            gate_axis.iter().flat_map(|&g| head_axis.iter().map(move |&h| (g, h))).map(|(g, h)| f(g, h)).collect();
        Self::new(gate_axis, head_axis, blade)
    }

    pub fn gate_axis(&self) -> &[f64] {
        &self.gate_axis
    }

    pub fn head_axis(&self) -> &[f64] {
        &self.head_axis
    }

    pub fn node(&self, gi: usize, hi: usize) -> f64 {
        self.blade[gi * self.head_axis.len() + hi]
    }

    pub fn lookup(&self, gate_position: f64, h_net: f64) -> f64 {
        let (g0, tg) = bracket(&self.gate_axis, gate_position);
        let (h0, th) = bracket(&self.head_axis, h_net);
        let v00 = self.node(g0, h0);
        let v01 = self.node(g0, h0 + 1);
        let v10 = self.node(g0 + 1, h0);
        let v11 = self.node(g0 + 1, h0 + 1);
        let low = v00 + (v01 - v00) * th;
        let high = v10 + (v11 - v10) * th;
        low + (high - low) * tg
    }

    /// Reads the cam CSV layout: the header row holds head-axis values after a
    /// leading label cell; each body row is a gate value followed by blade
    /// positions.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ControlError> {
        let mut rdr =
            csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
        let mut rows = rdr.records();
        let header = rows.next().ok_or_else(|| ControlError::MalformedCam("empty cam file".into()))??;
        let parse = |s: &str, line: usize| {
            s.parse::<f64>().map_err(|e| ControlError::CamCsvValue { line, msg: format!("{s:?}: {e}") })
        };
        let head_axis = header.iter().skip(1).map(|s| parse(s, 1)).collect::<Result<Vec<_>, _>>()?;
        let mut gate_axis = Vec::new();
        let mut blade = Vec::new();
        for (i, rec) in rows.enumerate() {
            let rec = rec?;
            let line = i + 2;
            let mut cells = rec.iter();
            let gate = cells.next().ok_or(ControlError::CamCsvValue { line, msg: "empty row".into() })?;
            gate_axis.push(parse(gate, line)?);
            let values = cells.map(|s| parse(s, line)).collect::<Result<Vec<_>, _>>()?;
            if values.len() != head_axis.len() {
                return Err(ControlError::CamCsvValue {
                    line,
                    msg: format!("expected {} blade values, found {}", head_axis.len(), values.len()),
                });
            }
            blade.extend(values);
        }
        Self::new(gate_axis, head_axis, blade)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ControlError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["gate\\head".to_string()];
        header.extend(self.head_axis.iter().map(|h| h.to_string()));
        w.write_record(&header)?;
        for (gi, g) in self.gate_axis.iter().enumerate() {
            let mut row = vec![g.to_string()];
            row.extend((0..self.head_axis.len()).map(|hi| self.node(gi, hi).to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Lower node index and fractional position, clamped to the axis ends.
fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    if x <= axis[0] {
        return (0, 0.0);
    }
    if x >= axis[last] {
        return (last - 1, 1.0);
    }
    let upper = axis.partition_point(|&a| a <= x).min(last);
    let lower = upper - 1;
    (lower, (x - axis[lower]) / (axis[upper] - axis[lower]))
}

/// Biased blade command, clamped to the blade's travel.
pub fn blade_command(bp_cam: f64, bp_bias: f64) -> f64 {
    (bp_cam + bp_bias).clamp(0.0, 100.0)
}

/// Moves `previous` toward `target` by at most `max_step`.
pub fn rate_limit(target: f64, previous: f64, max_step: f64) -> f64 {
    target.clamp(previous - max_step, previous + max_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plane_cam() -> CamGrid {
        CamGrid::from_fn(vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0], vec![24.0, 28.0, 32.0, 36.0, 40.0], |g, h| {
            0.3 * g + 0.5 * h
        })
        .unwrap()
    }

    #[test]
    fn exact_at_nodes() {
        let cam =
            CamGrid::new(vec![0.0, 50.0, 100.0], vec![20.0, 40.0], vec![10.0, 12.0, 40.0, 47.0, 80.0, 71.0]).unwrap();
        for (gi, &g) in cam.gate_axis().iter().enumerate() {
            for (hi, &h) in cam.head_axis().iter().enumerate() {
                assert_eq!(cam.lookup(g, h), cam.node(gi, hi));
            }
        }
    }

    #[test]
    fn reproduces_plane() {
        let cam = plane_cam();
        for &(g, h) in &[(13.7, 25.1), (55.5, 33.9), (99.9, 39.99), (41.0, 24.0), (0.5, 36.2)] {
            let expect = 0.3 * g + 0.5 * h;
            assert!((cam.lookup(g, h) - expect).abs() < 1e-12, "{g} {h}");
        }
    }

    #[test]
    fn clamps_outside_grid() {
        let cam = plane_cam();
        assert_eq!(cam.lookup(110.0, 30.0), cam.lookup(100.0, 30.0));
        assert_eq!(cam.lookup(-5.0, 30.0), cam.lookup(0.0, 30.0));
        assert_eq!(cam.lookup(50.0, 10.0), cam.lookup(50.0, 24.0));
        assert_eq!(cam.lookup(500.0, 500.0), cam.node(5, 4));
    }

    #[test]
    fn rejects_malformed_grids() {
        assert!(CamGrid::new(vec![0.0], vec![1.0, 2.0], vec![1.0, 2.0]).is_err());
        assert!(CamGrid::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![1.0; 4]).is_err());
        assert!(CamGrid::new(vec![0.0, 1.0], vec![2.0, 1.0], vec![1.0; 4]).is_err());
        assert!(CamGrid::new(vec![0.0, 1.0], vec![1.0, 2.0], vec![1.0; 3]).is_err());
        assert!(CamGrid::new(vec![0.0, 1.0], vec![1.0, 2.0], vec![1.0, 2.0, 3.0, 101.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let text = "gate\\head,30,40\n0,5,6\n100,75,80\n";
        let cam = CamGrid::from_csv(text.as_bytes()).unwrap();
        assert_eq!(cam.head_axis(), &[30.0, 40.0]);
        assert_eq!(cam.gate_axis(), &[0.0, 100.0]);
        assert_eq!(cam.lookup(100.0, 40.0), 80.0);
        let mut out = Vec::new();
        cam.write_csv(&mut out).unwrap();
        assert_eq!(CamGrid::from_csv(out.as_slice()).unwrap(), cam);

        let short = "g,30,40\n0,5\n";
        assert!(matches!(CamGrid::from_csv(short.as_bytes()), Err(ControlError::CamCsvValue { line: 2, .. })));
        let junk = "g,30,x\n";
        assert!(CamGrid::from_csv(junk.as_bytes()).is_err());
    }

    #[test]
    fn blade_command_examples() {
        assert_eq!(blade_command(60.0, 0.0), 60.0);
        assert_eq!(blade_command(60.0, 10.0), 70.0);
        assert_eq!(blade_command(95.0, 10.0), 100.0);
        assert_eq!(blade_command(3.0, -10.0), 0.0);
        assert_eq!(rate_limit(70.0, 60.0, 1.0), 61.0);
        assert_eq!(rate_limit(59.5, 60.0, 1.0), 59.5);
    }

    proptest! {
        #[test]
        fn lookup_is_continuous(g in -10.0f64..110.0, h in 20.0f64..44.0) {
            let cam = CamGrid::from_fn(
                vec![0.0, 25.0, 50.0, 75.0, 100.0],
                vec![24.0, 30.0, 36.0, 42.0],
                |g, h| (0.7 * g + 0.02 * g * h - 0.3 * h).clamp(0.0, 100.0),
            ).unwrap();
            let a = cam.lookup(g, h);
            prop_assert!((cam.lookup(g + 1e-9, h) - a).abs() < 1e-6);
            prop_assert!((cam.lookup(g, h + 1e-9) - a).abs() < 1e-6);
        }

        #[test]
        fn bias_symmetry(b in 0.0f64..100.0, bias in -20.0f64..20.0) {
            let up = blade_command(b, bias);
            prop_assume!(b + bias > 0.0 && b + bias < 100.0);
            prop_assert!((blade_command(up, -bias) - b).abs() < 1e-12);
        }
    }
}

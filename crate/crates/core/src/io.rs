//! File formats: scenario JSON in, trajectory CSV and report JSON out.
//!
//! Trajectory CSV has one header row, then one row per sample: `t`, followed
//! by a block per agent `a{i}_R00 .. a{i}_R22, a{i}_wx, a{i}_wy, a{i}_wz,
//! a{i}_err_frob, a{i}_phi, a{i}_e_norm, a{i}_V`. Floats use the shortest
//! representation that parses back to the same value, so files round-trip
//! exactly and identical runs give identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::simulator::{AgentSample, TrajectoryLog};
use crate::so3::{Matrix3, Vector3};

/// Per-agent column suffixes, in file order.
pub const AGENT_COLUMNS: [&str; 16] =
    ["R00", "R01", "R02", "R10", "R11", "R12", "R20", "R21", "R22", "wx", "wy", "wz", "err_frob", "phi", "e_norm", "V"];

pub fn csv_header(n_agents: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for a in 1..=n_agents {
        h.extend(AGENT_COLUMNS.iter().map(|c| format!("a{a}_{c}")));
    }
    h
}

fn csv_err(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::Parse(e.to_string()),
    }
}

pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(log.n_agents)).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(1 + 16 * log.n_agents);
    for (t, samples) in log.times.iter().zip(&log.samples) {
        row.clear();
        row.push(t.to_string());
        for s in samples {
            row.extend(s.r.to_row_major().iter().map(f64::to_string));
            row.extend([s.w.x, s.w.y, s.w.z, s.err_frob, s.phi, s.e_norm, s.v].iter().map(f64::to_string));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv_file(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectory_csv(log, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Samples recovered from a trajectory CSV. The disturbance norm is not
/// stored, so `h_norm` is always `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTrajectory {
    pub n_agents: usize,
    pub times: Vec<f64>,
    pub samples: Vec<Vec<AgentSample>>,
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<CsvTrajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.is_empty() || header[0] != "t" || !(header.len() - 1).is_multiple_of(16) {
        return Err(Error::Parse(format!("trajectory header has {} columns, expected 1 + 16 per agent", header.len())));
    }
    let n_agents = (header.len() - 1) / 16;
    if header != csv_header(n_agents) {
        return Err(Error::Parse("trajectory header column names do not match".into()));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>().map_err(|e| Error::Parse(format!("row {}, column '{}': {e}", line + 2, header[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        times.push(vals[0]);
        samples.push(
            vals[1..]
                .chunks_exact(16)
                .map(|b| AgentSample {
                    r: Matrix3([[b[0], b[1], b[2]], [b[3], b[4], b[5]], [b[6], b[7], b[8]]]),
                    w: Vector3::new(b[9], b[10], b[11]),
                    err_frob: b[12],
                    phi: b[13],
                    e_norm: b[14],
                    v: b[15],
                    h_norm: None,
                })
                .collect(),
        );
    }
    Ok(CsvTrajectory { n_agents, times, samples })
}

pub fn read_trajectory_csv_file(path: &Path) -> Result<CsvTrajectory> {
    read_trajectory_csv(fs::File::open(path)?)
}

/// Pretty JSON with keys in declaration order and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json_file<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_scenario_file(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    Scenario::from_json(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Simulator;

    fn short_log() -> TrajectoryLog {
        let mut s = Scenario::eight_agent_default();
        s.integration.t_end = 0.05;
        s.integration.log_stride = 10;
        Simulator::new(&s).unwrap().run().unwrap()
    }

    #[test]
    fn header_layout() {
        let h = csv_header(2);
        assert_eq!(h.len(), 33);
        assert_eq!(h[1], "a1_R00");
        assert_eq!(h[16], "a1_V");
        assert_eq!(h[17], "a2_R00");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let log = short_log();
        let mut buf = Vec::new();
        write_trajectory_csv(&log, &mut buf).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.n_agents, 8);
        assert_eq!(back.times, log.times);
        for (a, b) in back.samples.iter().flatten().zip(log.samples.iter().flatten()) {
            assert_eq!(a.r, b.r);
            assert_eq!(a.v, b.v);
            assert_eq!(a.h_norm, None);
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let mut log = short_log();
        log.times.clear();
        log.samples.clear();
        let mut buf = Vec::new();
        write_trajectory_csv(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_trajectory_csv(text.as_bytes()).unwrap().times.is_empty());
    }

    #[test]
    fn rejects_bad_header_and_cells() {
        assert!(matches!(read_trajectory_csv("t,x\n1,2\n".as_bytes()), Err(Error::Parse(_))));
        let mut h = csv_header(1).join(",");
        h.push('\n');
        h.push_str(&["0"; 16].join(","));
        h.push_str(",oops\n");
        let err = read_trajectory_csv(h.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("a1_V"), "{err}");
    }
}

//! Per-tick trajectory logging to CSV.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flight::SimState;
use crate::geom::Quat;
use crate::robot::{Joints, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub q_body: Quat,
    pub omega_body: [f64; 3],
    pub joints: Joints,
    pub reward: f64,
}

impl TraceRow {
    pub fn from_state(s: &SimState, reward: f64) -> Self {
        Self {
            time: s.time,
            q_body: s.q_body,
            omega_body: [s.omega_body.x, s.omega_body.y, s.omega_body.z],
            joints: s.positions(),
            reward,
        }
    }
}

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = ["time", "qw", "qx", "qy", "qz", "wx", "wy", "wz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..NUM_JOINTS).map(|k| format!("joint{k}")));
    h.push("reward".into());
    h
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header())?;
    for r in rows {
        let mut rec: Vec<String> = Vec::with_capacity(9 + NUM_JOINTS);
        rec.push(r.time.to_string());
        rec.extend(r.q_body.to_array().iter().map(|v| v.to_string()));
        rec.extend(r.omega_body.iter().map(|v| v.to_string()));
        rec.extend(r.joints.iter().map(|v| v.to_string()));
        rec.push(r.reward.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("trace", e))?;
    Ok(())
}

pub fn save_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(std::io::BufWriter::new(f), rows)
}

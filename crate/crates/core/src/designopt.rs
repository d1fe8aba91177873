//! Grid search over the design space with weighted min-max scoring.
//!
//! Grid order is lexicographic over `l_body, w_body_f, w_body_b, l_upper,
//! l_lower, spring_k` with the last dimension varying fastest. Results are
//! always reported in grid order regardless of which worker finished first.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flight::Axis;
use crate::jump::{run_forward_jump, run_vertical_jump, JumpConfig, JumpSequence};
use crate::linkage::LegGeometry;
use crate::primitives::{reorientation_scores, ReorientationConfig};
use crate::robot::{build_model, DesignParams};

pub const METRIC_NAMES: [&str; 7] =
    ["h_max", "h_y", "d_max", "pitch_err", "theta_roll", "theta_pitch", "theta_yaw"];

/// Inclusive search bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

pub const L_BODY: Bounds = Bounds { min: 0.4, max: 1.0 };
pub const W_BODY: Bounds = Bounds { min: 0.2, max: 0.6 };
pub const L_UPPER: Bounds = Bounds { min: 0.10, max: 0.30 };
pub const L_LOWER: Bounds = Bounds { min: 0.15, max: 0.45 };
pub const SPRING_K: Bounds = Bounds { min: 600.0, max: 1000.0 };

/// One grid dimension: a fixed value, a linear range, or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dim {
    Fixed(f64),
    Range { min: f64, max: f64, steps: usize },
    Values(Vec<f64>),
}

impl Dim {
    pub fn values(&self, name: &str, bounds: &Bounds) -> Result<Vec<f64>> {
        let v = match self {
            Dim::Fixed(x) => vec![*x],
            Dim::Range { min, max, steps } => {
                if *steps < 2 {
                    return Err(Error::Config(format!("{name}: steps must be >= 2")));
                }
                if !(min <= max) {
                    return Err(Error::Config(format!("{name}: empty range")));
                }
                (0..*steps)
                    .map(|k| min + (max - min) * k as f64 / (*steps - 1) as f64)
                    .collect()
            }
            Dim::Values(v) => v.clone(),
        };
        if v.is_empty() {
            return Err(Error::Config(format!("{name}: no values")));
        }
        let tol = 1e-9;
        if v.iter().any(|x| !(x.is_finite() && *x >= bounds.min - tol && *x <= bounds.max + tol)) {
            return Err(Error::Config(format!(
                "{name}: values must lie in [{}, {}]",
                bounds.min, bounds.max
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub l_body: Dim,
    pub w_body_f: Dim,
    pub w_body_b: Dim,
    /// `l1 == l2`.
    pub l_upper: Dim,
    /// `l3 == l4`.
    pub l_lower: Dim,
    pub spring_k: Dim,
    /// Adds each design value to its dimension so the built robot is a grid point.
    pub include_design: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::body(3)
    }
}

impl GridSpec {
    /// Full search space at 5 steps per dimension.
    pub fn full() -> Self {
        let r = |b: Bounds| Dim::Range { min: b.min, max: b.max, steps: 5 };
        Self {
            l_body: r(L_BODY),
            w_body_f: r(W_BODY),
            w_body_b: r(W_BODY),
            l_upper: r(L_UPPER),
            l_lower: r(L_LOWER),
            spring_k: r(SPRING_K),
            include_design: true,
        }
    }

    /// Body dimensions varied over `steps` values each, legs at the design.
    pub fn body(steps: usize) -> Self {
        let d = DesignParams::design();
        let r = |b: Bounds| Dim::Range { min: b.min, max: b.max, steps };
        Self {
            l_body: r(L_BODY),
            w_body_f: r(W_BODY),
            w_body_b: r(W_BODY),
            l_upper: Dim::Fixed(d.leg.l1),
            l_lower: Dim::Fixed(d.leg.l3),
            spring_k: Dim::Fixed(d.leg.spring_k),
            include_design: false,
        }
    }
}

/// Full Cartesian product in grid order; the non-searched parameters come
/// from `base`.
pub fn enumerate_grid(spec: &GridSpec, base: &DesignParams) -> Result<Vec<DesignParams>> {
    let d = DesignParams::design();
    let dims = [
        ("l_body", &spec.l_body, L_BODY, d.l_body),
        ("w_body_f", &spec.w_body_f, W_BODY, d.w_body_f),
        ("w_body_b", &spec.w_body_b, W_BODY, d.w_body_b),
        ("l_upper", &spec.l_upper, L_UPPER, d.leg.l1),
        ("l_lower", &spec.l_lower, L_LOWER, d.leg.l3),
        ("spring_k", &spec.spring_k, SPRING_K, d.leg.spring_k),
    ];
    let mut axes = Vec::with_capacity(dims.len());
    for (name, dim, bounds, design) in dims {
        let mut v = dim.values(name, &bounds)?;
        if spec.include_design {
            match v.iter_mut().find(|x| (**x - design).abs() < 1e-9) {
                Some(x) => *x = design,
                None => v.push(design),
            }
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        axes.push(v);
    }
    let total: usize = axes.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut pick = [0.0; 6];
        for (k, axis) in axes.iter().enumerate().rev() {
            pick[k] = axis[rem % axis.len()];
            rem /= axis.len();
        }
        let mut p = *base;
        p.l_body = pick[0];
        p.w_body_f = pick[1];
        p.w_body_b = pick[2];
        p.leg = LegGeometry {
            spring_rest: base.leg.spring_rest,
            ..LegGeometry::diamond(base.leg.l0, pick[3], pick[4], pick[5])
        };
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub w_hmax: f64,
    pub w_hy: f64,
    pub w_dmax: f64,
    pub w_pitch: f64,
    pub w_roll: f64,
    pub w_pitch_reo: f64,
    pub w_yaw: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            w_hmax: 4.0,
            w_hy: 3.0,
            w_dmax: 3.0,
            w_pitch: -1.0,
            w_roll: 2.0,
            w_pitch_reo: 2.0,
            w_yaw: 1.0,
        }
    }
}

impl ScoreWeights {
    pub fn zero() -> Self {
        Self {
            w_hmax: 0.0,
            w_hy: 0.0,
            w_dmax: 0.0,
            w_pitch: 0.0,
            w_roll: 0.0,
            w_pitch_reo: 0.0,
            w_yaw: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.w_hmax,
            self.w_hy,
            self.w_dmax,
            self.w_pitch,
            self.w_roll,
            self.w_pitch_reo,
            self.w_yaw,
        ]
    }
}

/// Raw per-point metrics in `METRIC_NAMES` order. Reorientation angles are
/// magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    pub h_max: f64,
    pub h_y: f64,
    pub d_max: f64,
    pub pitch_err: f64,
    pub theta_roll: f64,
    pub theta_pitch: f64,
    pub theta_yaw: f64,
    pub takeoff_rates: [f64; 3],
    /// Axes whose reorientation run self-collided (scored 0).
    pub collided: Vec<Axis>,
}

impl RawMetrics {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.h_max,
            self.h_y,
            self.d_max,
            self.pitch_err,
            self.theta_roll,
            self.theta_pitch,
            self.theta_yaw,
        ]
    }
}

/// Min-max normalizes each column over the rows that are `Some`; a column
/// with no spread maps to 0.5.
pub fn normalize(rows: &[Option<[f64; 7]>]) -> Vec<Option<[f64; 7]>> {
    let mut lo = [f64::INFINITY; 7];
    let mut hi = [f64::NEG_INFINITY; 7];
    for r in rows.iter().flatten() {
        for k in 0..7 {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    rows.iter()
        .map(|r| {
            r.map(|r| {
                std::array::from_fn(|k| {
                    let span = hi[k] - lo[k];
                    if span > 0.0 {
                        ((r[k] - lo[k]) / span).clamp(0.0, 1.0)
                    } else {
                        0.5
                    }
                })
            })
        })
        .collect()
}

pub fn weighted_score(normalized: &[f64; 7], w: &ScoreWeights) -> f64 {
    normalized.iter().zip(w.as_array()).map(|(n, w)| n * w).sum()
}

/// Normalized metrics and scores for every row; failed rows stay `None`.
pub fn score(rows: &[Option<[f64; 7]>], w: &ScoreWeights) -> Vec<Option<([f64; 7], f64)>> {
    normalize(rows)
        .into_iter()
        .map(|n| n.map(|n| (n, weighted_score(&n, w))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimsConfig {
    pub jump: JumpConfig,
    pub reorientation: ReorientationConfig,
    /// Forward-jump lean, rad.
    pub lean: f64,
    pub seed: u64,
}

impl Default for SimsConfig {
    fn default() -> Self {
        Self {
            jump: JumpConfig::default(),
            reorientation: ReorientationConfig::default(),
            lean: 45f64.to_radians(),
            seed: 0,
        }
    }
}

/// All simulations for one design point.
pub fn evaluate_point(p: &DesignParams, sims: &SimsConfig, index: usize) -> Result<RawMetrics> {
    let model = build_model(p)?;
    let vertical = run_vertical_jump(&model, &JumpSequence::vertical(), &sims.jump)?;
    let jump_cfg = JumpConfig {
        seed: sims.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ..sims.jump
    };
    let forward = run_forward_jump(&model, &JumpSequence::forward(sims.lean), &jump_cfg)?;
    let reo = reorientation_scores(&model, &sims.reorientation)?;
    let collided = Axis::ALL
        .iter()
        .zip(&reo)
        .filter(|(_, r)| r.collided)
        .map(|(a, _)| *a)
        .collect();
    let m = RawMetrics {
        h_max: vertical.h_max,
        h_y: forward.h_y,
        d_max: forward.d_max,
        pitch_err: forward.pitch_err,
        theta_roll: reo[0].theta.abs(),
        theta_pitch: reo[1].theta.abs(),
        theta_yaw: reo[2].theta.abs(),
        takeoff_rates: forward.takeoff_rates,
        collided,
    };
    if m.as_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("grid metrics"));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub index: usize,
    pub metrics: Option<RawMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub index: usize,
    pub params: DesignParams,
    pub raw: Option<RawMetrics>,
    pub error: Option<String>,
    pub normalized: Option<[f64; 7]>,
    pub score: Option<f64>,
}

fn read_journal(path: &Path) -> Result<BTreeMap<usize, PointOutcome>> {
    let mut done = BTreeMap::new();
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(Error::io(path, e)),
    };
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from an interrupted run is simply redone
        if let Ok(o) = serde_json::from_str::<PointOutcome>(&line) {
            done.insert(o.index, o);
        }
    }
    Ok(done)
}

/// Evaluates every grid point in parallel. With a journal path, finished
/// points are appended as JSON lines and skipped on the next run.
pub fn run_grid(
    grid: &[DesignParams],
    sims: &SimsConfig,
    weights: &ScoreWeights,
    journal: Option<&Path>,
) -> Result<Vec<GridResult>> {
    let mut done = match journal {
        Some(p) => read_journal(p)?,
        None => BTreeMap::new(),
    };
    done.retain(|k, _| *k < grid.len());
    let sink = match journal {
        Some(p) => Some(Mutex::new(BufWriter::new(
            OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?,
        ))),
        None => None,
    };
    let pending: Vec<usize> = (0..grid.len()).filter(|i| !done.contains_key(i)).collect();
    let fresh: Vec<Result<PointOutcome>> = pending
        .par_iter()
        .map(|&i| {
            let o = match evaluate_point(&grid[i], sims, i) {
                Ok(m) => PointOutcome { index: i, metrics: Some(m), error: None },
                Err(e) => PointOutcome { index: i, metrics: None, error: Some(e.to_string()) },
            };
            if let Some(sink) = &sink {
                let line = serde_json::to_string(&o)?;
                let mut w = sink.lock().expect("journal writer poisoned");
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io("journal", e))?;
            }
            Ok(o)
        })
        .collect();
    for o in fresh {
        let o = o?;
        done.insert(o.index, o);
    }
    let rows: Vec<Option<[f64; 7]>> = (0..grid.len())
        .map(|i| done[&i].metrics.as_ref().map(RawMetrics::as_array))
        .collect();
    let scored = score(&rows, weights);
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let o = &done[&i];
            GridResult {
                index: i,
                params: *p,
                raw: o.metrics.clone(),
                error: o.error.clone(),
                normalized: scored[i].map(|s| s.0),
                score: scored[i].map(|s| s.1),
            }
        })
        .collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results_csv<W: Write>(out: W, results: &[GridResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "index", "l_body", "w_body_f", "w_body_b", "l1", "l2", "l3", "l4", "spring_k", "mass_leg",
        "mass_electronics", "mass_motors",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(METRIC_NAMES.iter().map(|m| m.to_string()));
    header.extend(METRIC_NAMES.iter().map(|m| format!("norm_{m}")));
    header.extend(["score", "collided", "error"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in results {
        let p = &r.params;
        let mut rec = vec![
            r.index.to_string(),
            p.l_body.to_string(),
            p.w_body_f.to_string(),
            p.w_body_b.to_string(),
            p.leg.l1.to_string(),
            p.leg.l2.to_string(),
            p.leg.l3.to_string(),
            p.leg.l4.to_string(),
            p.leg.spring_k.to_string(),
            p.mass_leg.to_string(),
            p.mass_electronics.to_string(),
            p.mass_motors.to_string(),
        ];
        let raw = r.raw.as_ref().map(RawMetrics::as_array);
        rec.extend((0..7).map(|k| cell(raw.map(|a| a[k]))));
        rec.extend((0..7).map(|k| cell(r.normalized.map(|a| a[k]))));
        rec.push(cell(r.score));
        let collided = r
            .raw
            .as_ref()
            .map(|m| m.collided.iter().map(|a| a.name()).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        rec.push(collided);
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("grid results", e))?;
    Ok(())
}

/// Pivot of mean reorientation angle (rad) about `axis`: rows keyed by
/// `(l_body, w_body_b)`, columns by `w_body_f`. Failed points are skipped.
pub fn write_heatmap<W: Write>(out: W, results: &[GridResult], axis: Axis) -> Result<()> {
    let key = |x: f64| x.to_bits();
    let mut cols: Vec<f64> = results.iter().map(|r| r.params.w_body_f).collect();
    cols.sort_by(f64::total_cmp);
    cols.dedup();
    let mut cells: BTreeMap<(u64, u64), BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    let mut row_keys: Vec<(f64, f64)> = Vec::new();
    for r in results {
        let Some(m) = &r.raw else { continue };
        let v = [m.theta_roll, m.theta_pitch, m.theta_yaw][axis.index()];
        let rk = (key(r.params.l_body), key(r.params.w_body_b));
        if !cells.contains_key(&rk) {
            row_keys.push((r.params.l_body, r.params.w_body_b));
        }
        let e = cells.entry(rk).or_default().entry(key(r.params.w_body_f)).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    row_keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["l_body".to_string(), "w_body_b".to_string()];
    header.extend(cols.iter().map(|c| format!("w_body_f={c}")));
    w.write_record(&header)?;
    for (l, wb) in row_keys {
        let row = &cells[&(key(l), key(wb))];
        let mut rec = vec![l.to_string(), wb.to_string()];
        rec.extend(cols.iter().map(|c| {
            row.get(&key(*c)).map(|(s, n)| (s / *n as f64).to_string()).unwrap_or_default()
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("heatmap", e))?;
    Ok(())
}

/// Writes `grid_results.csv` and one `heatmap_<axis>.csv` per axis.
pub fn write_outputs(dir: &Path, results: &[GridResult]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("grid_results.csv");
    write_results_csv(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), results)?;
    for axis in Axis::ALL {
        let path = dir.join(format!("heatmap_{}.csv", axis.name()));
        write_heatmap(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), results, axis)?;
    }
    Ok(())
}

//! File formats.
//!
//! Trajectories are CSV with header `frame,agent,x,y[,z]` (positions) or
//! `frame,agent,phase`, one row per frame and agent. Velocities are not
//! stored; they are rebuilt by forward differences on load. Everything else is
//! JSON, CSV or TOML as documented on each function.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::abm::{AbmModel, CoefficientTensor, System};
use crate::error::{Error, Result};
use crate::infer::{DurationRow, EffectTrace, GcMatrix};
use crate::metrics::Summary;
use crate::series::{CausalGraph, SeriesKind, TrajectorySeries};
use crate::train::LossBreakdown;

pub const CHECKPOINT_FORMAT: &str = "abmgc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest round-trip representation.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0);
        parse_err(path, line, e.message().to_string())
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Read a trajectory or phase CSV. The kind follows from the header; `dt` is
/// the sampling interval in seconds.
pub fn read_series(path: &Path, dt: f64) -> Result<TrajectorySeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "frame" || header[1] != "agent" {
        return Err(parse_err(path, 1, "header must start with frame,agent"));
    }
    let value_cols: Vec<&str> = header[2..].iter().map(String::as_str).collect();
    let kind = match value_cols.as_slice() {
        ["phase"] => SeriesKind::Phase,
        ["x", "y"] | ["x", "y", "z"] => SeriesKind::Positional,
        _ => return Err(parse_err(path, 1, format!("unknown value columns {value_cols:?}"))),
    };
    let width = value_cols.len();
    let mut rows: BTreeMap<(usize, usize), (usize, Vec<f64>)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let index = |c: usize| -> Result<usize> {
            record[c].parse().map_err(|_| parse_err(path, line, format!("{} is not a nonnegative integer", header[c])))
        };
        let (frame, agent) = (index(0)?, index(1)?);
        let values = (2..record.len())
            .map(|c| match record[c].parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(path, line, format!("{} is not a finite number", header[c]))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some((first, _)) = rows.insert((frame, agent), (line, values)) {
            return Err(parse_err(path, line, format!("frame {frame} agent {agent} repeats line {first}")));
        }
    }
    let steps = rows.keys().map(|k| k.0 + 1).max().unwrap_or(0);
    let agents = rows.keys().map(|k| k.1 + 1).max().unwrap_or(0);
    if steps * agents != rows.len() {
        let missing = (0..steps).flat_map(|t| (0..agents).map(move |a| (t, a))).find(|k| !rows.contains_key(k));
        let (t, a) = missing.unwrap_or((0, 0));
        return Err(parse_err(path, 0, format!("frame {t} agent {a} is missing")));
    }
    if steps < 2 {
        return Err(Error::Length { needed: 2, got: steps });
    }
    let flat: Vec<f64> = rows.into_values().flat_map(|(_, v)| v).collect();
    match kind {
        SeriesKind::Phase => TrajectorySeries::from_phases(&flat, steps, agents, dt),
        SeriesKind::Positional => TrajectorySeries::from_positions(&flat, steps, agents, width, dt),
    }
}

/// Write positions (or phases) only, in the format [`read_series`] accepts.
pub fn write_series(path: &Path, series: &TrajectorySeries) -> Result<()> {
    let header: &[&str] = match (series.kind(), series.spatial()) {
        (SeriesKind::Phase, _) => &["frame", "agent", "phase"],
        (_, 2) => &["frame", "agent", "x", "y"],
        (_, 3) => &["frame", "agent", "x", "y", "z"],
        (_, s) => return Err(Error::Dimension(format!("cannot write {s}-dimensional positions"))),
    };
    let rows = (0..series.steps()).flat_map(|t| {
        (0..series.agents()).map(move |a| {
            let mut r = vec![t.to_string(), a.to_string()];
            r.extend(series.position(t, a).iter().map(|&v| num(v)));
            r
        })
    });
    write_rows(path, header, rows)
}

/// Ground-truth graph of a simulated trial. Kuramoto files also carry the
/// intrinsic frequencies the augmented model needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Kuramoto { p: usize, edges: Vec<Vec<i8>>, omega: Vec<f64> },
    Boid { p: usize, relations: Vec<Vec<i8>> },
}

impl GroundTruth {
    pub fn graph(&self) -> Result<CausalGraph> {
        let (p, edges) = match self {
            GroundTruth::Kuramoto { p, edges, .. } => (*p, edges),
            GroundTruth::Boid { p, relations } => (*p, relations),
        };
        let g = CausalGraph::new(edges.clone())?;
        if g.agents() != p {
            return Err(Error::Dimension(format!("ground truth declares p = {p} but holds {} rows", g.agents())));
        }
        Ok(g)
    }

    pub fn system(&self) -> System {
        match self {
            GroundTruth::Kuramoto { omega, .. } => System::Kuramoto { omega: omega.clone() },
            GroundTruth::Boid { .. } => System::Boid,
        }
    }

    pub fn signed(&self) -> bool {
        matches!(self, GroundTruth::Boid { .. })
    }
}

/// `t,i,k,u,j,q,value`: series step, target, lag, output dim, source agent,
/// source feature dim. The self block (j = i) is included.
pub fn write_coefficients(path: &Path, psi: &CoefficientTensor) -> Result<()> {
    let layout = &psi.layout;
    let mut rows = Vec::new();
    for (ti, &step) in psi.steps.iter().enumerate() {
        for i in 0..layout.agents {
            for k in 1..=psi.lags {
                for j in 0..layout.agents {
                    let cols = layout.columns(i, j);
                    let w = cols.len();
                    for (n, v) in psi.block(ti, i, k, j).into_iter().enumerate() {
                        let (u, q) = (n / w, n % w);
                        rows.push([step, i, k, u, j, q].map(|x| x.to_string()).into_iter().chain([num(v)]).collect::<Vec<_>>());
                    }
                }
            }
        }
    }
    write_rows(path, &["t", "i", "k", "u", "j", "q", "value"], rows)
}

/// GC matrices on disk: `strengths[i][j]` is the signed effect of `i` on
/// `j`, `binary` the thresholded graph, `signs` the aggregated signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcFile {
    pub p: usize,
    pub strengths: Vec<Vec<f64>>,
    pub binary: Vec<Vec<i8>>,
    pub signs: Vec<Vec<i8>>,
}

impl GcFile {
    pub fn new(gc: &GcMatrix, binary: &CausalGraph) -> Self {
        Self { p: gc.agents(), strengths: gc.strengths.clone(), binary: binary.edges().to_vec(), signs: gc.sign.clone() }
    }

    pub fn gc(&self) -> Result<GcMatrix> {
        let square = |m: usize, rows: &[Vec<f64>]| rows.len() == m && rows.iter().all(|r| r.len() == m);
        if !square(self.p, &self.strengths) || self.signs.len() != self.p || self.signs.iter().any(|r| r.len() != self.p) {
            return Err(Error::Dimension(format!("GC matrices are not {0}x{0}", self.p)));
        }
        let magnitude = self.strengths.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
        Ok(GcMatrix::from_parts(magnitude, self.signs.clone()))
    }

    pub fn graph(&self) -> Result<CausalGraph> {
        CausalGraph::new(self.binary.clone())
    }
}

/// `t,i,j,value` with `i` the source and `j` the target.
pub fn write_trace(path: &Path, trace: &EffectTrace) -> Result<()> {
    let p = trace.agents();
    let rows = trace.steps.iter().zip(&trace.values).flat_map(|(&t, m)| {
        (0..p).flat_map(move |i| (0..p).filter(move |&j| j != i).map(move |j| vec![t.to_string(), i.to_string(), j.to_string(), num(m[i][j])]))
    });
    write_rows(path, &["t", "i", "j", "value"], rows)
}

pub fn write_durations(path: &Path, rows: &[DurationRow]) -> Result<()> {
    let body = rows.iter().map(|r| {
        vec![r.bin.to_string(), r.source.to_string(), r.target.to_string(), num(r.positive_seconds), num(r.negative_seconds)]
    });
    write_rows(path, &["bin", "source", "target", "positive_seconds", "negative_seconds"], body)
}

pub fn write_history(path: &Path, history: &[LossBreakdown]) -> Result<()> {
    let body = history.iter().enumerate().map(|(e, l)| {
        vec![(e + 1).to_string(), num(l.total), num(l.prediction), num(l.sparsity), num(l.theory_guided), num(l.smoothing)]
    });
    write_rows(path, &["epoch", "total", "prediction", "sparsity", "theory_guided", "smoothing"], body)
}

/// `metric,mean,sd,count`; undefined metrics are written with empty cells.
pub fn write_summary(path: &Path, summary: &[(&str, Option<Summary>)]) -> Result<()> {
    let body = summary.iter().map(|(name, s)| match s {
        Some(s) => vec![name.to_string(), num(s.mean), num(s.sd), s.count.to_string()],
        None => vec![name.to_string(), String::new(), String::new(), "0".into()],
    });
    write_rows(path, &["metric", "mean", "sd", "count"], body)
}

/// Trained model with a format header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: AbmModel,
}

pub fn save_model(path: &Path, model: &AbmModel) -> Result<()> {
    write_json(path, &Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: model.clone() })
}

pub fn load_model(path: &Path) -> Result<AbmModel> {
    let c: Checkpoint = read_json(path)?;
    if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
        return Err(parse_err(path, 1, format!("unsupported checkpoint {} v{}", c.format, c.version)));
    }
    c.model.validate()?;
    Ok(c.model)
}

/// Header row of a CSV file.
pub fn csv_header(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    Ok(reader.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect())
}

/// Check that every row of a CSV has the expected header and numeric cells.
pub fn validate_csv(path: &Path, header: &[&str]) -> Result<usize> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let found: Vec<String> = reader.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if found != header {
        return Err(parse_err(path, 1, format!("expected header {}, found {}", header.join(","), found.join(","))));
    }
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for (c, cell) in record.iter().enumerate() {
            if !cell.is_empty() && cell.parse::<f64>().is_err() && !(header[c] == "metric") {
                return Err(parse_err(path, line, format!("{} is not numeric", header[c])));
            }
        }
        n += 1;
    }
    Ok(n)
}

/// Files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == extension))
        .collect();
    out.sort();
    Ok(out)
}

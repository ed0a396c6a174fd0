//! Files written by a run and the manifest that indexes them.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{Command, Format, RunConfig, RunReport};
use crate::error::{Error, Result};
use crate::model::{Compartment, Parameters, StateVector};
use crate::objectives::eval_pair;
use crate::simulate::{simulate, ControlGrid, TimeGrid, Trajectory};
use crate::sweep::{settings_hash, surface_export, sweep_with_mode, ParetoPoint, Surfaces, SweepMode};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// One row of `front.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRecord {
    pub index: usize,
    pub epsilon: f64,
    pub f1: f64,
    pub f2: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub constraint_violation: f64,
}

impl FrontRecord {
    pub fn from_point(index: usize, p: &ParetoPoint) -> Self {
        FrontRecord {
            index,
            epsilon: p.epsilon,
            f1: p.objectives.f1,
            f2: p.objectives.f2,
            converged: p.converged(),
            evaluations: p.evaluations,
            constraint_violation: p.constraint_violation,
        }
    }
}

pub fn read_front_csv(path: &Path) -> Result<Vec<FrontRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub target: f64,
    pub index: usize,
    pub epsilon: f64,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub generator: String,
    pub created_unix_seconds: u64,
    pub wall_seconds: f64,
    pub config: RunConfig,
    pub parameters: Parameters,
    pub initial_state: StateVector,
    pub settings_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<SliceEntry>,
    pub outputs: Vec<OutputEntry>,
}

struct Sink {
    dir: PathBuf,
    json: bool,
    outputs: Vec<OutputEntry>,
}

impl Sink {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(OutputEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn put_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        if self.json {
            let mut bytes = serde_json::to_vec_pretty(value)?;
            bytes.push(b'\n');
            self.put(rel, &bytes)?;
        }
        Ok(())
    }
}

fn csv_bytes<R: Serialize>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

fn controls_csv(grid: &TimeGrid, controls: &ControlGrid) -> Result<Vec<u8>> {
    csv_bytes(&["time", "u1", "u2"], grid.times().zip(controls.nodes()).map(|(t, c)| (t, c.u1, c.u2)))
}

fn states_header() -> Vec<&'static str> {
    std::iter::once("time").chain(Compartment::ALL.iter().map(|c| c.name())).collect()
}

fn states_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let rows = traj.grid.times().zip(&traj.states).map(|(t, s)| std::iter::once(t).chain(s.0).collect::<Vec<f64>>());
    csv_bytes(&states_header(), rows)
}

fn controls_json(grid: &TimeGrid, controls: &ControlGrid) -> Value {
    json!({
        "time": grid.times().collect::<Vec<_>>(),
        "u1": controls.nodes().iter().map(|c| c.u1).collect::<Vec<_>>(),
        "u2": controls.nodes().iter().map(|c| c.u2).collect::<Vec<_>>(),
    })
}

fn states_json(traj: &Trajectory) -> Value {
    let mut m = Map::new();
    m.insert("time".into(), json!(traj.grid.times().collect::<Vec<_>>()));
    for c in Compartment::ALL {
        m.insert(c.name().into(), json!(traj.states.iter().map(|s| s[c]).collect::<Vec<_>>()));
    }
    Value::Object(m)
}

fn surfaces_csv(s: &Surfaces) -> Result<Vec<u8>> {
    let rows = s.layers.iter().flat_map(|layer| {
        layer.values.iter().zip(&s.epsilons).flat_map(move |(row, &eps)| {
            row.iter().zip(&s.times).map(move |(&v, &t)| (layer.quantity.name(), eps, t, v))
        })
    });
    csv_bytes(&["quantity", "epsilon", "time", "value"], rows)
}

fn surfaces_json(s: &Surfaces) -> Value {
    let mut layers = Map::new();
    for layer in &s.layers {
        layers.insert(layer.quantity.name().into(), json!(layer.values));
    }
    json!({ "epsilon": s.epsilons, "time": s.times, "layers": layers })
}

/// Point written for one slice target: `slice_<target>/`.
fn slice_label(target: f64) -> String {
    format!("slice_{target}")
}

pub(super) fn execute(config: &RunConfig) -> Result<RunReport> {
    let started = Instant::now();
    let created_unix_seconds = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let command = config.command()?;
    let params = config.parameters()?;
    let initial = config.initial_state()?;
    let mut sink = Sink { dir: config.out.clone(), json: config.format == Format::Json, outputs: Vec::new() };
    std::fs::create_dir_all(&sink.dir).map_err(|e| Error::io(&sink.dir, e))?;
    let mut converged_points = None;
    let mut slices = Vec::new();

    match command {
        Command::Simulate => {
            let grid = TimeGrid::new(config.horizon, config.n_intervals)?;
            let controls = ControlGrid::constant(&grid, config.constant_control()?)?;
            let traj = simulate(&initial, &controls, &grid, &params)?;
            let pair = eval_pair(&traj, &grid)?;
            sink.put("controls.csv", &controls_csv(&grid, &controls)?)?;
            sink.put("states.csv", &states_csv(&traj)?)?;
            sink.put("objectives.csv", &csv_bytes(&["f1", "f2"], [(pair.f1, pair.f2)])?)?;
            sink.put_json("controls.json", &controls_json(&grid, &controls))?;
            sink.put_json("states.json", &states_json(&traj))?;
            sink.put_json("objectives.json", &pair)?;
        }
        Command::Sweep | Command::Slice => {
            let scenario = config.scenario()?;
            let mode = if config.parallel { SweepMode::Parallel } else { SweepMode::Sequential };
            let front = sweep_with_mode(&scenario, mode)?;
            let records: Vec<FrontRecord> =
                front.points.iter().enumerate().map(|(k, p)| FrontRecord::from_point(k, p)).collect();
            sink.put("front.csv", &csv_bytes(&["index", "epsilon", "f1", "f2", "converged", "evaluations", "constraint_violation"], &records)?)?;
            sink.put_json("front.json", &records)?;
            for (k, p) in front.points.iter().enumerate() {
                sink.put(&format!("controls_{k}.csv"), &controls_csv(&p.trajectory.grid, &p.controls)?)?;
                sink.put(&format!("states_{k}.csv"), &states_csv(&p.trajectory)?)?;
                sink.put_json(&format!("controls_{k}.json"), &controls_json(&p.trajectory.grid, &p.controls))?;
                sink.put_json(&format!("states_{k}.json"), &states_json(&p.trajectory))?;
            }
            let surfaces = surface_export(&front)?;
            sink.put("surfaces.csv", &surfaces_csv(&surfaces)?)?;
            sink.put_json("surfaces.json", &surfaces_json(&surfaces))?;
            converged_points = Some(front.converged_count());

            if command == Command::Slice {
                for &target in &config.slices {
                    let (k, p) = front
                        .at_or_above(target)
                        .ok_or_else(|| Error::invalid("slice target", format!("{target} exceeds every ε on the front")))?;
                    let dir = slice_label(target);
                    sink.put(&format!("{dir}/controls.csv"), &controls_csv(&p.trajectory.grid, &p.controls)?)?;
                    sink.put(&format!("{dir}/states.csv"), &states_csv(&p.trajectory)?)?;
                    sink.put(&format!("{dir}/point.csv"), &csv_bytes(&["index", "epsilon", "f1", "f2", "converged", "evaluations", "constraint_violation"], [&records[k]])?)?;
                    sink.put_json(&format!("{dir}/controls.json"), &controls_json(&p.trajectory.grid, &p.controls))?;
                    sink.put_json(&format!("{dir}/states.json"), &states_json(&p.trajectory))?;
                    slices.push(SliceEntry { target, index: k, epsilon: p.epsilon, dir });
                }
            }
        }
    }

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        generator: concat!("tbhiv ", env!("CARGO_PKG_VERSION")).to_string(),
        created_unix_seconds,
        wall_seconds: started.elapsed().as_secs_f64(),
        config: config.clone(),
        parameters: params,
        initial_state: initial,
        settings_hash: settings_hash(&config.solver),
        converged_points,
        slices,
        outputs: sink.outputs.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    let path = sink.dir.join("manifest.json");
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    let mut files: Vec<String> = sink.outputs.into_iter().map(|o| o.path).collect();
    files.push("manifest.json".into());
    Ok(RunReport {
        out: config.out.clone(),
        files,
        front: converged_points.map(|c| (config.n_front_points, c)),
    })
}

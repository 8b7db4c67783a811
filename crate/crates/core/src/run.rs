//! Scenario execution: builds components from a validated scenario, drives
//! the coupler and writes timeseries, snapshots, a run log and a manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::component::Registry;
use crate::coupling::{CoupledComponents, Coupler, WastePackageState};
use crate::meshfield::{build_structured_mesh, write_mff, write_vtk, MeshFieldError};
use crate::scenario::{load_document, validate_document, Diagnostic, OutputFormat, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario is not runnable ({} problem(s))", .0.len())]
    Invalid(Vec<Diagnostic>),
    #[error("no output directory: pass --out or set output.directory")]
    NoOutputDirectory,
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::Invalid(_) | RunError::NoOutputDirectory => EXIT_INVALID,
            RunError::Output { .. } => EXIT_ABORTED,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepRecord {
    pub index: usize,
    pub time: f64,
    pub dt: f64,
    pub sia_iterations: usize,
    pub sia_residual: f64,
    pub converged: bool,
    pub retries: usize,
    pub reflowed: bool,
}

/// Traceability record written next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub scenario: String,
    /// SHA-256 of the scenario file bytes, before overrides.
    pub scenario_sha256: String,
    pub overrides: Vec<String>,
    pub version: String,
    pub start_unix_ms: u128,
    pub end_unix_ms: u128,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub final_time: f64,
    pub max_ledger_imbalance: f64,
    pub steps: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Completed => EXIT_OK,
            RunStatus::Failed => EXIT_ABORTED,
        }
    }
}

/// Component configuration trees derived from a scenario: flow, transport,
/// chemistry. Chemistry receives the transport porosity.
pub fn component_configs(s: &Scenario) -> (Option<Value>, Value, Option<Value>) {
    let to_value = |v: Result<Value, serde_json::Error>| v.expect("config types serialize");
    let flow = s.flow.as_ref().map(|f| to_value(serde_json::to_value(f)));
    let transport = to_value(serde_json::to_value(&s.transport));
    let chemistry = s.chemistry.as_ref().map(|c| {
        let mut c = c.clone();
        c.porosity = Some(s.transport.porosity);
        to_value(serde_json::to_value(&c))
    });
    (flow, transport, chemistry)
}

/// Builds and initializes every component and the coupler.
pub fn prepare(s: &Scenario, registry: &Registry) -> Result<Coupler, Vec<Diagnostic>> {
    let one = |path: &str, msg: String| vec![Diagnostic::new(path, msg)];
    let mesh = Arc::new(build_structured_mesh(s.mesh.nx, s.mesh.ny, s.mesh.dx, s.mesh.dy).map_err(|e| one("mesh", e.to_string()))?);
    let (flow_cfg, transport_cfg, chem_cfg) = component_configs(s);
    let flow = match (s.flow_impl(), flow_cfg) {
        (Some(imp), Some(cfg)) => {
            Some(registry.create("flow", imp, mesh.clone(), &cfg).map_err(|e| one("flow", e.to_string()))?)
        }
        _ => None,
    };
    let transport = registry
        .create("transport", s.transport_impl(), mesh.clone(), &transport_cfg)
        .map_err(|e| one("transport", e.to_string()))?;
    let chemistry = match (s.chemistry_impl(), chem_cfg) {
        (Some(imp), Some(cfg)) => {
            Some(registry.create("chemistry", imp, mesh.clone(), &cfg).map_err(|e| one("chemistry", e.to_string()))?)
        }
        _ => None,
    };
    let packages = s
        .waste_packages
        .iter()
        .enumerate()
        .map(|(i, wp)| WastePackageState::from_config(wp, &s.transport.species).map_err(|e| one(&format!("wastePackages[{i}]"), e)))
        .collect::<Result<Vec<_>, _>>()?;
    Coupler::new(mesh, s.coupling.clone(), CoupledComponents { flow, transport, chemistry }, packages)
        .map_err(|e| one("coupling", e.to_string()))
}

/// Loads, overrides and fully validates a scenario.
pub fn load_scenario(path: &Path, overrides: &[String], registry: &Registry) -> Result<(Vec<u8>, Scenario, Coupler), RunError> {
    let (bytes, doc) = load_document(path, overrides)?;
    let scenario = validate_document(&doc, registry).map_err(RunError::Invalid)?;
    let coupler = prepare(&scenario, registry).map_err(RunError::Invalid)?;
    Ok((bytes, scenario, coupler))
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

struct Outputs {
    dir: PathBuf,
    formats: Vec<OutputFormat>,
    csv: Option<csv::Writer<BufWriter<fs::File>>>,
    log: BufWriter<fs::File>,
}

fn output_err(path: &Path, e: impl ToString) -> RunError {
    RunError::Output { path: path.display().to_string(), message: e.to_string() }
}

impl Outputs {
    fn open(dir: &Path, formats: &[OutputFormat]) -> Result<Self, RunError> {
        fs::create_dir_all(dir.join("snapshots")).map_err(|e| output_err(dir, e))?;
        let csv = if formats.contains(&OutputFormat::Csv) {
            let path = dir.join("timeseries.csv");
            let file = fs::File::create(&path).map_err(|e| output_err(&path, e))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            w.write_record(["time", "cell", "component", "value"]).map_err(|e| output_err(&path, e))?;
            Some(w)
        } else {
            None
        };
        let log_path = dir.join("run.log");
        let log = BufWriter::new(fs::File::create(&log_path).map_err(|e| output_err(&log_path, e))?);
        Ok(Outputs { dir: dir.to_path_buf(), formats: formats.to_vec(), csv, log })
    }

    fn record(&mut self, coupler: &Coupler, label: &str) -> Result<(), RunError> {
        let time = coupler.time();
        if let Some(w) = self.csv.as_mut() {
            let path = self.dir.join("timeseries.csv");
            let state = coupler.state();
            let cell_fields = std::iter::once(&state.conc).chain(state.minerals.as_ref()).chain(std::iter::once(&state.porosity));
            let t = time.to_string();
            for field in cell_fields {
                let nc = field.n_components();
                for (i, row) in field.values.chunks(nc).enumerate() {
                    let cell = i.to_string();
                    for (name, v) in field.component_names.iter().zip(row) {
                        w.write_record([t.as_str(), cell.as_str(), name.as_str(), v.to_string().as_str()])
                            .map_err(|e| output_err(&path, e))?;
                    }
                }
            }
        }
        self.snapshot(coupler, label)
    }

    fn snapshot(&self, coupler: &Coupler, label: &str) -> Result<(), RunError> {
        let doc = coupler.snapshot();
        let io = |p: &Path, e: MeshFieldError| output_err(p, e);
        if self.formats.contains(&OutputFormat::Mff) {
            let p = self.dir.join("snapshots").join(format!("{label}.mff"));
            write_mff(&p, &doc).map_err(|e| io(&p, e))?;
        }
        if self.formats.contains(&OutputFormat::Vtk) {
            let p = self.dir.join("snapshots").join(format!("{label}.vtk"));
            write_vtk(&p, &doc).map_err(|e| io(&p, e))?;
        }
        Ok(())
    }

    fn log_line(&mut self, line: &str) -> Result<(), RunError> {
        let path = self.dir.join("run.log");
        writeln!(self.log, "{line}").map_err(|e| output_err(&path, e))
    }

    fn close(mut self) -> Result<(), RunError> {
        if let Some(mut w) = self.csv.take() {
            let path = self.dir.join("timeseries.csv");
            w.flush().map_err(|e| output_err(&path, e))?;
        }
        let path = self.dir.join("run.log");
        self.log.flush().map_err(|e| output_err(&path, e))
    }
}

/// Writes `manifest.json` via a temporary file and rename.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    let target = dir.join("manifest.json");
    let tmp = dir.join("manifest.json.tmp");
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| output_err(&target, e))?;
    text.push('\n');
    fs::write(&tmp, text).map_err(|e| output_err(&tmp, e))?;
    fs::rename(&tmp, &target).map_err(|e| output_err(&target, e))
}

fn step_label(index: usize) -> String {
    format!("step_{index:06}")
}

/// Validates and runs a scenario file. `out_dir` falls back to
/// `output.directory`. A simulation abort still returns `Ok` with a failed
/// manifest; outputs written so far are kept.
pub fn run_scenario(
    path: &Path,
    out_dir: Option<&Path>,
    overrides: &[String],
    registry: &Registry,
) -> Result<RunManifest, RunError> {
    let start = unix_ms();
    let (bytes, scenario, mut coupler) = load_scenario(path, overrides, registry)?;
    let dir = match (out_dir, &scenario.output.directory) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => return Err(RunError::NoOutputDirectory),
    };
    let mut manifest = RunManifest {
        scenario: path.display().to_string(),
        scenario_sha256: hex::encode(Sha256::digest(&bytes)),
        overrides: overrides.to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        start_unix_ms: start,
        end_unix_ms: start,
        status: RunStatus::Completed,
        failure: None,
        final_time: 0.0,
        max_ledger_imbalance: coupler.ledger().max_relative_imbalance(),
        steps: Vec::new(),
        warnings: Vec::new(),
    };

    let mut out = Outputs::open(&dir, &scenario.output.formats)?;
    out.record(&coupler, &step_label(0))?;
    out.log_line(&format!("start mode={:?} dt={} tEnd={}", scenario.coupling.mode, scenario.coupling.dt, scenario.coupling.t_end))?;
    let cadence = scenario.output.cadence.max(1);
    while !coupler.is_finished() {
        match coupler.step() {
            Ok(report) => {
                out.log_line(&format!(
                    "step {} t={} dt={} iterations={} residual={:e} converged={} retries={} reflowed={} imbalance={:e}",
                    report.index,
                    report.time,
                    report.dt,
                    report.sia.iterations,
                    report.sia.residual,
                    report.sia.converged,
                    report.retries,
                    report.reflowed,
                    report.ledger_imbalance
                ))?;
                for w in &report.warnings {
                    out.log_line(&format!("warning step {}: {w}", report.index))?;
                    manifest.warnings.push(format!("step {}: {w}", report.index));
                }
                manifest.steps.push(StepRecord {
                    index: report.index,
                    time: report.time,
                    dt: report.dt,
                    sia_iterations: report.sia.iterations,
                    sia_residual: report.sia.residual,
                    converged: report.sia.converged,
                    retries: report.retries,
                    reflowed: report.reflowed,
                });
                manifest.max_ledger_imbalance = manifest.max_ledger_imbalance.max(report.ledger_imbalance);
                if report.index % cadence == 0 || coupler.is_finished() {
                    out.record(&coupler, &step_label(report.index))?;
                }
            }
            Err(e) => {
                log::error!("{e}");
                out.log_line(&format!("abort: {e}"))?;
                out.snapshot(&coupler, "last_good")?;
                manifest.status = RunStatus::Failed;
                manifest.failure = Some(e.to_string());
                break;
            }
        }
    }
    manifest.final_time = coupler.time();
    if let Err(e) = coupler.finalize() {
        manifest.warnings.push(format!("finalize: {e}"));
    }
    out.log_line(&format!("end status={:?} t={}", manifest.status, manifest.final_time))?;
    out.close()?;
    manifest.end_unix_ms = unix_ms();
    write_manifest(&dir, &manifest)?;
    Ok(manifest)
}

//! Scenario documents: a single JSON file describing mesh, components,
//! coupling, waste packages and outputs.

mod overrides;
mod validate;

pub use overrides::{apply_override, parse_override};
pub use validate::{validate_document, validate_file};

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chemistry::ChemistryConfig;
use crate::coupling::{CouplingConfig, WastePackageConfig};
use crate::flow::FlowConfig;
use crate::transport::TransportConfig;

pub const DEFAULT_FLOW_IMPL: &str = "darcy-reference";
pub const DEFAULT_TRANSPORT_IMPL: &str = "fv-reference";
pub const DEFAULT_CHEMISTRY_IMPL: &str = "equilibrium-reference";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    /// m
    pub dx: f64,
    /// m
    pub dy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Mff,
    Vtk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutputSpec {
    /// Write outputs every this many steps (and always at start and end).
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Default output directory when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_cadence() -> usize {
    1
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Mff]
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { cadence: default_cadence(), directory: None, formats: default_formats() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub mesh: MeshSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    pub transport: TransportConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chemistry: Option<ChemistryConfig>,
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub waste_packages: Vec<WastePackageConfig>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl Scenario {
    pub fn flow_impl(&self) -> Option<&str> {
        self.flow.as_ref().map(|f| f.implementation.as_deref().unwrap_or(DEFAULT_FLOW_IMPL))
    }

    pub fn transport_impl(&self) -> &str {
        self.transport.implementation.as_deref().unwrap_or(DEFAULT_TRANSPORT_IMPL)
    }

    pub fn chemistry_impl(&self) -> Option<&str> {
        self.chemistry.as_ref().map(|c| c.implementation.as_deref().unwrap_or(DEFAULT_CHEMISTRY_IMPL))
    }
}

/// A located problem in a scenario, e.g. `transport.porosity`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("override {key}: {message}")]
    Override { key: String, message: String },
}

/// Parses scenario bytes as JSON, reporting syntax errors with position.
pub fn parse_document(bytes: &[u8]) -> Result<Value, ScenarioError> {
    serde_json::from_slice(bytes).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads a scenario file and applies `key=value` overrides.
pub fn load_document(path: &Path, overrides: &[String]) -> Result<(Vec<u8>, Value), ScenarioError> {
    let bytes = std::fs::read(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    let mut doc = parse_document(&bytes)?;
    for text in overrides {
        let (key, value) = parse_override(text).map_err(|message| ScenarioError::Override { key: text.clone(), message })?;
        apply_override(&mut doc, &key, value).map_err(|message| ScenarioError::Override { key: key.clone(), message })?;
    }
    Ok((bytes, doc))
}

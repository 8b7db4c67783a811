//! The programming interface shared by every numerical component, and the
//! registry that maps `(application, implementation)` pairs to factories.
//!
//! Drivers only ever talk to `dyn NumericalComponent`; which code sits behind
//! a given application is decided by the registry lookup.

mod registry;

pub use registry::{Factory, Registry};

use serde_json::Value;

use crate::meshfield::{Field, MeshFieldError, Support};

/// Hierarchical key/value configuration handed to `initialize`.
pub type ConfigTree = Value;

#[derive(Debug, thiserror::Error)]
pub enum ComponentError {
    #[error("duplicate registration for ({application}, {implementation})")]
    DuplicateKey { application: String, implementation: String },
    #[error("unknown implementation ({application}, {implementation}); registered: {}", known.join(", "))]
    UnknownImplementation {
        application: String,
        implementation: String,
        known: Vec<String>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("field {0} is not a declared input")]
    UndeclaredInput(String),
    #[error("field {0} is not a declared output")]
    UndeclaredOutput(String),
    #[error("field {name} does not match its declaration: {reason}")]
    FieldMismatch { name: String, reason: String },
    #[error("component is not initialized")]
    NotInitialized,
    #[error("component has been finalized")]
    Finalized,
    #[error("computation failed: {0}")]
    Computation(String),
    #[error(transparent)]
    MeshField(#[from] MeshFieldError),
}

/// Outcome of a `compute_time_step` call.
///
/// `ok = false` is a soft failure: the caller may retry with a smaller step,
/// optionally the `suggested_dt`. An `ok` status may still carry a warning in
/// `message`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentStatus {
    pub ok: bool,
    pub message: String,
    pub suggested_dt: Option<f64>,
}

impl ComponentStatus {
    pub fn ok() -> Self {
        ComponentStatus { ok: true, message: String::new(), suggested_dt: None }
    }

    pub fn warning(message: impl Into<String>) -> Self {
        ComponentStatus { ok: true, message: message.into(), suggested_dt: None }
    }

    pub fn rejected(message: impl Into<String>, suggested_dt: Option<f64>) -> Self {
        let mut message = message.into();
        if message.is_empty() {
            message = "step rejected".into();
        }
        ComponentStatus { ok: false, message, suggested_dt }
    }
}

/// Name and shape of a field a component consumes or produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub support: Support,
    pub n_components: usize,
}

impl FieldDecl {
    pub fn new(name: impl Into<String>, support: Support, n_components: usize) -> Self {
        FieldDecl { name: name.into(), support, n_components }
    }

    pub fn accepts(&self, field: &Field, n_entities: usize) -> Result<(), ComponentError> {
        let mismatch = |reason: String| {
            Err(ComponentError::FieldMismatch { name: self.name.clone(), reason })
        };
        if field.support != self.support {
            return mismatch(format!("support {:?}, expected {:?}", field.support, self.support));
        }
        if field.n_components() != self.n_components {
            return mismatch(format!("{} components, expected {}", field.n_components(), self.n_components));
        }
        if field.values.len() != n_entities * self.n_components {
            return mismatch(format!("{} values, expected {}", field.values.len(), n_entities * self.n_components));
        }
        if field.values.iter().any(|v| !v.is_finite()) {
            return mismatch("non-finite values".into());
        }
        Ok(())
    }
}

/// Uniform interface for initialization, computation and data exchange.
///
/// Fields cross the interface by value: `set_input_field` takes ownership of
/// a copy and `get_output_field` returns a fresh copy.
pub trait NumericalComponent: Send {
    fn initialize(&mut self, config: &ConfigTree) -> Result<(), ComponentError>;
    fn declared_inputs(&self) -> Vec<FieldDecl>;
    fn declared_outputs(&self) -> Vec<FieldDecl>;
    fn set_input_field(&mut self, name: &str, field: Field) -> Result<(), ComponentError>;
    fn compute_time_step(&mut self, t: f64, dt: f64) -> Result<ComponentStatus, ComponentError>;
    fn get_output_field(&self, name: &str) -> Result<Field, ComponentError>;
    fn finalize(&mut self) -> Result<(), ComponentError>;
}

/// Tracks where a component is in its lifecycle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Lifecycle {
    #[default]
    Created,
    Ready,
    Finalized,
}

impl Lifecycle {
    pub fn require_ready(self) -> Result<(), ComponentError> {
        match self {
            Lifecycle::Ready => Ok(()),
            Lifecycle::Created => Err(ComponentError::NotInitialized),
            Lifecycle::Finalized => Err(ComponentError::Finalized),
        }
    }

    pub fn require_not_finalized(self) -> Result<(), ComponentError> {
        match self {
            Lifecycle::Finalized => Err(ComponentError::Finalized),
            _ => Ok(()),
        }
    }
}

/// Deserializes a config tree into a typed configuration.
pub fn parse_config<T: serde::de::DeserializeOwned>(config: &ConfigTree) -> Result<T, ComponentError> {
    serde_path_to_error::deserialize(config.clone()).map_err(|e| {
        let path = e.path().to_string();
        ComponentError::InvalidConfig(if path == "." { e.inner().to_string() } else { format!("{path}: {}", e.inner()) })
    })
}

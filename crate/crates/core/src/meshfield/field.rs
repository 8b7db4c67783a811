use serde::{Deserialize, Serialize};

use super::{Mesh, MeshFieldError};

/// Entities a field is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Support {
    Cells,
    Faces,
}

impl Support {
    pub fn entity_count(self, mesh: &Mesh) -> usize {
        match self {
            Support::Cells => mesh.n_cells(),
            Support::Faces => mesh.n_faces(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L2,
    LInf,
}

/// Named multi-component values on cells or faces.
///
/// Values are row-major: entity `e`, component `k` lives at
/// `values[e * n_components + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub name: String,
    pub support: Support,
    pub component_names: Vec<String>,
    pub values: Vec<f64>,
    /// s
    pub time: f64,
    pub unit: String,
}

impl Field {
    pub fn new(
        name: impl Into<String>,
        support: Support,
        component_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, MeshFieldError> {
        let name = name.into();
        if component_names.is_empty() {
            return Err(MeshFieldError::InvalidField(format!("field {name} has no components")));
        }
        if values.len() % component_names.len() != 0 {
            return Err(MeshFieldError::InvalidField(format!(
                "field {name}: {} values do not divide into {} components",
                values.len(),
                component_names.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MeshFieldError::InvalidField(format!(
                "field {name}: non-finite value at index {i}"
            )));
        }
        Ok(Field {
            name,
            support,
            component_names,
            values,
            time: 0.0,
            unit: String::new(),
        })
    }

    /// A zero-filled field sized for `mesh`.
    pub fn zeros(name: impl Into<String>, support: Support, component_names: Vec<String>, mesh: &Mesh) -> Self {
        let n = support.entity_count(mesh) * component_names.len();
        Field {
            name: name.into(),
            support,
            component_names,
            values: vec![0.0; n],
            time: 0.0,
            unit: String::new(),
        }
    }

    /// Single-component field filled with `value`.
    pub fn uniform(name: impl Into<String>, support: Support, mesh: &Mesh, value: f64) -> Self {
        let name = name.into();
        let n = support.entity_count(mesh);
        Field {
            component_names: vec![name.clone()],
            name,
            support,
            values: vec![value; n],
            time: 0.0,
            unit: String::new(),
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn n_components(&self) -> usize {
        self.component_names.len()
    }

    pub fn n_entities(&self) -> usize {
        self.values.len() / self.n_components()
    }

    pub fn get(&self, entity: usize, component: usize) -> f64 {
        self.values[entity * self.n_components() + component]
    }

    pub fn set(&mut self, entity: usize, component: usize, value: f64) {
        let n = self.n_components();
        self.values[entity * n + component] = value;
    }

    pub fn entity(&self, entity: usize) -> &[f64] {
        let n = self.n_components();
        &self.values[entity * n..(entity + 1) * n]
    }

    pub fn entity_mut(&mut self, entity: usize) -> &mut [f64] {
        let n = self.n_components();
        &mut self.values[entity * n..(entity + 1) * n]
    }

    /// Copies out one component as a contiguous vector over entities.
    pub fn component(&self, component: usize) -> Vec<f64> {
        self.values.iter().skip(component).step_by(self.n_components()).copied().collect()
    }

    pub fn set_component(&mut self, component: usize, data: &[f64]) {
        let n = self.n_components();
        for (e, v) in data.iter().enumerate() {
            self.values[e * n + component] = *v;
        }
    }

    pub fn component_index(&self, name: &str) -> Option<usize> {
        self.component_names.iter().position(|c| c == name)
    }

    /// Checks value count and finiteness against `mesh`.
    pub fn check_against(&self, mesh: &Mesh) -> Result<(), MeshFieldError> {
        let expected = self.support.entity_count(mesh) * self.n_components();
        if self.component_names.is_empty() || self.values.len() != expected {
            return Err(MeshFieldError::InvalidField(format!(
                "field {} holds {} values, mesh requires {expected}",
                self.name,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(MeshFieldError::InvalidField(format!("field {} has non-finite values", self.name)));
        }
        Ok(())
    }

    fn compatible(&self, other: &Field) -> bool {
        self.support == other.support
            && self.n_components() == other.n_components()
            && self.values.len() == other.values.len()
    }
}

/// Returns `alpha * x + y`, carrying over the metadata of `y`.
pub fn field_axpy(alpha: f64, x: &Field, y: &Field) -> Result<Field, MeshFieldError> {
    if !x.compatible(y) {
        return Err(MeshFieldError::IncompatibleFields(format!(
            "{} ({:?}, {}x{}) vs {} ({:?}, {}x{})",
            x.name,
            x.support,
            x.n_entities(),
            x.n_components(),
            y.name,
            y.support,
            y.n_entities(),
            y.n_components()
        )));
    }
    let mut out = y.clone();
    for (o, xv) in out.values.iter_mut().zip(&x.values) {
        *o += alpha * xv;
    }
    Ok(out)
}

/// Norm over every entry of every component.
pub fn field_norm(x: &Field, kind: NormKind) -> f64 {
    norm(&x.values, kind)
}

fn norm(values: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::LInf => values.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
    }
}

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{update_porosity, ChemicalSystem, ChemistryError, Complex, Mineral};
use crate::component::{
    parse_config, ComponentError, ComponentStatus, ConfigTree, FieldDecl, Lifecycle, NumericalComponent,
};
use crate::meshfield::{Field, Mesh, Region, Support};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ComplexConfig {
    pub name: String,
    pub stoichiometry: BTreeMap<String, f64>,
    pub log_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MineralConfig {
    pub name: String,
    pub stoichiometry: BTreeMap<String, f64>,
    pub log_ksp: f64,
    /// m³/mol
    pub molar_volume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InitialChemistry {
    #[serde(default)]
    pub region: Region,
    /// mol/m³ water
    #[serde(default)]
    pub totals: BTreeMap<String, f64>,
    /// mol/m³ bulk
    #[serde(default)]
    pub minerals: BTreeMap<String, f64>,
}

/// Configuration of the `chemistry/equilibrium-reference` component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ChemistryConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implementation: Option<String>,
    pub primaries: Vec<String>,
    #[serde(default)]
    pub complexes: Vec<ComplexConfig>,
    #[serde(default)]
    pub minerals: Vec<MineralConfig>,
    /// Reference porosity paired with the initial mineral amounts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub porosity: Option<f64>,
    #[serde(default)]
    pub initial: Vec<InitialChemistry>,
}

fn stoich_vector(primaries: &[String], map: &BTreeMap<String, f64>, owner: &str) -> Result<Vec<f64>, String> {
    if let Some(unknown) = map.keys().find(|k| !primaries.contains(k)) {
        return Err(format!("{owner}: unknown primary {unknown}; known primaries: {}", primaries.join(", ")));
    }
    Ok(primaries.iter().map(|p| map.get(p).copied().unwrap_or(0.0)).collect())
}

impl ChemistryConfig {
    pub fn system(&self) -> Result<ChemicalSystem, String> {
        let complexes = self
            .complexes
            .iter()
            .map(|c| {
                Ok(Complex {
                    name: c.name.clone(),
                    stoich: stoich_vector(&self.primaries, &c.stoichiometry, &c.name)?,
                    log_k: c.log_k,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        let minerals = self
            .minerals
            .iter()
            .map(|m| {
                Ok(Mineral {
                    name: m.name.clone(),
                    stoich: stoich_vector(&self.primaries, &m.stoichiometry, &m.name)?,
                    log_ksp: m.log_ksp,
                    molar_volume: m.molar_volume,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        let system = ChemicalSystem { primaries: self.primaries.clone(), complexes, minerals };
        system.validate().map_err(|e| e.to_string())?;
        Ok(system)
    }

    /// Initial dissolved totals and mineral amounts per cell.
    pub fn initial_fields(&self, mesh: &Mesh) -> Result<(Field, Field), String> {
        let mineral_names: Vec<String> = self.minerals.iter().map(|m| m.name.clone()).collect();
        let mut totals = Field::zeros("totals", Support::Cells, self.primaries.clone(), mesh).with_unit("mol/m3");
        let mut minerals = Field::zeros("minerals", Support::Cells, mineral_names.clone(), mesh).with_unit("mol/m3");
        for c in &mesh.cells {
            let Some(init) = self.initial.iter().find(|r| r.region.contains(c.centroid)) else {
                continue;
            };
            for (name, v) in &init.totals {
                let k = self.primaries.iter().position(|p| p == name).ok_or_else(|| format!("unknown primary {name}"))?;
                totals.set(c.id, k, *v);
            }
            for (name, v) in &init.minerals {
                let k = mineral_names.iter().position(|p| p == name).ok_or_else(|| format!("unknown mineral {name}"))?;
                minerals.set(c.id, k, *v);
            }
        }
        Ok((totals, minerals))
    }
}

/// `chemistry/equilibrium-reference`.
///
/// Inputs: `totals` (cells, per primary, mol/m³ water), `minerals` (cells,
/// per mineral, mol/m³ bulk) and `porosity`. Outputs: equilibrated `totals`
/// and `minerals`, the updated `porosity`, `immobile` (mineral-bound amount
/// per primary, mol/m³ bulk) and `speciation` (free primaries then complexes).
pub struct EquilibriumComponent {
    mesh: Arc<Mesh>,
    state: Lifecycle,
    system: Option<ChemicalSystem>,
    phi0: f64,
    minerals0: Field,
    totals: Field,
    minerals: Field,
    porosity: Field,
    speciation: Field,
}

impl EquilibriumComponent {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let empty = Field::uniform("totals", Support::Cells, &mesh, 0.0);
        EquilibriumComponent {
            porosity: Field::uniform("porosity", Support::Cells, &mesh, 1.0),
            minerals0: empty.clone(),
            totals: empty.clone(),
            minerals: empty.clone(),
            speciation: empty,
            mesh,
            state: Lifecycle::Created,
            system: None,
            phi0: 1.0,
        }
    }

    fn system(&self) -> &ChemicalSystem {
        self.system.as_ref().expect("initialized component has a system")
    }

    fn species_names(system: &ChemicalSystem) -> Vec<String> {
        system.primaries.iter().cloned().chain(system.complexes.iter().map(|c| c.name.clone())).collect()
    }
}

impl NumericalComponent for EquilibriumComponent {
    fn initialize(&mut self, config: &ConfigTree) -> Result<(), ComponentError> {
        self.state.require_not_finalized()?;
        let cfg: ChemistryConfig = parse_config(config)?;
        let system = cfg.system().map_err(ComponentError::InvalidConfig)?;
        let phi0 = cfg.porosity.ok_or_else(|| ComponentError::InvalidConfig("porosity is required".into()))?;
        if !(phi0 > 0.0 && phi0 <= 1.0) {
            return Err(ComponentError::InvalidConfig(format!("porosity {phi0} outside (0, 1]")));
        }
        let (totals, minerals) = cfg.initial_fields(&self.mesh).map_err(ComponentError::InvalidConfig)?;
        if totals.values.iter().chain(&minerals.values).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ComponentError::InvalidConfig("initial totals and minerals must be non-negative".into()));
        }
        self.speciation = Field::zeros("speciation", Support::Cells, Self::species_names(&system), &self.mesh).with_unit("mol/m3");
        self.phi0 = phi0;
        self.minerals0 = minerals.clone();
        self.totals = totals;
        self.minerals = minerals;
        self.porosity = Field::uniform("porosity", Support::Cells, &self.mesh, phi0);
        self.system = Some(system);
        self.state = Lifecycle::Ready;
        Ok(())
    }

    fn declared_inputs(&self) -> Vec<FieldDecl> {
        let Some(system) = &self.system else {
            return Vec::new();
        };
        let mut decls = vec![
            FieldDecl::new("totals", Support::Cells, system.n_primaries()),
            FieldDecl::new("porosity", Support::Cells, 1),
        ];
        if !system.minerals.is_empty() {
            decls.push(FieldDecl::new("minerals", Support::Cells, system.minerals.len()));
        }
        decls
    }

    fn declared_outputs(&self) -> Vec<FieldDecl> {
        let Some(system) = &self.system else {
            return Vec::new();
        };
        let mut decls = vec![
            FieldDecl::new("totals", Support::Cells, system.n_primaries()),
            FieldDecl::new("porosity", Support::Cells, 1),
            FieldDecl::new("immobile", Support::Cells, system.n_primaries()),
            FieldDecl::new("speciation", Support::Cells, system.n_primaries() + system.complexes.len()),
        ];
        if !system.minerals.is_empty() {
            decls.push(FieldDecl::new("minerals", Support::Cells, system.minerals.len()));
        }
        decls
    }

    fn set_input_field(&mut self, name: &str, field: Field) -> Result<(), ComponentError> {
        self.state.require_ready()?;
        let decl = self
            .declared_inputs()
            .into_iter()
            .find(|d| d.name == name)
            .ok_or_else(|| ComponentError::UndeclaredInput(name.to_string()))?;
        decl.accepts(&field, self.mesh.n_cells())?;
        let names = |f: &Field| f.component_names.clone();
        match name {
            "totals" => {
                let mut f = field;
                f.component_names = names(&self.totals);
                self.totals = f;
            }
            "minerals" => {
                let mut f = field;
                f.component_names = names(&self.minerals);
                self.minerals = f;
            }
            "porosity" => {
                if let Some(p) = field.values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                    return Err(ComponentError::FieldMismatch { name: name.into(), reason: format!("porosity {p} outside (0, 1]") });
                }
                self.porosity = field;
            }
            _ => unreachable!("declared inputs are matched above"),
        }
        Ok(())
    }

    fn compute_time_step(&mut self, t: f64, dt: f64) -> Result<ComponentStatus, ComponentError> {
        self.state.require_ready()?;
        let system = self.system();
        let n = self.mesh.n_cells();
        let nm = system.minerals.len();
        let results: Vec<Result<_, (usize, ChemistryError)>> = (0..n)
            .into_par_iter()
            .map(|c| {
                let totals = self.totals.entity(c).to_vec();
                let minerals: Vec<f64> = if nm > 0 { self.minerals.entity(c).to_vec() } else { Vec::new() };
                system.equilibrate(&totals, &minerals, self.porosity.values[c]).map_err(|e| (c, e))
            })
            .collect();

        let mut warnings = Vec::new();
        let mut totals = self.totals.clone();
        let mut minerals = self.minerals.clone();
        let mut speciation = self.speciation.clone();
        for (c, r) in results.into_iter().enumerate() {
            let eq = match r {
                Ok(eq) => eq,
                Err((cell, e)) => {
                    return Ok(ComponentStatus::rejected(format!("cell {cell}: {e}"), Some(0.5 * dt)));
                }
            };
            totals.entity_mut(c).copy_from_slice(&eq.totals);
            if nm > 0 {
                minerals.entity_mut(c).copy_from_slice(&eq.minerals);
            }
            let s = speciation.entity_mut(c);
            let np = eq.speciation.primaries.len();
            s[..np].copy_from_slice(&eq.speciation.primaries);
            s[np..].copy_from_slice(&eq.speciation.complexes);
        }
        let volumes: Vec<f64> = system.minerals.iter().map(|m| m.molar_volume).collect();
        let mut porosity = self.porosity.clone();
        let mut clamped = 0;
        for c in 0..n {
            let m0 = if nm > 0 { self.minerals0.entity(c) } else { &[] };
            let m = if nm > 0 { minerals.entity(c) } else { &[] };
            let (phi, hit) = update_porosity(self.phi0, m0, m, &volumes);
            porosity.values[c] = phi;
            clamped += usize::from(hit);
        }
        if clamped > 0 {
            log::warn!("porosity clamped to [1e-4, 1] in {clamped} cells");
            warnings.push(format!("porosity clamped in {clamped} cells"));
        }
        let time = t + dt;
        self.totals = totals.with_time(time);
        self.minerals = minerals.with_time(time);
        self.speciation = speciation.with_time(time);
        self.porosity = porosity.with_time(time);
        Ok(if warnings.is_empty() { ComponentStatus::ok() } else { ComponentStatus::warning(warnings.join("; ")) })
    }

    fn get_output_field(&self, name: &str) -> Result<Field, ComponentError> {
        self.state.require_ready()?;
        let system = self.system();
        match name {
            "totals" => Ok(self.totals.clone()),
            "minerals" if !system.minerals.is_empty() => Ok(self.minerals.clone()),
            "porosity" => Ok(self.porosity.clone()),
            "speciation" => Ok(self.speciation.clone()),
            "immobile" => {
                let mut out = Field::zeros("immobile", Support::Cells, system.primaries.clone(), &self.mesh)
                    .with_unit("mol/m3")
                    .with_time(self.totals.time);
                for c in 0..self.mesh.n_cells() {
                    for (k, m) in system.minerals.iter().enumerate() {
                        let amount = self.minerals.get(c, k);
                        for (i, s) in m.stoich.iter().enumerate() {
                            out.values[c * system.n_primaries() + i] += s * amount;
                        }
                    }
                }
                Ok(out)
            }
            other => Err(ComponentError::UndeclaredOutput(other.to_string())),
        }
    }

    fn finalize(&mut self) -> Result<(), ComponentError> {
        self.state = Lifecycle::Finalized;
        Ok(())
    }
}

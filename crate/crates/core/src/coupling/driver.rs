use std::sync::Arc;

use serde::Serialize;

use super::ledger::{LedgerEntry, MassLedger};
use super::package::{waste_package_step, WastePackageState};
use super::step::{sia_step, ChemistryLink, CoupledState, SiaReport, SpeciesMap, StepError};
use super::CouplingConfig;
use crate::component::{ComponentError, NumericalComponent};
use crate::flow::kozeny_carman;
use crate::meshfield::{Field, Mesh, MffDocument, Support};

/// Step-size halvings allowed when a component rejects a step.
pub const MAX_DT_HALVINGS: usize = 5;
/// Consecutive unconverged SIA steps tolerated before aborting.
pub const MAX_UNCONVERGED_STEPS: usize = 3;
/// Ledger imbalance above which a step carries a warning.
pub const LEDGER_TOL: f64 = 1e-8;
/// Kozeny–Carman is singular at φ = 1.
const KC_PHI_MAX: f64 = 1.0 - 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CouplingError {
    #[error("coupling setup: {0}")]
    Setup(String),
    #[error("{component}: {source}")]
    Component {
        component: &'static str,
        #[source]
        source: ComponentError,
    },
    #[error("simulation aborted at t = {time} (step {step}): {reason}")]
    Aborted { time: f64, step: usize, reason: String },
}

fn call<T>(component: &'static str, r: Result<T, ComponentError>) -> Result<T, CouplingError> {
    r.map_err(|source| CouplingError::Component { component, source })
}

/// Components taking part in a coupled run. Flow and chemistry are optional.
pub struct CoupledComponents {
    pub flow: Option<Box<dyn NumericalComponent>>,
    pub transport: Box<dyn NumericalComponent>,
    pub chemistry: Option<Box<dyn NumericalComponent>>,
}

/// What happened in one accepted step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub index: usize,
    /// Time at the end of the step.
    pub time: f64,
    pub dt: f64,
    pub sia: SiaReport,
    /// Step-size halvings spent on rejected attempts.
    pub retries: usize,
    pub reflowed: bool,
    pub ledger_imbalance: f64,
    pub warnings: Vec<String>,
}

/// Time-loop driver.
pub struct Coupler {
    mesh: Arc<Mesh>,
    config: CouplingConfig,
    components: CoupledComponents,
    map: Option<SpeciesMap>,
    species: Vec<String>,
    state: CoupledState,
    time: f64,
    step_index: usize,
    dt_next: f64,
    unconverged_streak: usize,
    packages: Vec<WastePackageState>,
    ledger: MassLedger,
    initial_porosity: Vec<f64>,
    flow_porosity: Vec<f64>,
    base_conductivity: Option<Vec<f64>>,
    head: Option<Field>,
    flux: Option<Field>,
    immobile: Option<Field>,
    last_rate: Option<Field>,
    setup_warnings: Vec<String>,
}

impl Coupler {
    /// Wires initialized components together, solves the initial flow field
    /// and equilibrates the initial state.
    pub fn new(
        mesh: Arc<Mesh>,
        config: CouplingConfig,
        mut components: CoupledComponents,
        packages: Vec<WastePackageState>,
    ) -> Result<Self, CouplingError> {
        if let Some((field, msg)) = config.problems().into_iter().next() {
            return Err(CouplingError::Setup(format!("coupling.{field}: {msg}")));
        }
        let transport = components.transport.as_mut();
        let conc = call("transport", transport.get_output_field("conc"))?;
        let porosity = call("transport", transport.get_output_field("porosity"))?;
        let species = conc.component_names.clone();
        for (i, p) in packages.iter().enumerate() {
            if p.host_cell >= mesh.n_cells() || p.inventory.len() != species.len() {
                return Err(CouplingError::Setup(format!("waste package {i} does not fit the mesh or species")));
            }
        }

        let (mut head, mut flux, mut base_conductivity) = (None, None, None);
        if let Some(flow) = components.flow.as_deref_mut() {
            let status = call("flow", flow.compute_time_step(0.0, 0.0))?;
            if !status.ok {
                return Err(CouplingError::Setup(format!("initial flow solve rejected: {}", status.message)));
            }
            let q = call("flow", flow.get_output_field("flux"))?;
            call("transport", components.transport.set_input_field("flux", q.clone()))?;
            head = Some(call("flow", flow.get_output_field("head"))?);
            flux = Some(q);
            base_conductivity = Some(call("flow", flow.get_output_field("conductivity"))?.values);
        }

        let mut map = None;
        let mut minerals = None;
        if let Some(chem) = components.chemistry.as_deref() {
            let primaries = call("chemistry", chem.get_output_field("totals"))?.component_names;
            map = Some(SpeciesMap::resolve(&species, &primaries).map_err(CouplingError::Setup)?);
            if chem.declared_outputs().iter().any(|d| d.name == "minerals") {
                minerals = Some(call("chemistry", chem.get_output_field("minerals"))?);
            }
        }

        let n_packages = packages.len();
        let initial_porosity = porosity.values.clone();
        let mut coupler = Coupler {
            flow_porosity: initial_porosity.clone(),
            initial_porosity,
            state: CoupledState { conc, minerals, porosity },
            dt_next: config.dt,
            mesh,
            config,
            components,
            map,
            species,
            time: 0.0,
            step_index: 0,
            unconverged_streak: 0,
            packages,
            ledger: MassLedger::default(),
            base_conductivity,
            head,
            flux,
            immobile: None,
            last_rate: None,
            setup_warnings: Vec::new(),
        };
        coupler.equilibrate_initial_state()?;
        let measured = coupler.measure()?;
        coupler.ledger.entries = coupler
            .species
            .iter()
            .zip(measured)
            .map(|(s, (mobile, immobile, package))| LedgerEntry {
                species: s.clone(),
                initial: mobile + immobile + package,
                mobile,
                immobile,
                package,
                decayed: 0.0,
                outflow: 0.0,
            })
            .collect();
        log::debug!("coupler ready: {} species, {n_packages} packages", coupler.species.len());
        Ok(coupler)
    }

    /// Equilibrates the initial transported totals with the initial minerals.
    fn equilibrate_initial_state(&mut self) -> Result<(), CouplingError> {
        let (Some(chem), Some(map)) = (self.components.chemistry.as_deref_mut(), self.map.as_ref()) else {
            return Ok(());
        };
        let n = self.mesh.n_cells();
        let ns = self.species.len();
        let np = map.primaries.len();
        let mut totals = Field::zeros("totals", Support::Cells, map.primaries.clone(), &self.mesh);
        for c in 0..n {
            for (p, &k) in map.transport_index.iter().enumerate() {
                totals.values[c * np + p] = self.state.conc.values[c * ns + k];
            }
        }
        call("chemistry", chem.set_input_field("totals", totals))?;
        if let Some(m) = &self.state.minerals {
            call("chemistry", chem.set_input_field("minerals", m.clone()))?;
        }
        call("chemistry", chem.set_input_field("porosity", self.state.porosity.clone()))?;
        let status = call("chemistry", chem.compute_time_step(0.0, 0.0))?;
        if !status.ok {
            return Err(CouplingError::Setup(format!("initial equilibration failed: {}", status.message)));
        }
        if !status.message.is_empty() {
            self.setup_warnings.push(status.message);
        }
        let eq = call("chemistry", chem.get_output_field("totals"))?;
        for c in 0..n {
            for (p, &k) in map.transport_index.iter().enumerate() {
                self.state.conc.values[c * ns + k] = eq.values[c * np + p];
            }
        }
        if self.state.minerals.is_some() {
            self.state.minerals = Some(call("chemistry", chem.get_output_field("minerals"))?);
        }
        if chem.declared_outputs().iter().any(|d| d.name == "immobile") {
            self.immobile = Some(call("chemistry", chem.get_output_field("immobile"))?);
        }
        let chem_porosity = call("chemistry", chem.get_output_field("porosity"))?;
        if self.config.porosity_feedback {
            self.apply_porosity(chem_porosity)?;
        }
        Ok(())
    }

    /// Mobile, immobile and package amounts per species, mol.
    fn measure(&mut self) -> Result<Vec<(f64, f64, f64)>, CouplingError> {
        let transport = self.components.transport.as_mut();
        call("transport", transport.set_input_field("conc", self.state.conc.clone()))?;
        call("transport", transport.set_input_field("porosity", self.state.porosity.clone()))?;
        let mass = call("transport", transport.get_output_field("mass"))?;
        let ns = self.species.len();
        let mut out = vec![(0.0, 0.0, 0.0); ns];
        for cell in &self.mesh.cells {
            for (k, entry) in out.iter_mut().enumerate() {
                entry.0 += mass.values[cell.id * ns + k] * cell.volume;
            }
        }
        if let (Some(imm), Some(map)) = (&self.immobile, &self.map) {
            let np = map.primaries.len();
            for cell in &self.mesh.cells {
                for (p, &k) in map.transport_index.iter().enumerate() {
                    out[k].1 += imm.values[cell.id * np + p] * cell.volume;
                }
            }
        }
        for wp in &self.packages {
            for (k, m) in wp.inventory.iter().enumerate() {
                out[k].2 += m;
            }
        }
        Ok(out)
    }

    /// Lagged porosity feedback: keeps φRc per cell, hands the new porosity
    /// to transport and re-solves flow when porosity drifted far enough.
    fn apply_porosity(&mut self, new_porosity: Field) -> Result<bool, CouplingError> {
        let ns = self.species.len();
        for (c, (old, new)) in self.state.porosity.values.iter().zip(&new_porosity.values).enumerate() {
            let ratio = old / new;
            for v in &mut self.state.conc.values[c * ns..(c + 1) * ns] {
                *v *= ratio;
            }
        }
        let mut porosity = new_porosity;
        porosity.name = "porosity".into();
        porosity.component_names = vec!["porosity".into()];
        self.state.porosity = porosity;
        call("transport", self.components.transport.set_input_field("porosity", self.state.porosity.clone()))?;

        let drift = self
            .state
            .porosity
            .values
            .iter()
            .zip(&self.flow_porosity)
            .map(|(p, p0)| (p - p0).abs() / p0)
            .fold(0.0, f64::max);
        let (Some(flow), Some(k0)) = (self.components.flow.as_deref_mut(), &self.base_conductivity) else {
            return Ok(false);
        };
        if drift <= self.config.reflow_threshold {
            return Ok(false);
        }
        let k: Vec<f64> = k0
            .iter()
            .zip(&self.initial_porosity)
            .zip(&self.state.porosity.values)
            .map(|((k0, phi0), phi)| kozeny_carman(*k0, *phi0, phi.min(KC_PHI_MAX)))
            .collect();
        let conductivity = Field::new("conductivity", Support::Cells, vec!["conductivity".into()], k)
            .map_err(|e| CouplingError::Setup(e.to_string()))?
            .with_unit("m/s");
        call("flow", flow.set_input_field("conductivity", conductivity))?;
        let status = call("flow", flow.compute_time_step(self.time, 0.0))?;
        if !status.ok {
            return Err(CouplingError::Aborted {
                time: self.time,
                step: self.step_index,
                reason: format!("flow re-solve rejected: {}", status.message),
            });
        }
        let q = call("flow", flow.get_output_field("flux"))?;
        call("transport", self.components.transport.set_input_field("flux", q.clone()))?;
        self.head = Some(call("flow", flow.get_output_field("head"))?);
        self.flux = Some(q);
        self.flow_porosity = self.state.porosity.values.clone();
        Ok(true)
    }

    fn package_sources(&self, dt: f64) -> (Vec<WastePackageState>, Field) {
        let ns = self.species.len();
        let mut source = Field::zeros("source", Support::Cells, self.species.clone(), &self.mesh);
        let next = self
            .packages
            .iter()
            .map(|wp| {
                let (next, rate) = waste_package_step(wp, dt);
                let volume = self.mesh.cells[wp.host_cell].volume;
                for (k, r) in rate.iter().enumerate() {
                    source.values[wp.host_cell * ns + k] += r / volume;
                }
                next
            })
            .collect();
        (next, source)
    }

    pub fn is_finished(&self) -> bool {
        self.time >= self.config.t_end
    }

    /// Advances one accepted step.
    pub fn step(&mut self) -> Result<StepReport, CouplingError> {
        if self.is_finished() {
            return Err(CouplingError::Setup("run already reached tEnd".into()));
        }
        let abort = |s: &Self, reason: String| CouplingError::Aborted { time: s.time, step: s.step_index + 1, reason };
        let settings = self.config.sia_settings();
        let mut dt = self.dt_next.min(self.config.t_end - self.time);
        let mut retries = 0;
        let mut warnings = std::mem::take(&mut self.setup_warnings);
        let (outcome, packages) = loop {
            let (packages, sources) = self.package_sources(dt);
            let chemistry = match (self.components.chemistry.as_deref_mut(), self.map.as_ref()) {
                (Some(component), Some(map)) => Some(ChemistryLink { component, map }),
                _ => None,
            };
            let warm = if self.config.sia_warm_start { self.last_rate.as_ref() } else { None };
            let result = sia_step(
                self.components.transport.as_mut(),
                chemistry,
                &self.state,
                self.time,
                dt,
                &sources,
                settings,
                warm,
            );
            match result {
                Ok(outcome) => break (outcome, packages),
                Err(StepError::Rejected { component, message, suggested_dt }) => {
                    retries += 1;
                    if retries > MAX_DT_HALVINGS {
                        return Err(abort(self, format!("{component} still rejects after {MAX_DT_HALVINGS} halvings: {message}")));
                    }
                    let suggested = suggested_dt.filter(|s| *s > 0.0).unwrap_or(f64::INFINITY);
                    log::warn!("{component} rejected dt = {dt:e}: {message}");
                    warnings.push(format!("{component} rejected dt {dt:e}: {message}"));
                    dt = (0.5 * dt).min(suggested);
                }
                Err(e @ StepError::Component { .. }) => return Err(abort(self, e.to_string())),
            }
        };

        if outcome.report.converged {
            self.unconverged_streak = 0;
            self.dt_next = self.config.dt;
        } else {
            self.unconverged_streak += 1;
            if self.unconverged_streak >= MAX_UNCONVERGED_STEPS {
                return Err(abort(
                    self,
                    format!(
                        "SIA did not converge for {MAX_UNCONVERGED_STEPS} consecutive steps (last residual {:e})",
                        outcome.report.residual
                    ),
                ));
            }
            self.dt_next = 0.5 * dt;
            warnings.push(format!(
                "SIA not converged after {} iterations (residual {:e}); next dt halved",
                outcome.report.iterations, outcome.report.residual
            ));
        }
        warnings.extend(outcome.warnings.iter().cloned());

        self.state = outcome.state;
        self.packages = packages;
        self.last_rate = outcome.reaction_rate;
        if outcome.immobile.is_some() {
            self.immobile = outcome.immobile;
        }
        self.step_index += 1;
        self.time += dt;
        if self.config.t_end - self.time <= 1e-9 * self.config.dt {
            self.time = self.config.t_end;
        }

        let ns = self.species.len();
        for cell in &self.mesh.cells {
            for (k, entry) in self.ledger.entries.iter_mut().enumerate() {
                entry.decayed += outcome.decayed.values[cell.id * ns + k] * cell.volume;
            }
        }
        for face in self.mesh.boundary_faces() {
            for (k, entry) in self.ledger.entries.iter_mut().enumerate() {
                entry.outflow += outcome.boundary_flux.values[face.id * ns + k];
            }
        }

        let mut reflowed = false;
        if self.config.porosity_feedback {
            if let Some(phi) = outcome.chemistry_porosity {
                reflowed = self.apply_porosity(phi)?;
            }
        }
        let measured = self.measure()?;
        for (entry, (mobile, immobile, package)) in self.ledger.entries.iter_mut().zip(measured) {
            entry.mobile = mobile;
            entry.immobile = immobile;
            entry.package = package;
        }
        let imbalance = self.ledger.max_relative_imbalance();
        if imbalance > LEDGER_TOL {
            warnings.push(format!("mass ledger imbalance {imbalance:e}"));
        }
        Ok(StepReport {
            index: self.step_index,
            time: self.time,
            dt,
            sia: outcome.report,
            retries,
            reflowed,
            ledger_imbalance: imbalance,
            warnings,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn config(&self) -> &CouplingConfig {
        &self.config
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn state(&self) -> &CoupledState {
        &self.state
    }

    pub fn ledger(&self) -> &MassLedger {
        &self.ledger
    }

    pub fn packages(&self) -> &[WastePackageState] {
        &self.packages
    }

    pub fn head(&self) -> Option<&Field> {
        self.head.as_ref()
    }

    pub fn flux(&self) -> Option<&Field> {
        self.flux.as_ref()
    }

    /// Current fields stamped with the current time.
    pub fn fields(&self) -> Vec<Field> {
        let mut fields = vec![self.state.conc.clone()];
        fields.extend(self.state.minerals.clone());
        fields.push(self.state.porosity.clone());
        fields.extend(self.head.clone());
        fields.extend(self.flux.clone());
        for f in &mut fields {
            f.time = self.time;
        }
        fields
    }

    pub fn snapshot(&self) -> MffDocument {
        MffDocument::new((*self.mesh).clone(), self.fields())
    }

    /// Finalizes every component.
    pub fn finalize(&mut self) -> Result<(), CouplingError> {
        if let Some(flow) = self.components.flow.as_deref_mut() {
            call("flow", flow.finalize())?;
        }
        call("transport", self.components.transport.finalize())?;
        if let Some(chem) = self.components.chemistry.as_deref_mut() {
            call("chemistry", chem.finalize())?;
        }
        Ok(())
    }
}

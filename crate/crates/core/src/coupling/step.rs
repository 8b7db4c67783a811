use serde::Serialize;

use crate::component::{ComponentError, NumericalComponent};
use crate::meshfield::{Field, Support};

/// Floor on the norm used to scale the fixed-point residual.
pub const RESIDUAL_FLOOR: f64 = 1e-30;

/// Positions of the chemistry primaries among the transported species.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesMap {
    pub primaries: Vec<String>,
    pub transport_index: Vec<usize>,
}

impl SpeciesMap {
    pub fn resolve(transport_species: &[String], primaries: &[String]) -> Result<Self, String> {
        let transport_index = primaries
            .iter()
            .map(|p| {
                transport_species.iter().position(|s| s == p).ok_or_else(|| {
                    format!("primary {p} is not transported; transported species: {}", transport_species.join(", "))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SpeciesMap { primaries: primaries.to_vec(), transport_index })
    }
}

/// Coupled state at a time level.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    /// Transported concentrations, mol/m³ water.
    pub conc: Field,
    /// mol/m³ bulk; absent without minerals.
    pub minerals: Option<Field>,
    pub porosity: Field,
}

/// Per-step fixed-point summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiaReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiaSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl SiaSettings {
    /// One transport and one chemistry pass, always accepted.
    pub fn non_iterative() -> Self {
        SiaSettings { max_iters: 1, tol: f64::INFINITY }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: CoupledState,
    pub report: SiaReport,
    /// Final reaction source per primary, mol/(m³ bulk·s).
    pub reaction_rate: Option<Field>,
    /// Transport bookkeeping for the accepted transport solve.
    pub decayed: Field,
    pub boundary_flux: Field,
    /// Mineral-bound amount per primary, mol/m³ bulk.
    pub immobile: Option<Field>,
    /// Porosity implied by the new mineral amounts.
    pub chemistry_porosity: Option<Field>,
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error("{component} rejected the step: {message}")]
    Rejected {
        component: &'static str,
        message: String,
        suggested_dt: Option<f64>,
    },
    #[error("{component}: {source}")]
    Component {
        component: &'static str,
        #[source]
        source: ComponentError,
    },
}

/// The chemistry side of a coupled step.
pub struct ChemistryLink<'a> {
    pub component: &'a mut dyn NumericalComponent,
    pub map: &'a SpeciesMap,
}

fn call<T>(component: &'static str, r: Result<T, ComponentError>) -> Result<T, StepError> {
    r.map_err(|source| StepError::Component { component, source })
}

fn cell_zeros(name: &str, components: &[String], n_cells: usize) -> Field {
    Field::new(name, Support::Cells, components.to_vec(), vec![0.0; n_cells * components.len()])
        .expect("primaries are non-empty")
}

/// Sequential non-iterative step: transport, then equilibrate at fixed
/// totals.
pub fn snia_step(
    transport: &mut dyn NumericalComponent,
    chemistry: Option<ChemistryLink<'_>>,
    state: &CoupledState,
    t: f64,
    dt: f64,
    sources: &Field,
) -> Result<StepOutcome, StepError> {
    sia_step(transport, chemistry, state, t, dt, sources, SiaSettings::non_iterative(), None)
}

/// Sequential iterative step.
///
/// Iteration `k` transports from the start-of-step state with reaction
/// source `r^k`, removes that source again to get the chemistry input
/// `T_in = C_tr − r^k·dt/φ`, equilibrates it with the start-of-step
/// minerals, and sets `r^{k+1} = φ (T_eq − T_in)/dt`. The residual is
/// `‖T_eq − C_tr‖₂ / max(‖C_tr‖₂, ε)` over all primaries and cells; it is
/// zero at the fixed point. The new state takes the equilibrated totals, so
/// every iterate conserves mass exactly.
#[allow(clippy::too_many_arguments)]
pub fn sia_step(
    transport: &mut dyn NumericalComponent,
    chemistry: Option<ChemistryLink<'_>>,
    state: &CoupledState,
    t: f64,
    dt: f64,
    sources: &Field,
    settings: SiaSettings,
    initial_rate: Option<&Field>,
) -> Result<StepOutcome, StepError> {
    let n_cells = state.porosity.values.len();
    let ns = state.conc.n_components();
    let phi = &state.porosity.values;
    call("transport", transport.set_input_field("porosity", state.porosity.clone()))?;

    let transport_pass = |transport: &mut dyn NumericalComponent, source: Field| -> Result<Field, StepError> {
        call("transport", transport.set_input_field("conc", state.conc.clone()))?;
        call("transport", transport.set_input_field("source", source))?;
        let status = call("transport", transport.compute_time_step(t, dt))?;
        if !status.ok {
            return Err(StepError::Rejected { component: "transport", message: status.message, suggested_dt: status.suggested_dt });
        }
        call("transport", transport.get_output_field("conc"))
    };
    let bookkeeping = |transport: &dyn NumericalComponent| -> Result<(Field, Field), StepError> {
        Ok((
            call("transport", transport.get_output_field("decayed"))?,
            call("transport", transport.get_output_field("boundary_flux"))?,
        ))
    };

    let Some(ChemistryLink { component: chem, map }) = chemistry else {
        let conc = transport_pass(transport, sources.clone())?;
        let (decayed, boundary_flux) = bookkeeping(transport)?;
        return Ok(StepOutcome {
            state: CoupledState { conc, minerals: state.minerals.clone(), porosity: state.porosity.clone() },
            report: SiaReport { iterations: 1, residual: 0.0, converged: true },
            reaction_rate: None,
            decayed,
            boundary_flux,
            immobile: None,
            chemistry_porosity: None,
            warnings: Vec::new(),
        });
    };

    let np = map.primaries.len();
    let mut rate = match initial_rate {
        Some(r) => r.clone(),
        None => cell_zeros("reaction_rate", &map.primaries, n_cells),
    };
    let has_minerals = chem.declared_inputs().iter().any(|d| d.name == "minerals");
    let has_immobile = chem.declared_outputs().iter().any(|d| d.name == "immobile");
    let mut warnings = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut source = sources.clone();
        for c in 0..n_cells {
            for (p, &k) in map.transport_index.iter().enumerate() {
                source.values[c * ns + k] += rate.values[c * np + p];
            }
        }
        let c_tr = transport_pass(transport, source)?;

        let mut t_in = cell_zeros("totals", &map.primaries, n_cells);
        for c in 0..n_cells {
            for (p, &k) in map.transport_index.iter().enumerate() {
                t_in.values[c * np + p] = c_tr.values[c * ns + k] - rate.values[c * np + p] * dt / phi[c];
            }
        }
        call("chemistry", chem.set_input_field("totals", t_in.clone()))?;
        if has_minerals {
            let minerals = state.minerals.clone().expect("mineral state exists when chemistry declares minerals");
            call("chemistry", chem.set_input_field("minerals", minerals))?;
        }
        call("chemistry", chem.set_input_field("porosity", state.porosity.clone()))?;
        let status = call("chemistry", chem.compute_time_step(t, dt))?;
        if !status.ok {
            return Err(StepError::Rejected { component: "chemistry", message: status.message, suggested_dt: status.suggested_dt });
        }
        if !status.message.is_empty() && !warnings.contains(&status.message) {
            warnings.push(status.message);
        }
        let t_eq = call("chemistry", chem.get_output_field("totals"))?;

        let mut diff = 0.0;
        let mut base = 0.0;
        for c in 0..n_cells {
            for (p, &k) in map.transport_index.iter().enumerate() {
                let tr = c_tr.values[c * ns + k];
                let d = t_eq.values[c * np + p] - tr;
                diff += d * d;
                base += tr * tr;
            }
        }
        let residual = diff.sqrt() / base.sqrt().max(RESIDUAL_FLOOR);
        for c in 0..n_cells {
            for p in 0..np {
                let i = c * np + p;
                rate.values[i] = phi[c] * (t_eq.values[i] - t_in.values[i]) / dt;
            }
        }
        let converged = residual <= settings.tol;
        if converged || iterations >= settings.max_iters {
            let mut conc = c_tr;
            for c in 0..n_cells {
                for (p, &k) in map.transport_index.iter().enumerate() {
                    conc.values[c * ns + k] = t_eq.values[c * np + p];
                }
            }
            let minerals = if has_minerals { Some(call("chemistry", chem.get_output_field("minerals"))?) } else { None };
            let immobile = if has_immobile { Some(call("chemistry", chem.get_output_field("immobile"))?) } else { None };
            let chemistry_porosity = Some(call("chemistry", chem.get_output_field("porosity"))?);
            let (decayed, boundary_flux) = bookkeeping(transport)?;
            return Ok(StepOutcome {
                state: CoupledState { conc, minerals, porosity: state.porosity.clone() },
                report: SiaReport { iterations, residual, converged },
                reaction_rate: Some(rate),
                decayed,
                boundary_flux,
                immobile,
                chemistry_porosity,
                warnings,
            });
        }
    }
}

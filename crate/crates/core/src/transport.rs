//! Cell-centred finite-volume transport of dissolved species.
//!
//! Per species `i` the discrete balance is
//!
//! ```text
//! φ R_i ∂c_i/∂t + ∇·(q c_i − φ (d_e,i + α_L |v|) ∇c_i) = −λ_i φ R_i c_i + λ_p φ R_p c_p + s_i
//! ```
//!
//! with upwind advection, two-point diffusion and a θ-scheme in time. The
//! parent ingrowth term uses the parent's already-solved values, so species
//! are solved one at a time in chain order.
//!
//! Boundaries: tags listed in `boundary_concentrations` act as fixed
//! concentration (inflow carries that concentration, diffusion sees it at the
//! face). Other tags are zero-diffusive-flux; inflow through them carries
//! clean water.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::component::{
    parse_config, ComponentError, ComponentStatus, ConfigTree, FieldDecl, Lifecycle, NumericalComponent,
};
use crate::meshfield::{Field, Mesh, Neighbor, Region, Support};
use crate::numerics::{solve_sparse, CsrMatrix, NumericsError};

/// Relative slack on the explicit stability bound.
const CFL_SLACK: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("step rejected: dt {dt:e} exceeds the explicit stability bound {suggested_dt:e}")]
    StepRejected { dt: f64, suggested_dt: f64 },
    #[error("invalid transport input: {0}")]
    InvalidInput(String),
    #[error("species {species}: {source}")]
    Solver {
        species: String,
        #[source]
        source: NumericsError,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeciesParams {
    pub name: String,
    /// m²/s
    pub effective_diffusion: f64,
    pub retardation: f64,
    /// 1/s
    pub decay: f64,
    /// Index of the species decaying into this one.
    pub parent: Option<usize>,
}

impl SpeciesParams {
    pub fn conservative(name: impl Into<String>) -> Self {
        SpeciesParams {
            name: name.into(),
            effective_diffusion: 0.0,
            retardation: 1.0,
            decay: 0.0,
            parent: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransportParams<'a> {
    pub mesh: &'a Mesh,
    /// Volumetric flux per face along the face normal, m³/s.
    pub face_flux: &'a [f64],
    /// Per cell, in (0, 1].
    pub porosity: &'a [f64],
    pub species: &'a [SpeciesParams],
    /// Longitudinal dispersivity α_L, m.
    pub dispersivity: f64,
    pub theta: f64,
    /// Fixed concentrations per boundary tag, one value per species.
    pub boundary_concentrations: &'a BTreeMap<String, Vec<f64>>,
    pub solver_tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportState {
    /// mol/m³ of water, one component per species.
    pub conc: Field,
    pub time: f64,
}

/// Amounts moved during one step, for mass bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBalance {
    /// Net decay loss (own decay minus ingrowth) per cell and species,
    /// mol per m³ of bulk over the step.
    pub net_decay: Field,
    /// Transported amount through each face along its normal, mol over the
    /// step. On boundary faces this is the outflow.
    pub face_transfer: Field,
}

#[derive(Clone, Debug)]
pub struct TransportOutcome {
    pub state: TransportState,
    pub balance: StepBalance,
}

/// Longitudinal dispersion closure: `d_e + α_L |v|`.
pub fn dispersion_coefficient(v_face: f64, effective_diffusion: f64, dispersivity: f64) -> f64 {
    effective_diffusion + dispersivity * v_face.abs()
}

/// Largest step allowed by the explicit part of a θ < 1 scheme:
/// `min over cells of φ R V / Σ outflow`.
pub fn explicit_step_bound(params: &TransportParams<'_>) -> f64 {
    let mesh = params.mesh;
    let mut outflow = vec![0.0; mesh.n_cells()];
    for face in &mesh.faces {
        let q = params.face_flux[face.id];
        if q > 0.0 {
            outflow[face.left] += q;
        } else if let Neighbor::Cell(r) = face.right {
            outflow[r] -= q;
        }
    }
    let r_min = params.species.iter().map(|s| s.retardation).fold(f64::INFINITY, f64::min);
    mesh.cells
        .iter()
        .filter(|c| outflow[c.id] > 0.0)
        .map(|c| params.porosity[c.id] * r_min * c.volume / outflow[c.id])
        .fold(f64::INFINITY, f64::min)
}

fn check_inputs(state: &TransportState, dt: f64, params: &TransportParams<'_>, source: &Field) -> Result<(), TransportError> {
    let bad = |m: String| Err(TransportError::InvalidInput(m));
    let mesh = params.mesh;
    let (nc, ns) = (mesh.n_cells(), params.species.len());
    if !(dt > 0.0) || !dt.is_finite() {
        return bad(format!("dt must be positive, got {dt}"));
    }
    if !(0.0..=1.0).contains(&params.theta) {
        return bad(format!("theta must lie in [0, 1], got {}", params.theta));
    }
    if ns == 0 {
        return bad("no species".into());
    }
    if state.conc.n_components() != ns || state.conc.values.len() != nc * ns {
        return bad(format!("concentration field does not hold {ns} species on {nc} cells"));
    }
    if source.n_components() != ns || source.values.len() != nc * ns {
        return bad(format!("source field does not hold {ns} species on {nc} cells"));
    }
    if params.face_flux.len() != mesh.n_faces() || params.porosity.len() != nc {
        return bad("flux or porosity does not match the mesh".into());
    }
    if let Some(p) = params.porosity.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return bad(format!("porosity {p} outside (0, 1]"));
    }
    if !(params.dispersivity >= 0.0) {
        return bad("dispersivity must be non-negative".into());
    }
    for s in params.species {
        if !(s.retardation >= 1.0) || !(s.decay >= 0.0) || !(s.effective_diffusion >= 0.0) {
            return bad(format!("species {}: need R ≥ 1, λ ≥ 0, d_e ≥ 0", s.name));
        }
    }
    for (tag, values) in params.boundary_concentrations {
        if values.len() != ns {
            return bad(format!("boundary {tag} lists {} concentrations for {ns} species", values.len()));
        }
    }
    chain_order(params.species).map(|_| ())
}

/// Species indices ordered so that every parent precedes its daughter.
pub fn chain_order(species: &[SpeciesParams]) -> Result<Vec<usize>, TransportError> {
    let n = species.len();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    for s in species {
        if let Some(p) = s.parent {
            if p >= n {
                return Err(TransportError::InvalidInput(format!("species {} has unknown parent {p}", s.name)));
            }
        }
    }
    while order.len() < n {
        let before = order.len();
        for (i, s) in species.iter().enumerate() {
            if !placed[i] && s.parent.is_none_or(|p| placed[p]) {
                placed[i] = true;
                order.push(i);
            }
        }
        if order.len() == before {
            return Err(TransportError::InvalidInput("decay chain contains a cycle".into()));
        }
    }
    Ok(order)
}

/// Per-face coefficients shared by all species except for diffusion.
struct FaceCoeffs {
    q: f64,
    /// Diffusive conductance per unit of d_e, and the dispersive part.
    diff_per_de: f64,
    disp: f64,
    /// Fixed boundary concentrations, if any.
    fixed: Option<usize>,
}

fn face_coeffs(params: &TransportParams<'_>, tags: &BTreeMap<&str, usize>) -> Vec<FaceCoeffs> {
    let mesh = params.mesh;
    mesh.faces
        .iter()
        .map(|face| {
            let q = params.face_flux[face.id];
            let dist = mesh.face_distance(face);
            let (phi_f, fixed) = match &face.right {
                Neighbor::Cell(r) => (0.5 * (params.porosity[face.left] + params.porosity[*r]), None),
                Neighbor::Boundary(tag) => (params.porosity[face.left], tags.get(tag.as_str()).copied()),
            };
            let diffusive = !face.is_boundary() || fixed.is_some();
            // φ α_L |v| with v = q / (φ A) reduces to α_L |q| / A
            let (diff_per_de, disp) = if diffusive {
                (phi_f * face.area / dist, params.dispersivity * q.abs() / dist)
            } else {
                (0.0, 0.0)
            };
            FaceCoeffs { q, diff_per_de, disp, fixed }
        })
        .collect()
}

/// Outflow rate through `face` (mol/s along the normal) for one species.
fn face_rate(
    face: &crate::meshfield::Face,
    fc: &FaceCoeffs,
    d_e: f64,
    c: &[f64],
    boundary: &[Vec<f64>],
    species: usize,
) -> f64 {
    let g = fc.diff_per_de * d_e + fc.disp;
    let cl = c[face.left];
    match face.right {
        Neighbor::Cell(r) => {
            let upwind = if fc.q >= 0.0 { cl } else { c[r] };
            fc.q * upwind + g * (cl - c[r])
        }
        Neighbor::Boundary(_) => {
            let cb = fc.fixed.map_or(0.0, |k| boundary[k][species]);
            let adv = if fc.q >= 0.0 { fc.q * cl } else { fc.q * cb };
            let diff = if fc.fixed.is_some() { g * (cl - cb) } else { 0.0 };
            adv + diff
        }
    }
}

/// Advances every species by one θ-step.
pub fn transport_step(
    state: &TransportState,
    dt: f64,
    params: &TransportParams<'_>,
    source: &Field,
) -> Result<TransportOutcome, TransportError> {
    check_inputs(state, dt, params, source)?;
    if params.theta < 1.0 {
        let bound = explicit_step_bound(params);
        if dt > bound * (1.0 + CFL_SLACK) {
            return Err(TransportError::StepRejected { dt, suggested_dt: bound });
        }
    }

    let mesh = params.mesh;
    let nc = mesh.n_cells();
    let ns = params.species.len();
    let theta = params.theta;
    let tags: BTreeMap<&str, usize> = params
        .boundary_concentrations
        .keys()
        .enumerate()
        .map(|(k, t)| (t.as_str(), k))
        .collect();
    let boundary: Vec<Vec<f64>> = params.boundary_concentrations.values().cloned().collect();
    let coeffs = face_coeffs(params, &tags);

    let old: Vec<Vec<f64>> = (0..ns).map(|i| state.conc.component(i)).collect();
    let mut new: Vec<Vec<f64>> = vec![Vec::new(); ns];
    let mut net_decay = Field::zeros("decayed", Support::Cells, state.conc.component_names.clone(), mesh);
    let mut transfer = Field::zeros("boundary_flux", Support::Faces, state.conc.component_names.clone(), mesh);

    for i in chain_order(params.species)? {
        let sp = &params.species[i];
        let storage: Vec<f64> = mesh
            .cells
            .iter()
            .map(|c| params.porosity[c.id] * sp.retardation * c.volume / dt)
            .collect();
        let decay_coeff: Vec<f64> = mesh
            .cells
            .iter()
            .map(|c| sp.decay * params.porosity[c.id] * sp.retardation * c.volume)
            .collect();

        // operator L c (outflow + decay) as triplets, and the constant inflow G
        let mut ops: Vec<(usize, usize, f64)> = Vec::with_capacity(5 * nc);
        let mut inflow = vec![0.0; nc];
        for (face, fc) in mesh.faces.iter().zip(&coeffs) {
            let g = fc.diff_per_de * sp.effective_diffusion + fc.disp;
            let l = face.left;
            match face.right {
                Neighbor::Cell(r) => {
                    if fc.q >= 0.0 {
                        ops.push((l, l, fc.q));
                        ops.push((r, l, -fc.q));
                    } else {
                        ops.push((l, r, fc.q));
                        ops.push((r, r, -fc.q));
                    }
                    if g > 0.0 {
                        ops.extend([(l, l, g), (l, r, -g), (r, r, g), (r, l, -g)]);
                    }
                }
                Neighbor::Boundary(_) => {
                    let cb = fc.fixed.map_or(0.0, |k| boundary[k][i]);
                    if fc.q >= 0.0 {
                        ops.push((l, l, fc.q));
                    } else {
                        inflow[l] -= fc.q * cb;
                    }
                    if fc.fixed.is_some() && g > 0.0 {
                        ops.push((l, l, g));
                        inflow[l] += g * cb;
                    }
                }
            }
        }
        for (c, k) in decay_coeff.iter().enumerate() {
            if *k > 0.0 {
                ops.push((c, c, *k));
            }
        }

        let ingrowth = |c: usize, values: &[Vec<f64>]| -> f64 {
            match sp.parent {
                Some(p) => {
                    let pp = &params.species[p];
                    pp.decay * params.porosity[c] * pp.retardation * mesh.cells[c].volume * values[p][c]
                }
                None => 0.0,
            }
        };

        // right-hand side
        let l_old = {
            let mut y = vec![0.0; nc];
            for &(r, c, v) in &ops {
                y[r] += v * old[i][c];
            }
            y
        };
        let mut rhs = vec![0.0; nc];
        for c in 0..nc {
            let mut b = storage[c] * old[i][c] + inflow[c] + mesh.cells[c].volume * source.get(c, i);
            if theta < 1.0 {
                b -= (1.0 - theta) * l_old[c];
                b += (1.0 - theta) * ingrowth(c, &old);
            }
            if theta > 0.0 {
                b += theta * ingrowth(c, &new);
            }
            rhs[c] = b;
        }

        let mut triplets: Vec<(usize, usize, f64)> = storage.iter().enumerate().map(|(c, s)| (c, c, *s)).collect();
        if theta > 0.0 {
            triplets.extend(ops.iter().map(|&(r, c, v)| (r, c, theta * v)));
        }
        let matrix = CsrMatrix::from_triplets(nc, triplets).expect("indices within mesh");
        let solution = solve_sparse(&matrix, &rhs, params.solver_tol, 50 * nc + 500).map_err(|source| {
            TransportError::Solver { species: sp.name.clone(), source }
        })?;
        new[i] = solution;

        // bookkeeping
        for c in 0..nc {
            let own = decay_coeff[c] * (theta * new[i][c] + (1.0 - theta) * old[i][c]);
            let gained = theta * ingrowth(c, &new) + (1.0 - theta) * ingrowth(c, &old);
            net_decay.set(c, i, dt * (own - gained) / mesh.cells[c].volume);
        }
        for (face, fc) in mesh.faces.iter().zip(&coeffs) {
            let rate_new = face_rate(face, fc, sp.effective_diffusion, &new[i], &boundary, i);
            let rate_old = face_rate(face, fc, sp.effective_diffusion, &old[i], &boundary, i);
            transfer.set(face.id, i, dt * (theta * rate_new + (1.0 - theta) * rate_old));
        }
    }

    let mut conc = state.conc.clone();
    for (i, values) in new.iter().enumerate() {
        conc.set_component(i, values);
    }
    let time = state.time + dt;
    conc.time = time;
    net_decay.time = time;
    transfer.time = time;
    Ok(TransportOutcome {
        state: TransportState { conc, time },
        balance: StepBalance { net_decay, face_transfer: transfer },
    })
}

/// Stored amount per cell and species (dissolved plus linearly sorbed),
/// mol per m³ of bulk: `φ R c`.
pub fn stored_amount(conc: &Field, porosity: &[f64], species: &[SpeciesParams]) -> Field {
    let mut out = conc.clone();
    out.name = "mass".into();
    out.unit = "mol/m3".into();
    for e in 0..conc.n_entities() {
        for (k, sp) in species.iter().enumerate() {
            out.set(e, k, porosity[e] * sp.retardation * conc.get(e, k));
        }
    }
    out
}

/// Per-species value given once for all species or per species name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeciesValues {
    Uniform(f64),
    PerSpecies(BTreeMap<String, f64>),
}

impl SpeciesValues {
    pub fn resolve(&self, species: &[String], default: f64) -> Result<Vec<f64>, String> {
        match self {
            SpeciesValues::Uniform(v) => Ok(vec![*v; species.len()]),
            SpeciesValues::PerSpecies(map) => {
                if let Some(unknown) = map.keys().find(|k| !species.contains(k)) {
                    return Err(format!("unknown species {unknown}"));
                }
                Ok(species.iter().map(|s| map.get(s).copied().unwrap_or(default)).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DecayEntry {
    pub species: String,
    /// 1/s
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InitialConcentration {
    #[serde(default)]
    pub region: Region,
    pub concentrations: BTreeMap<String, f64>,
}

/// Configuration of the `transport/fv-reference` component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TransportConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implementation: Option<String>,
    pub species: Vec<String>,
    pub porosity: f64,
    #[serde(default = "zero_values")]
    pub effective_diffusion: SpeciesValues,
    #[serde(default)]
    pub dispersivity: f64,
    #[serde(default = "unit_values")]
    pub retardation: SpeciesValues,
    #[serde(default)]
    pub decay: Vec<DecayEntry>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub boundary_concentrations: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub initial: Vec<InitialConcentration>,
    #[serde(default = "default_transport_tol")]
    pub solver_tol: f64,
}

fn zero_values() -> SpeciesValues {
    SpeciesValues::Uniform(0.0)
}

fn unit_values() -> SpeciesValues {
    SpeciesValues::Uniform(1.0)
}

fn default_theta() -> f64 {
    1.0
}

fn default_transport_tol() -> f64 {
    1e-14
}

impl TransportConfig {
    /// Resolves names into per-species parameters.
    pub fn species_params(&self) -> Result<Vec<SpeciesParams>, String> {
        let d_e = self.effective_diffusion.resolve(&self.species, 0.0).map_err(|e| format!("effectiveDiffusion: {e}"))?;
        let r = self.retardation.resolve(&self.species, 1.0).map_err(|e| format!("retardation: {e}"))?;
        let mut params: Vec<SpeciesParams> = self
            .species
            .iter()
            .zip(d_e.iter().zip(&r))
            .map(|(name, (d, r))| SpeciesParams {
                name: name.clone(),
                effective_diffusion: *d,
                retardation: *r,
                decay: 0.0,
                parent: None,
            })
            .collect();
        let index = |name: &str| self.species.iter().position(|s| s == name);
        let mut has_daughter = vec![false; params.len()];
        for (k, entry) in self.decay.iter().enumerate() {
            let i = index(&entry.species).ok_or_else(|| format!("decay[{k}]: unknown species {}", entry.species))?;
            params[i].decay = entry.lambda;
            if let Some(p) = &entry.parent {
                let pi = index(p).ok_or_else(|| format!("decay[{k}]: unknown parent {p}"))?;
                if has_daughter[pi] {
                    return Err(format!("decay[{k}]: parent {p} already has a daughter"));
                }
                has_daughter[pi] = true;
                params[i].parent = Some(pi);
            }
        }
        chain_order(&params).map_err(|e| e.to_string())?;
        Ok(params)
    }

    pub fn boundary_table(&self) -> Result<BTreeMap<String, Vec<f64>>, String> {
        self.boundary_concentrations
            .iter()
            .map(|(tag, values)| {
                if let Some(unknown) = values.keys().find(|k| !self.species.contains(k)) {
                    return Err(format!("boundary {tag}: unknown species {unknown}"));
                }
                let row = self.species.iter().map(|s| values.get(s).copied().unwrap_or(0.0)).collect();
                Ok((tag.clone(), row))
            })
            .collect()
    }

    pub fn initial_field(&self, mesh: &Mesh) -> Result<Field, String> {
        let mut conc = Field::zeros("conc", Support::Cells, self.species.clone(), mesh).with_unit("mol/m3");
        for c in &mesh.cells {
            if let Some(init) = self.initial.iter().find(|r| r.region.contains(c.centroid)) {
                for (name, v) in &init.concentrations {
                    let k = self.species.iter().position(|s| s == name).ok_or_else(|| format!("unknown species {name}"))?;
                    conc.set(c.id, k, *v);
                }
            }
        }
        Ok(conc)
    }
}

/// `transport/fv-reference`.
///
/// Inputs: `flux` (faces), `porosity` (cells), `source` (cells, per species,
/// mol/(m³ bulk·s)), `conc` (cells, per species; replaces the current state).
/// Outputs: `conc`, `mass` (φRc), `decayed` and `boundary_flux` for the last
/// step, and the `porosity` in use.
pub struct TransportComponent {
    mesh: Arc<Mesh>,
    state: Lifecycle,
    species: Vec<SpeciesParams>,
    dispersivity: f64,
    theta: f64,
    boundary: BTreeMap<String, Vec<f64>>,
    tol: f64,
    flux: Field,
    porosity: Field,
    source: Field,
    current: TransportState,
    balance: Option<StepBalance>,
}

impl TransportComponent {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let placeholder = Field::uniform("conc", Support::Cells, &mesh, 0.0);
        TransportComponent {
            flux: Field::uniform("flux", Support::Faces, &mesh, 0.0),
            porosity: Field::uniform("porosity", Support::Cells, &mesh, 1.0),
            source: placeholder.clone(),
            current: TransportState { conc: placeholder, time: 0.0 },
            mesh,
            state: Lifecycle::Created,
            species: Vec::new(),
            dispersivity: 0.0,
            theta: 1.0,
            boundary: BTreeMap::new(),
            tol: default_transport_tol(),
            balance: None,
        }
    }

    fn names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }
}

impl NumericalComponent for TransportComponent {
    fn initialize(&mut self, config: &ConfigTree) -> Result<(), ComponentError> {
        self.state.require_not_finalized()?;
        let cfg: TransportConfig = parse_config(config)?;
        let invalid = ComponentError::InvalidConfig;
        if cfg.species.is_empty() {
            return Err(invalid("at least one species is required".into()));
        }
        if !(cfg.porosity > 0.0 && cfg.porosity <= 1.0) {
            return Err(invalid(format!("porosity {} outside (0, 1]", cfg.porosity)));
        }
        if !(0.0..=1.0).contains(&cfg.theta) {
            return Err(invalid(format!("theta {} outside [0, 1]", cfg.theta)));
        }
        if !(cfg.dispersivity >= 0.0) || !(cfg.solver_tol > 0.0) {
            return Err(invalid("dispersivity must be ≥ 0 and solverTol > 0".into()));
        }
        let species = cfg.species_params().map_err(invalid)?;
        if let Some(s) = species.iter().find(|s| !(s.retardation >= 1.0) || !(s.decay >= 0.0) || !(s.effective_diffusion >= 0.0)) {
            return Err(invalid(format!("species {}: need R ≥ 1, λ ≥ 0, d_e ≥ 0", s.name)));
        }
        let boundary = cfg.boundary_table().map_err(invalid)?;
        if let Some(tag) = boundary.keys().find(|t| !self.mesh.boundary_tags.contains_key(*t)) {
            return Err(invalid(format!("unknown boundary tag {tag}")));
        }
        let conc = cfg.initial_field(&self.mesh).map_err(invalid)?;

        self.species = species;
        self.dispersivity = cfg.dispersivity;
        self.theta = cfg.theta;
        self.boundary = boundary;
        self.tol = cfg.solver_tol;
        self.porosity = Field::uniform("porosity", Support::Cells, &self.mesh, cfg.porosity);
        self.source = Field::zeros("source", Support::Cells, cfg.species.clone(), &self.mesh);
        self.current = TransportState { conc, time: 0.0 };
        self.balance = None;
        self.state = Lifecycle::Ready;
        Ok(())
    }

    fn declared_inputs(&self) -> Vec<FieldDecl> {
        let ns = self.species.len();
        vec![
            FieldDecl::new("flux", Support::Faces, 1),
            FieldDecl::new("porosity", Support::Cells, 1),
            FieldDecl::new("source", Support::Cells, ns),
            FieldDecl::new("conc", Support::Cells, ns),
        ]
    }

    fn declared_outputs(&self) -> Vec<FieldDecl> {
        let ns = self.species.len();
        vec![
            FieldDecl::new("conc", Support::Cells, ns),
            FieldDecl::new("mass", Support::Cells, ns),
            FieldDecl::new("decayed", Support::Cells, ns),
            FieldDecl::new("boundary_flux", Support::Faces, ns),
            FieldDecl::new("porosity", Support::Cells, 1),
        ]
    }

    fn set_input_field(&mut self, name: &str, field: Field) -> Result<(), ComponentError> {
        self.state.require_ready()?;
        let decl = self
            .declared_inputs()
            .into_iter()
            .find(|d| d.name == name)
            .ok_or_else(|| ComponentError::UndeclaredInput(name.to_string()))?;
        decl.accepts(&field, decl.support.entity_count(&self.mesh))?;
        match name {
            "flux" => self.flux = field,
            "porosity" => {
                if let Some(p) = field.values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
                    return Err(ComponentError::FieldMismatch {
                        name: name.into(),
                        reason: format!("porosity {p} outside (0, 1]"),
                    });
                }
                self.porosity = field
            }
            "source" => self.source = field,
            "conc" => {
                let time = field.time;
                let mut conc = field;
                conc.component_names = self.names();
                self.current = TransportState { conc, time };
            }
            _ => unreachable!("declared inputs are matched above"),
        }
        Ok(())
    }

    fn compute_time_step(&mut self, t: f64, dt: f64) -> Result<ComponentStatus, ComponentError> {
        self.state.require_ready()?;
        let params = TransportParams {
            mesh: &self.mesh,
            face_flux: &self.flux.values,
            porosity: &self.porosity.values,
            species: &self.species,
            dispersivity: self.dispersivity,
            theta: self.theta,
            boundary_concentrations: &self.boundary,
            solver_tol: self.tol,
        };
        let start = TransportState { conc: self.current.conc.clone(), time: t };
        match transport_step(&start, dt, &params, &self.source) {
            Ok(outcome) => {
                self.current = outcome.state;
                self.balance = Some(outcome.balance);
                Ok(ComponentStatus::ok())
            }
            Err(TransportError::StepRejected { dt, suggested_dt }) => Ok(ComponentStatus::rejected(
                format!("dt {dt:e} above explicit stability bound {suggested_dt:e}"),
                Some(suggested_dt),
            )),
            Err(e) => Err(ComponentError::Computation(e.to_string())),
        }
    }

    fn get_output_field(&self, name: &str) -> Result<Field, ComponentError> {
        self.state.require_ready()?;
        let names = self.names();
        match name {
            "conc" => Ok(self.current.conc.clone()),
            "porosity" => Ok(self.porosity.clone()),
            "mass" => Ok(stored_amount(&self.current.conc, &self.porosity.values, &self.species)),
            "decayed" => Ok(self.balance.as_ref().map_or_else(
                || Field::zeros("decayed", Support::Cells, names, &self.mesh),
                |b| b.net_decay.clone(),
            )),
            "boundary_flux" => Ok(self.balance.as_ref().map_or_else(
                || Field::zeros("boundary_flux", Support::Faces, names, &self.mesh),
                |b| b.face_transfer.clone(),
            )),
            other => Err(ComponentError::UndeclaredOutput(other.to_string())),
        }
    }

    fn finalize(&mut self) -> Result<(), ComponentError> {
        self.state = Lifecycle::Finalized;
        Ok(())
    }
}

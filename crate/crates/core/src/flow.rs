//! Steady saturated Darcy flow on the finite-volume mesh.
//!
//! Head-only formulation (no gravity term). Face transmissibilities use the
//! distance-weighted harmonic mean of the two cell conductivities; fixed-head
//! boundaries use the half-cell transmissibility so the imposed head is
//! reproduced on the boundary face itself.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::component::{
    parse_config, ComponentError, ComponentStatus, ConfigTree, FieldDecl, Lifecycle, NumericalComponent,
};
use crate::meshfield::{Field, Mesh, Neighbor, Region, Support};
use crate::numerics::{solve_sparse, CsrMatrix, NumericsError};

/// Residual-correction sweeps after the first linear solve.
const REFINEMENT_PASSES: usize = 4;
const CORRECTION_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("ill-posed flow problem: {0}")]
    IllPosed(String),
    #[error("invalid flow input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Solver(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowBoundary {
    FixedHead(f64),
    NoFlow,
}

/// Steady flow problem. Boundary tags absent from `boundaries` are no-flow.
#[derive(Clone, Debug)]
pub struct FlowProblem<'a> {
    pub mesh: &'a Mesh,
    /// Hydraulic conductivity per cell, m/s.
    pub conductivity: &'a [f64],
    pub boundaries: BTreeMap<String, FlowBoundary>,
}

#[derive(Clone, Debug)]
pub struct FlowSolution {
    /// m, on cells
    pub head: Field,
    /// Volumetric flux through each face along its normal, m³/s.
    pub face_flux: Field,
}

/// Kozeny–Carman permeability ratio applied to a reference conductivity.
pub fn kozeny_carman(k0: f64, phi0: f64, phi: f64) -> f64 {
    k0 * (phi / phi0).powi(3) * ((1.0 - phi0) / (1.0 - phi)).powi(2)
}

fn boundary_of(problem: &FlowProblem<'_>, tag: &str) -> FlowBoundary {
    problem.boundaries.get(tag).copied().unwrap_or(FlowBoundary::NoFlow)
}

/// Two-point transmissibility of `face`, using fixed-head conditions on the
/// boundary. Returns `None` for no-flow boundary faces.
fn transmissibility(problem: &FlowProblem<'_>, face: &crate::meshfield::Face) -> Option<(f64, Option<f64>)> {
    let mesh = problem.mesh;
    let k = problem.conductivity;
    let d_left = mesh.cell_face_distance(face.left, face);
    match &face.right {
        Neighbor::Cell(r) => {
            let d_right = mesh.cell_face_distance(*r, face);
            Some((face.area / (d_left / k[face.left] + d_right / k[*r]), None))
        }
        Neighbor::Boundary(tag) => match boundary_of(problem, tag) {
            FlowBoundary::FixedHead(h) => Some((face.area * k[face.left] / d_left, Some(h))),
            FlowBoundary::NoFlow => None,
        },
    }
}

pub fn solve_darcy(problem: &FlowProblem<'_>, tol: f64) -> Result<FlowSolution, FlowError> {
    let mesh = problem.mesh;
    let n = mesh.n_cells();
    if problem.conductivity.len() != n {
        return Err(FlowError::InvalidInput(format!(
            "{} conductivities for {n} cells",
            problem.conductivity.len()
        )));
    }
    if let Some(i) = problem.conductivity.iter().position(|k| !(*k > 0.0) || !k.is_finite()) {
        return Err(FlowError::InvalidInput(format!(
            "conductivity must be positive, cell {i} has {}",
            problem.conductivity[i]
        )));
    }
    let has_fixed = mesh.boundary_faces().any(|f| {
        matches!(boundary_of(problem, f.boundary_tag().expect("boundary")), FlowBoundary::FixedHead(_))
    });
    if !has_fixed {
        return Err(FlowError::IllPosed("no fixed-head boundary face; the head is undetermined".into()));
    }

    let mut triplets = Vec::with_capacity(4 * n);
    let mut rhs = vec![0.0; n];
    for face in &mesh.faces {
        let Some((t, fixed)) = transmissibility(problem, face) else { continue };
        let l = face.left;
        triplets.push((l, l, t));
        match (&face.right, fixed) {
            (Neighbor::Cell(r), _) => {
                triplets.push((*r, *r, t));
                triplets.push((l, *r, -t));
                triplets.push((*r, l, -t));
            }
            (Neighbor::Boundary(_), Some(h)) => rhs[l] += t * h,
            (Neighbor::Boundary(_), None) => unreachable!("no-flow faces are skipped"),
        }
    }
    let matrix = CsrMatrix::from_triplets(n, triplets)?;
    let mut head = solve_sparse(&matrix, &rhs, tol, 20 * n + 200)?;
    // The stopping test is relative to ‖b‖, which high-conductivity boundary
    // cells dominate; refinement recovers accurate head differences (and so
    // fluxes) in low-conductivity zones. A failed correction keeps the
    // already-accepted solution.
    for _ in 0..REFINEMENT_PASSES {
        let r: Vec<f64> = matrix.mul_vec(&head).iter().zip(&rhs).map(|(a, b)| b - a).collect();
        let at_roundoff = (0..n).all(|i| {
            let scale: f64 = matrix.row(i).map(|(j, a)| (a * head[j]).abs()).sum::<f64>() + rhs[i].abs();
            r[i].abs() <= 4.0 * f64::EPSILON * scale
        });
        if at_roundoff {
            break;
        }
        // Each pass only has to shrink the residual, not reach `tol` again.
        let Ok(delta) = solve_sparse(&matrix, &r, CORRECTION_TOL, 20 * n + 200) else { break };
        head.iter_mut().zip(&delta).for_each(|(h, d)| *h += d);
    }

    let mut flux = vec![0.0; mesh.n_faces()];
    for face in &mesh.faces {
        let Some((t, fixed)) = transmissibility(problem, face) else { continue };
        flux[face.id] = match (&face.right, fixed) {
            (Neighbor::Cell(r), _) => t * (head[face.left] - head[*r]),
            (_, Some(h)) => t * (head[face.left] - h),
            _ => 0.0,
        };
    }

    Ok(FlowSolution {
        head: Field::new("head", Support::Cells, vec!["head".into()], head)
            .expect("finite head")
            .with_unit("m"),
        face_flux: Field::new("flux", Support::Faces, vec!["flux".into()], flux)
            .expect("finite flux")
            .with_unit("m3/s"),
    })
}

/// Net outward flux of every cell; zero for a conservative solution.
pub fn cell_flux_divergence(mesh: &Mesh, face_flux: &[f64]) -> Vec<f64> {
    let mut div = vec![0.0; mesh.n_cells()];
    for face in &mesh.faces {
        div[face.left] += face_flux[face.id];
        if let Neighbor::Cell(r) = face.right {
            div[r] -= face_flux[face.id];
        }
    }
    div
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConductivityZone {
    pub region: Region,
    pub conductivity: f64,
}

/// Configuration of the `flow/darcy-reference` component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implementation: Option<String>,
    /// Uniform conductivity, m/s; zones override it where they apply.
    pub conductivity: f64,
    #[serde(default)]
    pub zones: Vec<ConductivityZone>,
    /// Fixed heads per boundary tag; unlisted tags are no-flow.
    #[serde(default)]
    pub boundary_heads: BTreeMap<String, f64>,
    #[serde(default = "default_flow_tol")]
    pub solver_tol: f64,
}

fn default_flow_tol() -> f64 {
    1e-13
}

impl FlowConfig {
    pub fn conductivity_field(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.cells
            .iter()
            .map(|c| {
                self.zones
                    .iter()
                    .rev()
                    .find(|z| z.region.contains(c.centroid))
                    .map_or(self.conductivity, |z| z.conductivity)
            })
            .collect()
    }
}

/// `flow/darcy-reference`: inputs `conductivity`; outputs `head`, `flux`,
/// `conductivity`.
pub struct DarcyComponent {
    mesh: Arc<Mesh>,
    state: Lifecycle,
    boundaries: BTreeMap<String, FlowBoundary>,
    tol: f64,
    conductivity: Field,
    head: Field,
    flux: Field,
}

impl DarcyComponent {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        DarcyComponent {
            conductivity: Field::uniform("conductivity", Support::Cells, &mesh, 1.0),
            head: Field::uniform("head", Support::Cells, &mesh, 0.0),
            flux: Field::uniform("flux", Support::Faces, &mesh, 0.0),
            mesh,
            state: Lifecycle::Created,
            boundaries: BTreeMap::new(),
            tol: default_flow_tol(),
        }
    }
}

impl NumericalComponent for DarcyComponent {
    fn initialize(&mut self, config: &ConfigTree) -> Result<(), ComponentError> {
        self.state.require_not_finalized()?;
        let cfg: FlowConfig = parse_config(config)?;
        for (tag, h) in &cfg.boundary_heads {
            if !self.mesh.boundary_tags.contains_key(tag) {
                return Err(ComponentError::InvalidConfig(format!("unknown boundary tag {tag}")));
            }
            if !h.is_finite() {
                return Err(ComponentError::InvalidConfig(format!("head on {tag} is not finite")));
            }
        }
        if !(cfg.solver_tol > 0.0) {
            return Err(ComponentError::InvalidConfig("solverTol must be positive".into()));
        }
        let k = cfg.conductivity_field(&self.mesh);
        if k.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ComponentError::InvalidConfig("conductivity must be positive".into()));
        }
        self.boundaries = cfg.boundary_heads.iter().map(|(t, h)| (t.clone(), FlowBoundary::FixedHead(*h))).collect();
        self.tol = cfg.solver_tol;
        self.conductivity = Field::new("conductivity", Support::Cells, vec!["conductivity".into()], k)?.with_unit("m/s");
        self.state = Lifecycle::Ready;
        Ok(())
    }

    fn declared_inputs(&self) -> Vec<FieldDecl> {
        vec![FieldDecl::new("conductivity", Support::Cells, 1)]
    }

    fn declared_outputs(&self) -> Vec<FieldDecl> {
        vec![
            FieldDecl::new("head", Support::Cells, 1),
            FieldDecl::new("flux", Support::Faces, 1),
            FieldDecl::new("conductivity", Support::Cells, 1),
        ]
    }

    fn set_input_field(&mut self, name: &str, field: Field) -> Result<(), ComponentError> {
        self.state.require_ready()?;
        let decl = self
            .declared_inputs()
            .into_iter()
            .find(|d| d.name == name)
            .ok_or_else(|| ComponentError::UndeclaredInput(name.to_string()))?;
        decl.accepts(&field, self.mesh.n_cells())?;
        self.conductivity = field;
        Ok(())
    }

    fn compute_time_step(&mut self, t: f64, _dt: f64) -> Result<ComponentStatus, ComponentError> {
        self.state.require_ready()?;
        let problem = FlowProblem {
            mesh: &self.mesh,
            conductivity: &self.conductivity.values,
            boundaries: self.boundaries.clone(),
        };
        let sol = solve_darcy(&problem, self.tol).map_err(|e| ComponentError::Computation(e.to_string()))?;
        self.head = sol.head.with_time(t);
        self.flux = sol.face_flux.with_time(t);
        Ok(ComponentStatus::ok())
    }

    fn get_output_field(&self, name: &str) -> Result<Field, ComponentError> {
        self.state.require_ready()?;
        match name {
            "head" => Ok(self.head.clone()),
            "flux" => Ok(self.flux.clone()),
            "conductivity" => Ok(self.conductivity.clone()),
            other => Err(ComponentError::UndeclaredOutput(other.to_string())),
        }
    }

    fn finalize(&mut self) -> Result<(), ComponentError> {
        self.state = Lifecycle::Finalized;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshfield::{build_structured_mesh, TAG_LEFT, TAG_RIGHT};
    use serde_json::json;

    fn heads(left: f64, right: f64) -> BTreeMap<String, FlowBoundary> {
        [(TAG_LEFT.to_string(), FlowBoundary::FixedHead(left)), (TAG_RIGHT.to_string(), FlowBoundary::FixedHead(right))]
            .into_iter()
            .collect()
    }

    #[test]
    fn uniform_column_matches_darcy_law() {
        let mesh = build_structured_mesh(10, 1, 1.0, 1.0).unwrap();
        let k = vec![1e-5; 10];
        let sol = solve_darcy(&FlowProblem { mesh: &mesh, conductivity: &k, boundaries: heads(1.0, 0.0) }, 1e-13).unwrap();
        let expected = 1e-5 * 1.0 / 10.0;
        for f in mesh.interior_faces() {
            let q = sol.face_flux.values[f.id];
            assert!((q - expected).abs() <= 1e-10 * expected, "face {} q {q}", f.id);
        }
        for f in mesh.boundary_faces() {
            let q = sol.face_flux.values[f.id];
            match f.boundary_tag().unwrap() {
                TAG_LEFT => assert!((q + expected).abs() <= 1e-10 * expected),
                TAG_RIGHT => assert!((q - expected).abs() <= 1e-10 * expected),
                _ => assert_eq!(q, 0.0),
            }
        }
        // linear head profile at centroids
        for c in &mesh.cells {
            let h = 1.0 - c.centroid[0] / 10.0;
            assert!((sol.head.values[c.id] - h).abs() < 1e-10);
        }
    }

    #[test]
    fn equal_heads_give_no_flow() {
        let mesh = build_structured_mesh(6, 3, 1.0, 2.0).unwrap();
        let k = vec![3e-4; mesh.n_cells()];
        let sol = solve_darcy(&FlowProblem { mesh: &mesh, conductivity: &k, boundaries: heads(2.5, 2.5) }, 1e-13).unwrap();
        for h in &sol.head.values {
            assert!((h - 2.5).abs() < 1e-11);
        }
        for q in &sol.face_flux.values {
            assert!(q.abs() < 1e-14);
        }
    }

    #[test]
    fn two_zone_series_resistance() {
        // K = 1 on the left half, 3 on the right; effective K = 2/(1/1 + 1/3) = 1.5
        let mesh = build_structured_mesh(8, 1, 0.5, 1.0).unwrap();
        let k: Vec<f64> = mesh.cells.iter().map(|c| if c.centroid[0] < 2.0 { 1.0 } else { 3.0 }).collect();
        let sol = solve_darcy(&FlowProblem { mesh: &mesh, conductivity: &k, boundaries: heads(1.0, 0.0) }, 1e-13).unwrap();
        let expected = 1.5 * 1.0 / 4.0;
        for f in mesh.interior_faces() {
            let q = sol.face_flux.values[f.id];
            assert!((q - expected).abs() <= 1e-10 * expected);
        }
    }

    #[test]
    fn no_fixed_head_is_ill_posed() {
        let mesh = build_structured_mesh(3, 1, 1.0, 1.0).unwrap();
        let k = vec![1.0; 3];
        let err = solve_darcy(&FlowProblem { mesh: &mesh, conductivity: &k, boundaries: BTreeMap::new() }, 1e-12).unwrap_err();
        assert!(matches!(err, FlowError::IllPosed(_)));
    }

    #[test]
    fn rejects_non_positive_conductivity() {
        let mesh = build_structured_mesh(3, 1, 1.0, 1.0).unwrap();
        let k = vec![1.0, 0.0, 1.0];
        assert!(matches!(
            solve_darcy(&FlowProblem { mesh: &mesh, conductivity: &k, boundaries: heads(1.0, 0.0) }, 1e-12),
            Err(FlowError::InvalidInput(_))
        ));
    }

    #[test]
    fn heterogeneous_2d_conservation_and_bounds() {
        let mesh = build_structured_mesh(12, 7, 1.0, 0.5).unwrap();
        let k: Vec<f64> = (0..mesh.n_cells()).map(|i| 1e-5 * (1.0 + 0.9 * ((i * 37 % 11) as f64 / 11.0 - 0.5))).collect();
        let sol = solve_darcy(&FlowProblem { mesh: &mesh, conductivity: &k, boundaries: heads(3.0, 1.0) }, 1e-13).unwrap();
        let max_q = sol.face_flux.values.iter().fold(0.0f64, |m, q| m.max(q.abs()));
        for d in cell_flux_divergence(&mesh, &sol.face_flux.values) {
            assert!(d.abs() <= 1e-10 * max_q);
        }
        for h in &sol.head.values {
            assert!(*h >= 1.0 - 1e-12 && *h <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn kozeny_carman_reference_point() {
        assert_eq!(kozeny_carman(2e-5, 0.3, 0.3), 2e-5);
        assert!(kozeny_carman(1.0, 0.3, 0.2) < 1.0);
        assert!(kozeny_carman(1.0, 0.3, 0.4) > 1.0);
    }

    #[test]
    fn component_interface() {
        let mesh = Arc::new(build_structured_mesh(4, 1, 1.0, 1.0).unwrap());
        let mut c = DarcyComponent::new(mesh.clone());
        assert!(matches!(c.compute_time_step(0.0, 1.0), Err(ComponentError::NotInitialized)));
        c.initialize(&json!({"conductivity": 2.0, "boundaryHeads": {"LEFT": 1.0, "RIGHT": 0.0}})).unwrap();
        assert_eq!(c.get_output_field("flux").unwrap().values, vec![0.0; mesh.n_faces()]);
        c.compute_time_step(0.0, 1.0).unwrap();
        let q = c.get_output_field("flux").unwrap();
        assert!((q.values[1] - 0.5).abs() < 1e-12);
        c.set_input_field("conductivity", Field::uniform("conductivity", Support::Cells, &mesh, 4.0)).unwrap();
        c.compute_time_step(0.0, 1.0).unwrap();
        assert!((c.get_output_field("flux").unwrap().values[1] - 1.0).abs() < 1e-12);
        assert!(matches!(
            c.set_input_field("head", Field::uniform("head", Support::Cells, &mesh, 0.0)),
            Err(ComponentError::UndeclaredInput(_))
        ));
        assert!(DarcyComponent::new(mesh.clone()).initialize(&json!({"conductivity": 1.0, "boundaryHeads": {"EAST": 1.0}})).is_err());
        c.finalize().unwrap();
        assert!(matches!(c.compute_time_step(0.0, 1.0), Err(ComponentError::Finalized)));
    }
}

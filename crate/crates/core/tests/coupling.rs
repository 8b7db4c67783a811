use std::sync::Arc;

use rtcouple::chemistry::ChemicalSystem;
use rtcouple::component::{
    ComponentError, ComponentStatus, ConfigTree, FieldDecl, Lifecycle, NumericalComponent, Registry,
};
use rtcouple::coupling::{
    sia_step, snia_step, ChemistryLink, CoupledComponents, CoupledState, Coupler, CouplingConfig, CouplingMode,
    SiaSettings, SpeciesMap, WastePackageState,
};
use rtcouple::meshfield::{build_structured_mesh, Field, Mesh, Support};
use rtcouple::transport::{transport_step, SpeciesParams, TransportParams, TransportState};
use serde_json::{json, Value};

fn mesh(nx: usize, ny: usize, dx: f64) -> Arc<Mesh> {
    Arc::new(build_structured_mesh(nx, ny, dx, dx).unwrap())
}

fn create(app: &str, imp: &str, mesh: &Arc<Mesh>, cfg: Value) -> Box<dyn NumericalComponent> {
    Registry::with_reference_components().create(app, imp, mesh.clone(), &cfg).unwrap()
}

fn state_of(transport: &dyn NumericalComponent, chem: Option<&dyn NumericalComponent>) -> CoupledState {
    CoupledState {
        conc: transport.get_output_field("conc").unwrap(),
        minerals: chem.and_then(|c| c.get_output_field("minerals").ok()),
        porosity: transport.get_output_field("porosity").unwrap(),
    }
}

fn salt_chemistry(porosity: f64, minerals: Value) -> Value {
    json!({
        "primaries": ["A", "B"],
        "complexes": [{"name": "AB", "stoichiometry": {"A": 1, "B": 1}, "logK": 1.0}],
        "minerals": [{"name": "AB(s)", "stoichiometry": {"A": 1, "B": 1}, "logKsp": -4.0, "molarVolume": 1e-4}],
        "porosity": porosity,
        "initial": [{"minerals": minerals}]
    })
}

/// Equilibrium partition: half of each total sits in an immobile store.
struct Partition {
    mesh: Arc<Mesh>,
    state: Lifecycle,
    primaries: Vec<String>,
    totals: Field,
    sorbed: Field,
    porosity: Field,
}

impl Partition {
    fn boxed(mesh: Arc<Mesh>) -> Box<dyn NumericalComponent> {
        let empty = Field::uniform("x", Support::Cells, &mesh, 0.0);
        Box::new(Partition {
            porosity: empty.clone(),
            totals: empty.clone(),
            sorbed: empty,
            mesh,
            state: Lifecycle::Created,
            primaries: Vec::new(),
        })
    }
}

impl NumericalComponent for Partition {
    fn initialize(&mut self, config: &ConfigTree) -> Result<(), ComponentError> {
        self.primaries = serde_json::from_value(config["primaries"].clone()).map_err(|e| ComponentError::InvalidConfig(e.to_string()))?;
        let phi = config["porosity"].as_f64().unwrap();
        self.totals = Field::zeros("totals", Support::Cells, self.primaries.clone(), &self.mesh);
        self.sorbed = Field::zeros("minerals", Support::Cells, self.primaries.clone(), &self.mesh);
        self.porosity = Field::uniform("porosity", Support::Cells, &self.mesh, phi);
        self.state = Lifecycle::Ready;
        Ok(())
    }
    fn declared_inputs(&self) -> Vec<FieldDecl> {
        let n = self.primaries.len();
        vec![
            FieldDecl::new("totals", Support::Cells, n),
            FieldDecl::new("minerals", Support::Cells, n),
            FieldDecl::new("porosity", Support::Cells, 1),
        ]
    }
    fn declared_outputs(&self) -> Vec<FieldDecl> {
        let n = self.primaries.len();
        vec![
            FieldDecl::new("totals", Support::Cells, n),
            FieldDecl::new("minerals", Support::Cells, n),
            FieldDecl::new("immobile", Support::Cells, n),
            FieldDecl::new("porosity", Support::Cells, 1),
        ]
    }
    fn set_input_field(&mut self, name: &str, field: Field) -> Result<(), ComponentError> {
        match name {
            "totals" => self.totals = field,
            "minerals" => self.sorbed = field,
            "porosity" => self.porosity = field,
            other => return Err(ComponentError::UndeclaredInput(other.into())),
        }
        Ok(())
    }
    fn compute_time_step(&mut self, _t: f64, _dt: f64) -> Result<ComponentStatus, ComponentError> {
        self.state.require_ready()?;
        let n = self.primaries.len();
        for (i, (t, m)) in self.totals.values.iter_mut().zip(self.sorbed.values.iter_mut()).enumerate() {
            let phi = self.porosity.values[i / n];
            let all = *t + *m / phi;
            *t = 0.5 * all;
            *m = phi * 0.5 * all;
        }
        Ok(ComponentStatus::ok())
    }
    fn get_output_field(&self, name: &str) -> Result<Field, ComponentError> {
        match name {
            "totals" => Ok(self.totals.clone()),
            "minerals" | "immobile" => Ok(self.sorbed.clone()),
            "porosity" => Ok(self.porosity.clone()),
            other => Err(ComponentError::UndeclaredOutput(other.into())),
        }
    }
    fn finalize(&mut self) -> Result<(), ComponentError> {
        self.state = Lifecycle::Finalized;
        Ok(())
    }
}

fn partition(mesh: &Arc<Mesh>, phi: f64) -> Box<dyn NumericalComponent> {
    let mut c = Partition::boxed(mesh.clone());
    c.initialize(&json!({"primaries": ["A"], "porosity": phi})).unwrap();
    c
}

#[test]
fn no_chemistry_reduces_to_transport() {
    let m = mesh(5, 1, 1.0);
    let cfg = json!({"species": ["A"], "porosity": 0.4, "effectiveDiffusion": 1e-2,
        "boundaryConcentrations": {"LEFT": {"A": 1.0}}, "initial": [{"concentrations": {"A": 0.1}}]});
    let mut tr = create("transport", "fv-reference", &m, cfg);
    let state = state_of(tr.as_ref(), None);
    let src = Field::zeros("source", Support::Cells, vec!["A".into()], &m);
    let out = snia_step(tr.as_mut(), None, &state, 0.0, 2.0, &src).unwrap();
    assert_eq!(out.report.iterations, 1);

    let species = [SpeciesParams { effective_diffusion: 1e-2, ..SpeciesParams::conservative("A") }];
    let bc = [("LEFT".to_string(), vec![1.0])].into_iter().collect();
    let flux = vec![0.0; m.n_faces()];
    let phi = vec![0.4; 5];
    let params = TransportParams {
        mesh: &m,
        face_flux: &flux,
        porosity: &phi,
        species: &species,
        dispersivity: 0.0,
        theta: 1.0,
        boundary_concentrations: &bc,
        solver_tol: 1e-14,
    };
    let direct = transport_step(&TransportState { conc: state.conc.clone(), time: 0.0 }, 2.0, &params, &src).unwrap();
    assert_eq!(out.state.conc.values, direct.state.conc.values);
}

#[test]
fn identity_chemistry_converges_in_one_iteration() {
    let m = mesh(4, 1, 1.0);
    let mut tr = create("transport", "fv-reference", &m, json!({"species": ["A", "B"], "porosity": 0.3,
        "effectiveDiffusion": 1e-3, "boundaryConcentrations": {"LEFT": {"A": 1.0}}}));
    let mut ch = create("chemistry", "equilibrium-reference", &m, json!({"primaries": ["A", "B"], "porosity": 0.3}));
    let state = state_of(tr.as_ref(), Some(ch.as_ref()));
    let map = SpeciesMap::resolve(&state.conc.component_names, &["A".into(), "B".into()]).unwrap();
    let src = Field::zeros("source", Support::Cells, vec!["A".into(), "B".into()], &m);
    let settings = SiaSettings { max_iters: 50, tol: 1e-12 };
    let out = sia_step(tr.as_mut(), Some(ChemistryLink { component: ch.as_mut(), map: &map }), &state, 0.0, 1.0, &src, settings, None)
        .unwrap();
    assert_eq!(out.report.iterations, 1);
    assert!(out.report.converged);
}

#[test]
fn static_supersaturated_cell_matches_equilibration() {
    let m = mesh(1, 1, 1.0);
    let mut tr = create("transport", "fv-reference", &m, json!({"species": ["A", "B"], "porosity": 0.5,
        "initial": [{"concentrations": {"A": 0.2, "B": 0.1}}]}));
    let mut ch = create("chemistry", "equilibrium-reference", &m, salt_chemistry(0.5, json!({})));
    let state = state_of(tr.as_ref(), Some(ch.as_ref()));
    let map = SpeciesMap::resolve(&state.conc.component_names, &["A".into(), "B".into()]).unwrap();
    let src = Field::zeros("source", Support::Cells, vec!["A".into(), "B".into()], &m);
    let out = snia_step(tr.as_mut(), Some(ChemistryLink { component: ch.as_mut(), map: &map }), &state, 0.0, 1.0, &src).unwrap();

    let system = rtcouple::chemistry::ChemistryConfig::system(&serde_json::from_value(salt_chemistry(0.5, json!({}))).unwrap()).unwrap();
    let eq = system.equilibrate(&[0.2, 0.1], &[0.0], 0.5).unwrap();
    assert_eq!(out.state.conc.values, eq.totals);
    assert_eq!(out.state.minerals.unwrap().values, eq.minerals);
    assert!(eq.minerals[0] > 0.0);
}

#[test]
fn two_cell_exchange_equals_hand_composition() {
    let m = mesh(2, 1, 1.0);
    let mut q = Field::uniform("flux", Support::Faces, &m, 0.0);
    for f in &m.faces {
        q.values[f.id] = 0.05 * f.normal[0];
    }
    let tr_cfg = json!({"species": ["A", "B"], "porosity": 0.5, "effectiveDiffusion": 1e-2,
        "boundaryConcentrations": {"LEFT": {"A": 2e-3, "B": 1e-3}},
        "initial": [{"concentrations": {"A": 1e-3, "B": 3e-3}}]});
    let chem_cfg = json!({"primaries": ["A", "B"], "porosity": 0.5,
        "complexes": [{"name": "AB", "stoichiometry": {"A": 1, "B": 1}, "logK": 3.0}]});
    let mut tr = create("transport", "fv-reference", &m, tr_cfg);
    tr.set_input_field("flux", q.clone()).unwrap();
    let mut ch = create("chemistry", "equilibrium-reference", &m, chem_cfg.clone());
    let state = state_of(tr.as_ref(), Some(ch.as_ref()));
    let map = SpeciesMap::resolve(&state.conc.component_names, &["A".into(), "B".into()]).unwrap();
    let src = Field::zeros("source", Support::Cells, vec!["A".into(), "B".into()], &m);
    let out = snia_step(tr.as_mut(), Some(ChemistryLink { component: ch.as_mut(), map: &map }), &state, 0.0, 1.0, &src).unwrap();

    // independent composition: transport_step, then speciation per cell
    let species = [
        SpeciesParams { effective_diffusion: 1e-2, ..SpeciesParams::conservative("A") },
        SpeciesParams { effective_diffusion: 1e-2, ..SpeciesParams::conservative("B") },
    ];
    let bc = [("LEFT".to_string(), vec![2e-3, 1e-3])].into_iter().collect();
    let params = TransportParams {
        mesh: &m,
        face_flux: &q.values,
        porosity: &[0.5, 0.5],
        species: &species,
        dispersivity: 0.0,
        theta: 1.0,
        boundary_concentrations: &bc,
        solver_tol: 1e-14,
    };
    let moved = transport_step(&TransportState { conc: state.conc.clone(), time: 0.0 }, 1.0, &params, &src).unwrap();
    let system: ChemicalSystem =
        rtcouple::chemistry::ChemistryConfig::system(&serde_json::from_value(chem_cfg).unwrap()).unwrap();
    for c in 0..2 {
        let t = moved.state.conc.entity(c);
        let eq = system.equilibrate(t, &[], 0.5).unwrap();
        for i in 0..2 {
            assert!((out.state.conc.get(c, i) - eq.totals[i]).abs() <= 1e-15 * eq.totals[i].abs().max(1e-300));
        }
    }
}

fn partition_coupler(lambda: f64, dt: f64, steps: usize, tol: f64, warm: bool) -> Coupler {
    let m = mesh(1, 1, 1.0);
    let tr = create("transport", "fv-reference", &m, json!({"species": ["A"], "porosity": 0.4,
        "decay": [{"species": "A", "lambda": lambda}], "initial": [{"concentrations": {"A": 1.0}}]}));
    let mut cfg = CouplingConfig::new(CouplingMode::Sia, dt, dt * steps as f64);
    cfg.sia_tol = tol;
    cfg.sia_max_iters = 200;
    cfg.sia_warm_start = warm;
    let parts = CoupledComponents { flow: None, transport: tr, chemistry: Some(partition(&m, 0.4)) };
    Coupler::new(m, cfg, parts, Vec::new()).unwrap()
}

#[test]
fn sia_limit_matches_monolithic_backward_euler() {
    let (lambda, dt) = (0.3, 0.5);
    let mut coupler = partition_coupler(lambda, dt, 20, 1e-13, false);
    // initial equilibration halves the dissolved amount
    let mut c = 0.5;
    assert!((coupler.state().conc.values[0] - c).abs() < 1e-15);
    while !coupler.is_finished() {
        let report = coupler.step().unwrap();
        assert!(report.sia.converged);
        c = 2.0 * c / (2.0 + lambda * dt);
        let got = coupler.state().conc.values[0];
        assert!((got - c).abs() <= 1e-8 * c, "{got} vs {c}");
    }
    assert!(coupler.ledger().max_relative_imbalance() < 1e-12);
}

#[test]
fn warm_start_reaches_same_fixed_point() {
    let tol = 1e-9;
    let mut cold = partition_coupler(0.2, 1.0, 10, tol, false);
    let mut warm = partition_coupler(0.2, 1.0, 10, tol, true);
    let mut fewer = false;
    while !cold.is_finished() {
        let a = cold.step().unwrap();
        let b = warm.step().unwrap();
        fewer |= b.sia.iterations < a.sia.iterations;
        let (x, y) = (cold.state().conc.values[0], warm.state().conc.values[0]);
        assert!((x - y).abs() <= 10.0 * tol * x.abs());
    }
    assert!(fewer);
}

#[test]
fn closed_system_ledger_and_porosity_monotonicity() {
    // no-flow box with a supersaturated strip and mineral elsewhere
    let m = mesh(6, 3, 0.5);
    let tr = create("transport", "fv-reference", &m, json!({"species": ["A", "B"], "porosity": 0.3,
        "effectiveDiffusion": 1e-3,
        "initial": [{"region": {"xMax": 1.0}, "concentrations": {"A": 0.3, "B": 0.2}},
                    {"concentrations": {"A": 1e-3, "B": 1e-3}}]}));
    let chem = create("chemistry", "equilibrium-reference", &m, salt_chemistry(0.3, json!({"AB(s)": 0.05})));
    let mut cfg = CouplingConfig::new(CouplingMode::Sia, 5.0, 600.0);
    cfg.porosity_feedback = true;
    let parts = CoupledComponents { flow: None, transport: tr, chemistry: Some(chem) };
    let mut coupler = Coupler::new(m.clone(), cfg, parts, Vec::new()).unwrap();
    let mut previous = coupler.state().clone();
    let mut steps = 0;
    while !coupler.is_finished() {
        let report = coupler.step().unwrap();
        assert!(report.ledger_imbalance < 1e-8, "step {}: {}", report.index, report.ledger_imbalance);
        let now = coupler.state();
        let (m0, m1) = (previous.minerals.as_ref().unwrap(), now.minerals.as_ref().unwrap());
        for c in 0..m.n_cells() {
            if m1.values[c] > m0.values[c] {
                assert!(now.porosity.values[c] <= previous.porosity.values[c]);
            }
        }
        previous = now.clone();
        steps += 1;
    }
    assert!(steps >= 100);
}

#[test]
fn waste_package_mass_enters_domain() {
    let m = mesh(4, 1, 1.0);
    let tr = create("transport", "fv-reference", &m, json!({"species": ["A"], "porosity": 0.5, "effectiveDiffusion": 1e-2}));
    let cfg = CouplingConfig::new(CouplingMode::Snia, 1.0, 50.0);
    let wp = WastePackageState { inventory: vec![2.0], rate: 0.05, host_cell: 1 };
    let parts = CoupledComponents { flow: None, transport: tr, chemistry: None };
    let mut coupler = Coupler::new(m, cfg, parts, vec![wp]).unwrap();
    while !coupler.is_finished() {
        coupler.step().unwrap();
    }
    let e = coupler.ledger().entry("A").unwrap();
    assert!((e.package - 2.0 * (-0.05f64 * 50.0).exp()).abs() < 1e-12);
    assert!((e.mobile + e.package - 2.0).abs() < 1e-12);
}

#[test]
fn rejected_steps_are_retried_with_smaller_dt() {
    let m = mesh(4, 1, 1.0);
    let tr = create("transport", "fv-reference", &m, json!({"species": ["A"], "porosity": 0.5, "theta": 0.0,
        "boundaryConcentrations": {"LEFT": {"A": 1.0}}}));
    let flow = create("flow", "darcy-reference", &m, json!({"conductivity": 1.0, "boundaryHeads": {"LEFT": 2.0, "RIGHT": 0.0}}));
    // q = 0.5 so the explicit bound is φV/q = 1
    let cfg = CouplingConfig::new(CouplingMode::Snia, 3.0, 6.0);
    let parts = CoupledComponents { flow: Some(flow), transport: tr, chemistry: None };
    let mut coupler = Coupler::new(m, cfg, parts, Vec::new()).unwrap();
    let report = coupler.step().unwrap();
    assert_eq!(report.retries, 1);
    assert!((report.dt - 1.0).abs() < 1e-12);
}

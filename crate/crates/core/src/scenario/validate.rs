use std::collections::BTreeSet;
use std::path::Path;

use serde_json::Value;

use super::{load_document, Diagnostic, Scenario, ScenarioError};
use crate::component::Registry;
use crate::meshfield::{build_structured_mesh, Mesh, Region};

/// Reads, parses and checks a scenario file. An empty list means runnable.
pub fn validate_file(path: &Path, overrides: &[String], registry: &Registry) -> Result<Vec<Diagnostic>, ScenarioError> {
    let (_, doc) = load_document(path, overrides)?;
    Ok(match validate_document(&doc, registry) {
        Ok(scenario) => match crate::run::prepare(&scenario, registry) {
            Ok(_) => Vec::new(),
            Err(d) => d,
        },
        Err(d) => d,
    })
}

/// Structural and cross-reference checks. Does not build components.
pub fn validate_document(doc: &Value, registry: &Registry) -> Result<Scenario, Vec<Diagnostic>> {
    let scenario: Scenario = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        vec![Diagnostic::new(path, e.into_inner().to_string())]
    })?;
    let diags = check(&scenario, registry);
    if diags.is_empty() {
        Ok(scenario)
    } else {
        Err(diags)
    }
}

fn check(s: &Scenario, registry: &Registry) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |path: String, msg: String| out.push(Diagnostic::new(path, msg));

    let mesh = match build_structured_mesh(s.mesh.nx, s.mesh.ny, s.mesh.dx, s.mesh.dy) {
        Ok(m) => Some(m),
        Err(e) => {
            push("mesh".into(), e.to_string());
            None
        }
    };

    for (app, imp) in [
        ("flow", s.flow_impl()),
        ("transport", Some(s.transport_impl())),
        ("chemistry", s.chemistry_impl()),
    ] {
        if let Some(imp) = imp {
            if !registry.contains(app, imp) {
                let known: Vec<String> =
                    registry.entries().into_iter().filter(|(a, _)| a == app).map(|(_, i)| i).collect();
                push(
                    format!("{app}.implementation"),
                    format!("no {app} implementation {imp}; registered: {}", known.join(", ")),
                );
            }
        }
    }

    if let Some(flow) = &s.flow {
        if !(flow.conductivity > 0.0) || !flow.conductivity.is_finite() {
            push("flow.conductivity".into(), format!("must be positive, got {}", flow.conductivity));
        }
        for (i, z) in flow.zones.iter().enumerate() {
            if !(z.conductivity > 0.0) || !z.conductivity.is_finite() {
                push(format!("flow.zones[{i}].conductivity"), format!("must be positive, got {}", z.conductivity));
            }
            if let Some(m) = &mesh {
                check_region_nonempty(m, &z.region, format!("flow.zones[{i}].region"), &mut push);
            }
        }
        for (tag, h) in &flow.boundary_heads {
            if let Some(m) = &mesh {
                if !m.boundary_tags.contains_key(tag) {
                    push(format!("flow.boundaryHeads.{tag}"), unknown_tag(m, tag));
                }
            }
            if !h.is_finite() {
                push(format!("flow.boundaryHeads.{tag}"), "head is not finite".into());
            }
        }
        if !(flow.solver_tol > 0.0) {
            push("flow.solverTol".into(), format!("must be positive, got {}", flow.solver_tol));
        }
    }

    let t = &s.transport;
    if t.species.is_empty() {
        push("transport.species".into(), "at least one species is required".into());
    }
    let mut seen = BTreeSet::new();
    for (i, name) in t.species.iter().enumerate() {
        if !seen.insert(name) {
            push(format!("transport.species[{i}]"), format!("duplicate species {name}"));
        }
    }
    if !(t.porosity > 0.0 && t.porosity <= 1.0) {
        push("transport.porosity".into(), format!("must lie in (0, 1], got {}", t.porosity));
    }
    if !(0.0..=1.0).contains(&t.theta) {
        push("transport.theta".into(), format!("must lie in [0, 1], got {}", t.theta));
    }
    if !(t.dispersivity >= 0.0) || !t.dispersivity.is_finite() {
        push("transport.dispersivity".into(), format!("must be non-negative, got {}", t.dispersivity));
    }
    if !(t.solver_tol > 0.0) {
        push("transport.solverTol".into(), format!("must be positive, got {}", t.solver_tol));
    }
    let species_ok = check_species_values(t, &mut push);
    for (i, d) in t.decay.iter().enumerate() {
        if !t.species.contains(&d.species) {
            push(format!("transport.decay[{i}].species"), unknown_species(&t.species, &d.species));
        }
        if let Some(p) = &d.parent {
            if !t.species.contains(p) {
                push(format!("transport.decay[{i}].parent"), unknown_species(&t.species, p));
            }
        }
        if !(d.lambda >= 0.0) || !d.lambda.is_finite() {
            push(format!("transport.decay[{i}].lambda"), format!("must be non-negative, got {}", d.lambda));
        }
    }
    if species_ok {
        if let Err(e) = t.species_params() {
            push("transport.decay".into(), e);
        }
    }
    for (tag, values) in &t.boundary_concentrations {
        if let Some(m) = &mesh {
            if !m.boundary_tags.contains_key(tag) {
                push(format!("transport.boundaryConcentrations.{tag}"), unknown_tag(m, tag));
            }
        }
        for (name, v) in values {
            let path = format!("transport.boundaryConcentrations.{tag}.{name}");
            if !t.species.contains(name) {
                push(path, unknown_species(&t.species, name));
            } else if !(*v >= 0.0) || !v.is_finite() {
                push(path, format!("must be non-negative, got {v}"));
            }
        }
    }
    for (i, init) in t.initial.iter().enumerate() {
        if let Some(m) = &mesh {
            check_region_nonempty(m, &init.region, format!("transport.initial[{i}].region"), &mut push);
        }
        for (name, v) in &init.concentrations {
            let path = format!("transport.initial[{i}].concentrations.{name}");
            if !t.species.contains(name) {
                push(path, unknown_species(&t.species, name));
            } else if !(*v >= 0.0) || !v.is_finite() {
                push(path, format!("must be non-negative, got {v}"));
            }
        }
    }
    if let Some(m) = &mesh {
        let regions: Vec<&Region> = t.initial.iter().map(|r| &r.region).collect();
        check_coverage(m, &regions, "transport.initial", &mut push);
    }

    if let Some(chem) = &s.chemistry {
        check_chemistry(chem, t, mesh.as_ref(), species_ok, &mut push);
    }

    for (field, msg) in s.coupling.problems() {
        push(format!("coupling.{field}"), msg);
    }

    for (i, wp) in s.waste_packages.iter().enumerate() {
        if let Some(m) = &mesh {
            if wp.host_cell >= m.n_cells() {
                push(
                    format!("wastePackages[{i}].hostCell"),
                    format!("cell {} outside the mesh of {} cells", wp.host_cell, m.n_cells()),
                );
            }
        }
        if !(wp.rate >= 0.0) || !wp.rate.is_finite() {
            push(format!("wastePackages[{i}].rate"), format!("must be non-negative, got {}", wp.rate));
        }
        for (name, v) in &wp.inventory {
            let path = format!("wastePackages[{i}].inventory.{name}");
            if !t.species.contains(name) {
                push(path, unknown_species(&t.species, name));
            } else if !(*v >= 0.0) || !v.is_finite() {
                push(path, format!("must be non-negative, got {v}"));
            }
        }
    }

    if s.output.cadence == 0 {
        push("output.cadence".into(), "must be at least 1".into());
    }
    out
}

fn check_species_values(t: &crate::transport::TransportConfig, push: &mut impl FnMut(String, String)) -> bool {
    let mut ok = true;
    for (key, values, min, label) in [
        ("effectiveDiffusion", &t.effective_diffusion, 0.0, "non-negative"),
        ("retardation", &t.retardation, 1.0, "at least 1"),
    ] {
        match values.resolve(&t.species, min) {
            Err(_) => {
                if let crate::transport::SpeciesValues::PerSpecies(map) = values {
                    for name in map.keys().filter(|k| !t.species.contains(k)) {
                        push(format!("transport.{key}.{name}"), unknown_species(&t.species, name));
                    }
                }
                ok = false;
            }
            Ok(v) => {
                for (name, x) in t.species.iter().zip(v) {
                    if !(x >= min) || !x.is_finite() {
                        let path = match values {
                            crate::transport::SpeciesValues::Uniform(_) => format!("transport.{key}"),
                            crate::transport::SpeciesValues::PerSpecies(_) => format!("transport.{key}.{name}"),
                        };
                        push(path, format!("must be {label}, got {x}"));
                        ok = false;
                    }
                }
            }
        }
    }
    ok
}

fn check_chemistry(
    chem: &crate::chemistry::ChemistryConfig,
    t: &crate::transport::TransportConfig,
    mesh: Option<&Mesh>,
    species_ok: bool,
    push: &mut impl FnMut(String, String),
) {
    let known = chem.primaries.join(", ");
    let unknown_primary = |name: &str| format!("unknown primary {name}; known primaries: {known}");
    if chem.primaries.is_empty() {
        push("chemistry.primaries".into(), "at least one primary is required".into());
    }
    for (i, p) in chem.primaries.iter().enumerate() {
        if !t.species.contains(p) {
            push(
                format!("chemistry.primaries[{i}]"),
                format!("primary {p} is not a transported species; transported species: {}", t.species.join(", ")),
            );
        }
    }
    if species_ok {
        if let Ok(r) = t.retardation.resolve(&t.species, 1.0) {
            for (name, r) in t.species.iter().zip(r) {
                if chem.primaries.contains(name) && r != 1.0 {
                    push(
                        format!("transport.retardation.{name}"),
                        format!("reactive species {name} must have retardation 1, got {r}"),
                    );
                }
            }
        }
    }
    for (i, c) in chem.complexes.iter().enumerate() {
        for (name, nu) in &c.stoichiometry {
            let path = format!("chemistry.complexes[{i}].stoichiometry");
            if !chem.primaries.contains(name) {
                push(path, unknown_primary(name));
            } else if !(*nu >= 0.0) || !nu.is_finite() {
                push(format!("{path}.{name}"), format!("must be non-negative, got {nu}"));
            }
        }
        if c.stoichiometry.values().all(|v| *v == 0.0) {
            push(format!("chemistry.complexes[{i}].stoichiometry"), "needs at least one non-zero coefficient".into());
        }
        if !c.log_k.is_finite() {
            push(format!("chemistry.complexes[{i}].logK"), "must be finite".into());
        }
    }
    for (i, m) in chem.minerals.iter().enumerate() {
        for (name, nu) in &m.stoichiometry {
            let path = format!("chemistry.minerals[{i}].stoichiometry");
            if !chem.primaries.contains(name) {
                push(path, unknown_primary(name));
            } else if !(*nu >= 0.0) || !nu.is_finite() {
                push(format!("{path}.{name}"), format!("must be non-negative, got {nu}"));
            }
        }
        if m.stoichiometry.values().all(|v| *v == 0.0) {
            push(format!("chemistry.minerals[{i}].stoichiometry"), "needs at least one non-zero coefficient".into());
        }
        if !m.log_ksp.is_finite() {
            push(format!("chemistry.minerals[{i}].logKsp"), "must be finite".into());
        }
        if !(m.molar_volume > 0.0) || !m.molar_volume.is_finite() {
            push(format!("chemistry.minerals[{i}].molarVolume"), format!("must be positive, got {}", m.molar_volume));
        }
    }
    let mut names = BTreeSet::new();
    for name in chem.primaries.iter().chain(chem.complexes.iter().map(|c| &c.name)).chain(chem.minerals.iter().map(|m| &m.name)) {
        if !names.insert(name) {
            push("chemistry".into(), format!("duplicate species name {name}"));
        }
    }
    if chem.porosity.is_some() {
        push("chemistry.porosity".into(), "porosity is taken from transport.porosity".into());
    }
    let minerals: Vec<&String> = chem.minerals.iter().map(|m| &m.name).collect();
    for (i, init) in chem.initial.iter().enumerate() {
        if !init.totals.is_empty() {
            push(
                format!("chemistry.initial[{i}].totals"),
                "initial dissolved concentrations belong in transport.initial".into(),
            );
        }
        if let Some(m) = mesh {
            check_region_nonempty(m, &init.region, format!("chemistry.initial[{i}].region"), push);
        }
        for (name, v) in &init.minerals {
            let path = format!("chemistry.initial[{i}].minerals.{name}");
            if !minerals.contains(&name) {
                let known: Vec<&str> = minerals.iter().map(|s| s.as_str()).collect();
                push(path, format!("unknown mineral {name}; known minerals: {}", known.join(", ")));
            } else if !(*v >= 0.0) || !v.is_finite() {
                push(path, format!("must be non-negative, got {v}"));
            }
        }
    }
    if let Some(m) = mesh {
        let regions: Vec<&Region> = chem.initial.iter().map(|r| &r.region).collect();
        check_coverage(m, &regions, "chemistry.initial", push);
    }
}

fn check_region_nonempty(mesh: &Mesh, region: &Region, path: String, push: &mut impl FnMut(String, String)) {
    if region.cells(mesh).next().is_none() {
        push(path, "region contains no cell centroid".into());
    }
}

/// A non-empty list of initial-condition regions must reach every cell.
fn check_coverage(mesh: &Mesh, regions: &[&Region], path: &str, push: &mut impl FnMut(String, String)) {
    if regions.is_empty() {
        return;
    }
    let missed = mesh.cells.iter().filter(|c| !regions.iter().any(|r| r.contains(c.centroid))).count();
    if missed > 0 {
        push(path.into(), format!("regions leave {missed} of {} cells uncovered", mesh.n_cells()));
    }
}

fn unknown_species(species: &[String], name: &str) -> String {
    format!("unknown species {name}; transported species: {}", species.join(", "))
}

fn unknown_tag(mesh: &Mesh, tag: &str) -> String {
    let known: Vec<&str> = mesh.boundary_tags.keys().map(String::as_str).collect();
    format!("unknown boundary tag {tag}; known tags: {}", known.join(", "))
}

//! Legacy ASCII VTK export of cell fields, one scalar array per component.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MeshFieldError, MffDocument, Support};

/// Renders every cell field of `doc` as a legacy VTK document.
///
/// Structured meshes become `STRUCTURED_POINTS` with cell data; anything else
/// falls back to `POLYDATA` vertices at cell centroids with point data.
pub fn render_vtk(doc: &MffDocument) -> String {
    let mesh = &doc.mesh;
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("rtcouple cell fields\nASCII\n");
    let data_kind = match mesh.grid {
        Some(g) => {
            out.push_str("DATASET STRUCTURED_POINTS\n");
            let _ = writeln!(out, "DIMENSIONS {} {} 2", g.nx + 1, g.ny + 1);
            out.push_str("ORIGIN 0 0 0\n");
            let _ = writeln!(out, "SPACING {:e} {:e} 1", g.dx, g.dy);
            let _ = writeln!(out, "CELL_DATA {}", mesh.n_cells());
            "cell"
        }
        None => {
            out.push_str("DATASET POLYDATA\n");
            let _ = writeln!(out, "POINTS {} double", mesh.n_cells());
            for c in &mesh.cells {
                let _ = writeln!(out, "{:e} {:e} 0", c.centroid[0], c.centroid[1]);
            }
            let _ = writeln!(out, "VERTICES {} {}", mesh.n_cells(), 2 * mesh.n_cells());
            for c in &mesh.cells {
                let _ = writeln!(out, "1 {}", c.id);
            }
            let _ = writeln!(out, "POINT_DATA {}", mesh.n_cells());
            "point"
        }
    };
    log::debug!("vtk export as {data_kind} data");

    for field in doc.fields.iter().filter(|f| f.support == Support::Cells) {
        for (k, comp) in field.component_names.iter().enumerate() {
            let name = sanitize(&format!("{}_{}", field.name, comp));
            let _ = writeln!(out, "SCALARS {name} double 1");
            out.push_str("LOOKUP_TABLE default\n");
            for e in 0..field.n_entities() {
                let _ = writeln!(out, "{:e}", field.get(e, k));
            }
        }
    }
    out
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

pub fn write_vtk(path: impl AsRef<Path>, doc: &MffDocument) -> Result<(), MeshFieldError> {
    fs::write(path, render_vtk(doc))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshfield::{build_structured_mesh, Field};

    #[test]
    fn structured_export_has_one_array_per_component() {
        let mesh = build_structured_mesh(3, 2, 1.0, 1.0).unwrap();
        let conc = Field::zeros("conc", Support::Cells, vec!["Ca".into(), "CO3".into()], &mesh);
        let flux = Field::zeros("flux", Support::Faces, vec!["flux".into()], &mesh);
        let text = render_vtk(&MffDocument::new(mesh, vec![conc, flux]));
        assert!(text.contains("DIMENSIONS 4 3 2"));
        assert!(text.contains("CELL_DATA 6"));
        assert_eq!(text.matches("SCALARS").count(), 2);
        assert!(text.contains("SCALARS conc_Ca double 1"));
        assert!(!text.contains("flux"));
    }

    #[test]
    fn unstructured_fallback() {
        let mut mesh = build_structured_mesh(2, 1, 1.0, 1.0).unwrap();
        mesh.grid = None;
        let por = Field::uniform("porosity", Support::Cells, &mesh, 0.3);
        let text = render_vtk(&MffDocument::new(mesh, vec![por]));
        assert!(text.contains("POINTS 2 double"));
        assert!(text.contains("POINT_DATA 2"));
    }
}

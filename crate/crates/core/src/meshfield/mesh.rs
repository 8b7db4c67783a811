//! Cell/face mesh used by every finite-volume component.
//!
//! The mesh is stored as plain cell and face lists so that components never
//! rely on the grid being structured. Structured builds additionally record
//! their [`GridInfo`], which only the VTK exporter looks at.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MeshFieldError;

pub const TAG_LEFT: &str = "LEFT";
pub const TAG_RIGHT: &str = "RIGHT";
pub const TAG_BOTTOM: &str = "BOTTOM";
pub const TAG_TOP: &str = "TOP";

const NORMAL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub centroid: [f64; 2],
    /// m³ (unit depth in the third direction).
    pub volume: f64,
}

/// What lies on the far side of a face.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighbor {
    Cell(usize),
    Boundary(String),
}

/// A face between `left` and `right`. The unit normal always points from
/// `left` towards `right`; on the boundary it is therefore outward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub id: usize,
    pub area: f64,
    pub normal: [f64; 2],
    pub center: [f64; 2],
    pub left: usize,
    pub right: Neighbor,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        matches!(self.right, Neighbor::Boundary(_))
    }

    pub fn boundary_tag(&self) -> Option<&str> {
        match &self.right {
            Neighbor::Boundary(tag) => Some(tag),
            Neighbor::Cell(_) => None,
        }
    }
}

/// Dimensions of a rectilinear build.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dim: u8,
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    pub boundary_tags: BTreeMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn interior_faces(&self) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(|f| !f.is_boundary())
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(|f| f.is_boundary())
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// Distance between the centres on either side of `face`. For a boundary
    /// face this is the half-cell distance from the cell centroid to the face.
    pub fn face_distance(&self, face: &Face) -> f64 {
        let left = self.cells[face.left].centroid;
        match face.right {
            Neighbor::Cell(r) => distance(left, self.cells[r].centroid),
            Neighbor::Boundary(_) => distance(left, face.center),
        }
    }

    /// Distance from the centroid of `cell` to the centre of `face`.
    pub fn cell_face_distance(&self, cell: usize, face: &Face) -> f64 {
        distance(self.cells[cell].centroid, face.center)
    }

    /// Checks the geometric and topological invariants of the mesh.
    pub fn validate(&self) -> Result<(), MeshFieldError> {
        let bad = |msg: String| Err(MeshFieldError::InvalidMesh(msg));
        if self.dim != 1 && self.dim != 2 {
            return bad(format!("dimension {} is not 1 or 2", self.dim));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.id != i {
                return bad(format!("cell at position {i} has id {}", c.id));
            }
            if !(c.volume > 0.0) || !c.volume.is_finite() {
                return bad(format!("cell {i} has volume {}", c.volume));
            }
        }
        let n = self.cells.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.id != i {
                return bad(format!("face at position {i} has id {}", f.id));
            }
            if !(f.area > 0.0) || !f.area.is_finite() {
                return bad(format!("face {i} has area {}", f.area));
            }
            let len = (f.normal[0].powi(2) + f.normal[1].powi(2)).sqrt();
            if (len - 1.0).abs() > NORMAL_TOL {
                return bad(format!("face {i} normal has length {len}"));
            }
            if f.left >= n {
                return bad(format!("face {i} references missing cell {}", f.left));
            }
            match &f.right {
                Neighbor::Cell(r) if *r >= n => {
                    return bad(format!("face {i} references missing cell {r}"));
                }
                Neighbor::Cell(r) if *r == f.left => {
                    return bad(format!("interior face {i} references cell {r} twice"));
                }
                Neighbor::Boundary(tag) => {
                    let listed = self
                        .boundary_tags
                        .get(tag)
                        .is_some_and(|ids| ids.contains(&i));
                    if !listed {
                        return bad(format!("boundary face {i} not listed under tag {tag}"));
                    }
                }
                Neighbor::Cell(_) => {}
            }
        }
        for (tag, ids) in &self.boundary_tags {
            for &id in ids {
                match self.faces.get(id).and_then(Face::boundary_tag) {
                    Some(t) if t == tag => {}
                    _ => return bad(format!("tag {tag} lists face {id} which is not on it")),
                }
            }
        }
        Ok(())
    }
}

/// Builds an `nx × ny` rectilinear grid with cells ordered x-fastest.
///
/// Faces normal to x come first (row by row, `nx + 1` per row), followed by
/// faces normal to y (`ny + 1` rows of `nx`). `ny = 1` yields a 1D mesh that
/// still carries BOTTOM/TOP boundary faces of width `dx`.
pub fn build_structured_mesh(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Mesh, MeshFieldError> {
    if nx == 0 || ny == 0 {
        return Err(MeshFieldError::InvalidArgument(format!(
            "grid counts must be at least 1 (nx={nx}, ny={ny})"
        )));
    }
    if !(dx > 0.0 && dx.is_finite()) || !(dy > 0.0 && dy.is_finite()) {
        return Err(MeshFieldError::InvalidArgument(format!(
            "cell sizes must be positive and finite (dx={dx}, dy={dy})"
        )));
    }

    let cell_id = |i: usize, j: usize| j * nx + i;
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(Cell {
                id: cell_id(i, j),
                centroid: [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy],
                volume: dx * dy,
            });
        }
    }

    let mut faces = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
    let mut tags: BTreeMap<String, Vec<usize>> = [TAG_LEFT, TAG_RIGHT, TAG_BOTTOM, TAG_TOP]
        .iter()
        .map(|t| (t.to_string(), Vec::new()))
        .collect();
    let mut push = |faces: &mut Vec<Face>, area, normal, center, left, right: Neighbor| {
        let id = faces.len();
        if let Neighbor::Boundary(tag) = &right {
            tags.get_mut(tag).expect("known tag").push(id);
        }
        faces.push(Face { id, area, normal, center, left, right });
    };

    for j in 0..ny {
        let yc = (j as f64 + 0.5) * dy;
        for i in 0..=nx {
            let center = [i as f64 * dx, yc];
            if i == 0 {
                push(&mut faces, dy, [-1.0, 0.0], center, cell_id(0, j), Neighbor::Boundary(TAG_LEFT.into()));
            } else if i == nx {
                push(&mut faces, dy, [1.0, 0.0], center, cell_id(nx - 1, j), Neighbor::Boundary(TAG_RIGHT.into()));
            } else {
                push(&mut faces, dy, [1.0, 0.0], center, cell_id(i - 1, j), Neighbor::Cell(cell_id(i, j)));
            }
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            let center = [(i as f64 + 0.5) * dx, j as f64 * dy];
            if j == 0 {
                push(&mut faces, dx, [0.0, -1.0], center, cell_id(i, 0), Neighbor::Boundary(TAG_BOTTOM.into()));
            } else if j == ny {
                push(&mut faces, dx, [0.0, 1.0], center, cell_id(i, ny - 1), Neighbor::Boundary(TAG_TOP.into()));
            } else {
                push(&mut faces, dx, [0.0, 1.0], center, cell_id(i, j - 1), Neighbor::Cell(cell_id(i, j)));
            }
        }
    }

    Ok(Mesh {
        dim: if ny == 1 { 1 } else { 2 },
        cells,
        faces,
        boundary_tags: tags,
        grid: Some(GridInfo { nx, ny, dx, dy }),
    })
}

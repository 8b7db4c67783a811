use serde::{Deserialize, Serialize};

use super::Mesh;

/// Axis-aligned box selecting cells by centroid. Missing bounds are open.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Region {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
}

impl Region {
    pub fn everywhere() -> Self {
        Region::default()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.x_min.is_none_or(|v| p[0] >= v)
            && self.x_max.is_none_or(|v| p[0] <= v)
            && self.y_min.is_none_or(|v| p[1] >= v)
            && self.y_max.is_none_or(|v| p[1] <= v)
    }

    pub fn cells<'a>(&'a self, mesh: &'a Mesh) -> impl Iterator<Item = usize> + 'a {
        mesh.cells.iter().filter(|c| self.contains(c.centroid)).map(|c| c.id)
    }
}

/// For each cell, the index of the first region containing it.
pub fn assign_regions(mesh: &Mesh, regions: &[&Region]) -> Vec<Option<usize>> {
    mesh.cells
        .iter()
        .map(|c| regions.iter().position(|r| r.contains(c.centroid)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshfield::build_structured_mesh;

    #[test]
    fn selects_by_centroid() {
        let m = build_structured_mesh(4, 2, 1.0, 1.0).unwrap();
        let left = Region { x_max: Some(2.0), ..Default::default() };
        assert_eq!(left.cells(&m).collect::<Vec<_>>(), vec![0, 1, 4, 5]);
        let all = Region::everywhere();
        let a = assign_regions(&m, &[&left, &all]);
        assert_eq!(a[0], Some(0));
        assert_eq!(a[3], Some(1));
        let none = assign_regions(&m, &[&left]);
        assert_eq!(none[3], None);
    }
}

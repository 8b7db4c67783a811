//! Common data model: mesh, fields, field algebra and the MFF exchange format.

mod field;
mod mesh;
mod mff;
mod region;
mod vtk;

pub use field::{field_axpy, field_norm, Field, NormKind, Support};
pub use mesh::{
    build_structured_mesh, Cell, Face, GridInfo, Mesh, Neighbor, TAG_BOTTOM, TAG_LEFT, TAG_RIGHT, TAG_TOP,
};
pub use mff::{decode_mff, encode_mff, read_mff, write_mff, MffDocument, FORMAT_VERSION, MAGIC};
pub use region::{assign_regions, Region};
pub use vtk::{render_vtk, write_vtk};

#[derive(Debug, thiserror::Error)]
pub enum MeshFieldError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("incompatible fields: {0}")]
    IncompatibleFields(String),
    #[error("MFF format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

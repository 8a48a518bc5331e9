//! Meshes, finite element spaces and operator assembly.

mod assembly;
mod mesh;
mod observation;

pub use assembly::{
    assemble_mass, assemble_stiffness, edge_triple, p1_gradients, p1_local_stiffness,
    p1_triple, Anisotropy, FeField, Space,
};
pub use mesh::{build_rect_mesh, BoundaryEdge, BoundaryLabel, GridShape, Mesh, SideLabels};
pub use observation::{boundary_restriction, locate_point, observation_matrix};

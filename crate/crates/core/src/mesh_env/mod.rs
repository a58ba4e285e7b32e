//! Semantic meshes and the environment descriptors rasterized from them.

pub mod descriptor;
pub mod io;
pub mod mesh;

pub use descriptor::{
    build_affordance, build_ground_plane, build_hvr, build_semvoxel, count_outside, DescriptorKind,
    EnvDescriptor,
};
pub use mesh::{parse_mesh, parse_mesh_str, write_mesh, SemanticMesh, Vertex};

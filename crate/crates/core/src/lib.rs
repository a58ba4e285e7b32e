//! Joint egocentric action recognition and 3D action localization over a
//! hierarchical volumetric map of the environment.
//!
//! - [`mesh_env`]: labeled meshes and the HVR / SemVoxel / ground-plane /
//!   affordance descriptors rasterized from them.
//! - [`location_prior`]: location distributions and the camera-pose prior.
//! - [`diffcore`]: tensors, differentiable ops, RNG, optimizer, checkpoints.
//! - [`model`]: the latent-location model, its ablations and training loop.
//! - [`eval`]: recognition accuracy and heatmap precision/recall/F1.
//! - [`synthgen`]: procedural worlds and episodes with controlled ambiguity.
//! - [`cli`]: the `hvr` command-line pipeline.

mod binfmt;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod grid;
pub mod location_prior;
pub mod mesh_env;
pub mod model;
pub mod synthgen;

pub use error::{Error, Result};
pub use grid::GridSpec;

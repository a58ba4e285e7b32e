//! Rasterization of labeled meshes into per-parent-voxel descriptors.

use serde::{Deserialize, Serialize};

use super::mesh::SemanticMesh;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::EpisodeClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    /// Hierarchical volumetric representation: X×Y×Z×M³ child-voxel class ids.
    Hvr,
    /// Per-voxel class frequencies: X×Y×Z×C.
    SemVoxel,
    /// Per-column class frequencies: X×Y×C.
    GroundPlane2D,
    /// Per-voxel action-label frequencies: X×Y×Z×N.
    Affordance,
}

impl DescriptorKind {
    pub fn code(self) -> u8 {
        match self {
            DescriptorKind::Hvr => 0,
            DescriptorKind::SemVoxel => 1,
            DescriptorKind::GroundPlane2D => 2,
            DescriptorKind::Affordance => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DescriptorKind::Hvr,
            1 => DescriptorKind::SemVoxel,
            2 => DescriptorKind::GroundPlane2D,
            3 => DescriptorKind::Affordance,
            _ => return None,
        })
    }

    pub fn is_probability(self) -> bool {
        !matches!(self, DescriptorKind::Hvr)
    }
}

/// A dense tensor over the parent grid describing the environment.
///
/// `num_classes` is the number of categories the values range over: object
/// classes for HVR, SemVoxel and GroundPlane2D, action classes for
/// Affordance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvDescriptor {
    pub grid: GridSpec,
    pub kind: DescriptorKind,
    pub num_classes: usize,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl EnvDescriptor {
    pub fn from_raw(
        grid: GridSpec,
        kind: DescriptorKind,
        num_classes: usize,
        dims: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        grid.validate()?;
        let [x, y, z] = grid.dims;
        let expected = match kind {
            DescriptorKind::Hvr => vec![x, y, z, grid.children_per_parent()],
            DescriptorKind::SemVoxel | DescriptorKind::Affordance => vec![x, y, z, num_classes],
            DescriptorKind::GroundPlane2D => vec![x, y, num_classes],
        };
        if dims != expected {
            return Err(Error::Shape(format!(
                "{kind:?} descriptor dims {dims:?}, expected {expected:?}"
            )));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "descriptor has {} values for dims {dims:?}",
                data.len()
            )));
        }
        if kind == DescriptorKind::Hvr
            && data
                .iter()
                .any(|&v| v < 0.0 || v.fract() != 0.0 || v as usize >= num_classes)
        {
            return Err(Error::Invalid("HVR entries must be class ids in [0, C)".into()));
        }
        Ok(Self {
            grid,
            kind,
            num_classes,
            dims,
            data,
        })
    }

    /// Length of the innermost axis.
    pub fn channels(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn slice(&self, cell: usize) -> &[f64] {
        let c = self.channels();
        &self.data[cell * c..(cell + 1) * c]
    }

    /// Number of cells whose content is not empty space. For HVR this counts
    /// non-empty child voxels; for probability descriptors it counts slices
    /// that differ from the empty-cell convention.
    pub fn non_empty_count(&self) -> usize {
        match self.kind {
            DescriptorKind::Hvr => self.data.iter().filter(|&&v| v != 0.0).count(),
            DescriptorKind::SemVoxel | DescriptorKind::GroundPlane2D => {
                let c = self.channels();
                self.data.chunks(c).filter(|s| !is_empty_slice(s)).count()
            }
            DescriptorKind::Affordance => {
                let c = self.channels();
                let u = 1.0 / c as f64;
                self.data.chunks(c).filter(|s| s.iter().any(|&v| v != u)).count()
            }
        }
    }
}

fn is_empty_slice(s: &[f64]) -> bool {
    s[0] == 1.0
}

fn one_hot_empty(c: usize) -> impl Iterator<Item = f64> {
    (0..c).map(|i| if i == 0 { 1.0 } else { 0.0 })
}

/// Number of mesh vertices lying outside the grid extents. Such vertices are
/// ignored by every builder.
pub fn count_outside(mesh: &SemanticMesh, grid: &GridSpec) -> usize {
    mesh.vertices
        .iter()
        .filter(|v| grid.child_of(v.pos).is_none())
        .count()
}

/// (flat child index in X×Y×Z×M³ layout, label) for every vertex inside the grid.
fn child_assignments(mesh: &SemanticMesh, grid: &GridSpec) -> Vec<(usize, u32)> {
    let m = grid.child_res;
    let per_parent = grid.children_per_parent();
    mesh.vertices
        .iter()
        .filter_map(|v| {
            let c = grid.child_of(v.pos)?;
            let parent = grid.parent_index([c[0] / m, c[1] / m, c[2] / m]);
            let slot = grid.child_slot([c[0] % m, c[1] % m, c[2] % m]);
            Some((parent * per_parent + slot, v.label))
        })
        .collect()
}

/// Builds the hierarchical volumetric representation: each child voxel takes
/// the majority label of the vertices inside it (lowest class id on ties),
/// and empty child voxels take class 0.
pub fn build_hvr(mesh: &SemanticMesh, grid: &GridSpec) -> Result<EnvDescriptor> {
    grid.validate()?;
    let per_parent = grid.children_per_parent();
    let total = grid.num_parents() * per_parent;
    let mut assign = child_assignments(mesh, grid);
    assign.sort_unstable();

    let mut data = vec![0.0; total];
    let mut i = 0;
    while i < assign.len() {
        let cell = assign[i].0;
        let (mut best_label, mut best_count) = (0u32, 0usize);
        while i < assign.len() && assign[i].0 == cell {
            let label = assign[i].1;
            let mut count = 0;
            while i < assign.len() && assign[i] == (cell, label) {
                count += 1;
                i += 1;
            }
            // labels arrive ascending, so strict > keeps the lowest id on ties
            if count > best_count {
                best_label = label;
                best_count = count;
            }
        }
        data[cell] = best_label as f64;
    }

    let [x, y, z] = grid.dims;
    Ok(EnvDescriptor {
        grid: *grid,
        kind: DescriptorKind::Hvr,
        num_classes: mesh.num_classes,
        dims: vec![x, y, z, per_parent],
        data,
    })
}

/// Per-parent-voxel empirical class distribution. Voxels without vertices
/// are one-hot on class 0.
pub fn build_semvoxel(mesh: &SemanticMesh, grid: &GridSpec) -> Result<EnvDescriptor> {
    grid.validate()?;
    let c = mesh.num_classes;
    let n = grid.num_parents();
    let mut counts = vec![0usize; n * c];
    for v in &mesh.vertices {
        if let Some(p) = grid.parent_of(v.pos) {
            counts[grid.parent_index(p) * c + v.label as usize] += 1;
        }
    }
    let mut data = Vec::with_capacity(n * c);
    for cell in counts.chunks(c) {
        let total: usize = cell.iter().sum();
        if total == 0 {
            data.extend(one_hot_empty(c));
        } else {
            data.extend(cell.iter().map(|&k| k as f64 / total as f64));
        }
    }
    let [x, y, z] = grid.dims;
    Ok(EnvDescriptor {
        grid: *grid,
        kind: DescriptorKind::SemVoxel,
        num_classes: c,
        dims: vec![x, y, z, c],
        data,
    })
}

/// Projects a SemVoxel descriptor onto the ground plane by averaging the
/// non-empty cells of each vertical column.
pub fn build_ground_plane(semvoxel: &EnvDescriptor) -> Result<EnvDescriptor> {
    if semvoxel.kind != DescriptorKind::SemVoxel {
        return Err(Error::Invalid(format!(
            "ground plane needs a SemVoxel descriptor, got {:?}",
            semvoxel.kind
        )));
    }
    let [nx, ny, nz] = semvoxel.grid.dims;
    let c = semvoxel.channels();
    let mut data = Vec::with_capacity(nx * ny * c);
    let mut acc = vec![0.0; c];
    for x in 0..nx {
        for y in 0..ny {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut used = 0;
            for z in 0..nz {
                let s = semvoxel.slice(semvoxel.grid.parent_index([x, y, z]));
                if is_empty_slice(s) {
                    continue;
                }
                used += 1;
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
            if used == 0 {
                data.extend(one_hot_empty(c));
            } else {
                let total: f64 = acc.iter().sum();
                data.extend(acc.iter().map(|a| a / total));
            }
        }
    }
    Ok(EnvDescriptor {
        grid: semvoxel.grid,
        kind: DescriptorKind::GroundPlane2D,
        num_classes: semvoxel.num_classes,
        dims: vec![nx, ny, c],
        data,
    })
}

/// Per-voxel empirical distribution of action labels over training clips,
/// keyed by each clip's ground-truth camera position. Unvisited voxels are
/// uniform over the `num_actions` labels. Returns the descriptor and the
/// number of clips skipped for lacking an in-grid position.
pub fn build_affordance(
    episodes: &[EpisodeClip],
    grid: &GridSpec,
    num_actions: usize,
) -> Result<(EnvDescriptor, usize)> {
    grid.validate()?;
    if num_actions == 0 {
        return Err(Error::Invalid("number of actions must be positive".into()));
    }
    let n = grid.num_parents();
    let mut counts = vec![0usize; n * num_actions];
    let mut skipped = 0;
    for ep in episodes {
        if ep.label >= num_actions {
            return Err(Error::Invalid(format!(
                "episode label {} out of range [0, {num_actions})",
                ep.label
            )));
        }
        match ep.true_position.and_then(|p| grid.parent_of(p)) {
            Some(p) => counts[grid.parent_index(p) * num_actions + ep.label] += 1,
            None => skipped += 1,
        }
    }
    let uniform = 1.0 / num_actions as f64;
    let mut data = Vec::with_capacity(n * num_actions);
    for cell in counts.chunks(num_actions) {
        let total: usize = cell.iter().sum();
        if total == 0 {
            data.extend(std::iter::repeat_n(uniform, num_actions));
        } else {
            data.extend(cell.iter().map(|&k| k as f64 / total as f64));
        }
    }
    let [x, y, z] = grid.dims;
    let descriptor = EnvDescriptor {
        grid: *grid,
        kind: DescriptorKind::Affordance,
        num_classes: num_actions,
        dims: vec![x, y, z, num_actions],
        data,
    };
    Ok((descriptor, skipped))
}

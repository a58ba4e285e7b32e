//! Brute-force voxelization: every (vertex, voxel) pair is tested against
//! explicit half-open bounds, with no shared indexing code.

use hvr::diffcore::{Rng, Tensor};
use hvr::location_prior::{CameraTrack, LocationDistribution};
use hvr::mesh_env::{build_affordance, build_ground_plane, build_hvr, build_semvoxel, SemanticMesh, Vertex};
use hvr::model::EpisodeClip;
use hvr::GridSpec;

/// Whether `v` lies in cell `i` of `n` cells of width `w` starting at `o`.
fn in_cell(v: f64, o: f64, w: f64, i: usize, n: usize) -> bool {
    let lo = o + i as f64 * w;
    let hi = o + (i + 1) as f64 * w;
    let top = o + n as f64 * w;
    (v >= lo && v < hi) || (i + 1 == n && v == top)
}

fn inside(grid: &GridSpec, p: [f64; 3]) -> bool {
    (0..3).all(|a| p[a] >= grid.origin[a] && p[a] <= grid.origin[a] + grid.extents[a])
}

/// Parent flat index: z fastest, then y, then x.
fn parent_flat(grid: &GridSpec, x: usize, y: usize, z: usize) -> usize {
    (x * grid.dims[1] + y) * grid.dims[2] + z
}

pub fn oracle_hvr(mesh: &SemanticMesh, grid: &GridSpec) -> Vec<f64> {
    let m = grid.child_res;
    let per = m * m * m;
    let [nx, ny, nz] = grid.dims;
    let w: [f64; 3] = std::array::from_fn(|a| grid.extents[a] / (grid.dims[a] * m) as f64);
    let mut out = vec![0.0; nx * ny * nz * per];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                for cz in 0..m {
                    for cy in 0..m {
                        for cx in 0..m {
                            let gi = [x * m + cx, y * m + cy, z * m + cz];
                            let mut counts = vec![0usize; mesh.num_classes];
                            for v in &mesh.vertices {
                                if inside(grid, v.pos)
                                    && (0..3).all(|a| in_cell(v.pos[a], grid.origin[a], w[a], gi[a], grid.dims[a] * m))
                                {
                                    counts[v.label as usize] += 1;
                                }
                            }
                            let mut best = 0;
                            for c in 1..counts.len() {
                                if counts[c] > counts[best] {
                                    best = c;
                                }
                            }
                            let slot = cx + m * (cy + m * cz);
                            out[parent_flat(grid, x, y, z) * per + slot] = if counts[best] == 0 { 0.0 } else { best as f64 };
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn oracle_semvoxel(mesh: &SemanticMesh, grid: &GridSpec) -> Vec<f64> {
    let c = mesh.num_classes;
    let [nx, ny, nz] = grid.dims;
    let w: [f64; 3] = std::array::from_fn(|a| grid.extents[a] / grid.dims[a] as f64);
    let mut out = vec![0.0; nx * ny * nz * c];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let idx = [x, y, z];
                let mut counts = vec![0usize; c];
                for v in &mesh.vertices {
                    if inside(grid, v.pos) && (0..3).all(|a| in_cell(v.pos[a], grid.origin[a], w[a], idx[a], grid.dims[a])) {
                        counts[v.label as usize] += 1;
                    }
                }
                let total: usize = counts.iter().sum();
                let base = parent_flat(grid, x, y, z) * c;
                for k in 0..c {
                    out[base + k] = if total == 0 {
                        (k == 0) as usize as f64
                    } else {
                        counts[k] as f64 / total as f64
                    };
                }
            }
        }
    }
    out
}

pub fn oracle_ground_plane(semvoxel: &[f64], grid: &GridSpec, c: usize) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims;
    let mut out = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            let cells: Vec<&[f64]> = (0..nz)
                .map(|z| &semvoxel[parent_flat(grid, x, y, z) * c..][..c])
                .filter(|s| !(s[0] == 1.0 && s[1..].iter().all(|&v| v == 0.0)))
                .collect();
            if cells.is_empty() {
                out.extend((0..c).map(|k| (k == 0) as usize as f64));
                continue;
            }
            let sums: Vec<f64> = (0..c).map(|k| cells.iter().map(|s| s[k]).sum()).collect();
            let total: f64 = sums.iter().sum();
            out.extend(sums.iter().map(|s| s / total));
        }
    }
    out
}

pub fn oracle_affordance(visits: &[(usize, Option<[f64; 3]>)], grid: &GridSpec, n: usize) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims;
    let w: [f64; 3] = std::array::from_fn(|a| grid.extents[a] / grid.dims[a] as f64);
    let mut out = vec![0.0; nx * ny * nz * n];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let idx = [x, y, z];
                let mut counts = vec![0usize; n];
                for (label, pos) in visits {
                    if let Some(p) = pos {
                        if inside(grid, *p) && (0..3).all(|a| in_cell(p[a], grid.origin[a], w[a], idx[a], grid.dims[a])) {
                            counts[*label] += 1;
                        }
                    }
                }
                let total: usize = counts.iter().sum();
                let base = parent_flat(grid, x, y, z) * n;
                for k in 0..n {
                    out[base + k] = if total == 0 {
                        1.0 / n as f64
                    } else {
                        counts[k] as f64 / total as f64
                    };
                }
            }
        }
    }
    out
}

/// Random grid (≤ 4 parents per axis, M ≤ 3) and a mesh of up to 500
/// vertices scattered over a box slightly larger than the grid.
pub fn random_case(rng: &mut Rng) -> (SemanticMesh, GridSpec) {
    let dims = [1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)];
    let origin = [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)];
    let extents = [rng.range(0.5, 3.0), rng.range(0.5, 3.0), rng.range(0.5, 3.0)];
    let grid = GridSpec::new(origin, extents, dims, 1 + rng.below(3)).unwrap();
    let c = 2 + rng.below(5);
    let n = 1 + rng.below(500);
    let vertices = (0..n)
        .map(|_| Vertex {
            pos: std::array::from_fn(|a| origin[a] + extents[a] * rng.range(-0.1, 1.1)),
            label: 1 + rng.below(c - 1) as u32,
        })
        .collect();
    (SemanticMesh::new(vertices, Vec::new(), c).unwrap(), grid)
}

fn clip(label: usize, true_position: Option<[f64; 3]>) -> EpisodeClip {
    EpisodeClip {
        obs: Tensor::zeros(&[1, 1, 1, 1, 1]),
        label,
        q: LocationDistribution::uniform([1, 1, 1]),
        track: CameraTrack::default(),
        true_position,
    }
}

/// Compares all four builders with the oracles on one random case.
pub fn check_case(rng: &mut Rng) -> Result<(), String> {
    let (mesh, grid) = random_case(rng);
    let hvr = build_hvr(&mesh, &grid).map_err(|e| e.to_string())?;
    if hvr.data != oracle_hvr(&mesh, &grid) {
        return Err(format!("HVR differs on grid {grid:?}"));
    }
    let sv = build_semvoxel(&mesh, &grid).map_err(|e| e.to_string())?;
    let sv_oracle = oracle_semvoxel(&mesh, &grid);
    if sv.data != sv_oracle {
        return Err(format!("SemVoxel differs on grid {grid:?}"));
    }
    let gp = build_ground_plane(&sv).map_err(|e| e.to_string())?;
    let gp_oracle = oracle_ground_plane(&sv_oracle, &grid, mesh.num_classes);
    if gp.data != gp_oracle {
        return Err(format!("ground plane differs on grid {grid:?}"));
    }
    let n = 2 + rng.below(5);
    let visits: Vec<(usize, Option<[f64; 3]>)> = (0..rng.below(60))
        .map(|_| {
            let pos = if rng.bernoulli(0.1) {
                None
            } else {
                Some(std::array::from_fn(|a| grid.origin[a] + grid.extents[a] * rng.range(-0.1, 1.1)))
            };
            (rng.below(n), pos)
        })
        .collect();
    let clips: Vec<EpisodeClip> = visits.iter().map(|&(y, p)| clip(y, p)).collect();
    let (aff, _) = build_affordance(&clips, &grid, n).map_err(|e| e.to_string())?;
    if aff.data != oracle_affordance(&visits, &grid, n) {
        return Err(format!("affordance differs on grid {grid:?}"));
    }
    Ok(())
}

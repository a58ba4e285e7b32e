mod common;

use common::voxel_oracle::check_case;
use hvr::diffcore::Rng;
use hvr::mesh_env::{build_hvr, build_semvoxel};
use proptest::prelude::*;

#[test]
fn builders_match_brute_force_on_random_meshes() {
    let root = Rng::new(2024);
    for i in 0..100 {
        check_case(&mut root.fork(i)).unwrap_or_else(|e| panic!("case {i}: {e}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn voxelization_ignores_vertex_order(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (mesh, grid) = common::voxel_oracle::random_case(&mut rng);
        let mut shuffled = mesh.clone();
        rng.shuffle(&mut shuffled.vertices);
        prop_assert_eq!(build_hvr(&mesh, &grid).unwrap(), build_hvr(&shuffled, &grid).unwrap());
        prop_assert_eq!(build_semvoxel(&mesh, &grid).unwrap(), build_semvoxel(&shuffled, &grid).unwrap());
    }

    #[test]
    fn probability_descriptors_are_normalized(seed in any::<u64>()) {
        let (mesh, grid) = common::voxel_oracle::random_case(&mut Rng::new(seed));
        let sv = build_semvoxel(&mesh, &grid).unwrap();
        for s in sv.data.chunks(mesh.num_classes) {
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

fn dyadic(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    (rng.range(lo, hi) * 1024.0).round() / 1024.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translating_mesh_and_grid_together_changes_nothing(seed in any::<u64>(), off in prop::array::uniform3(-8i32..8)) {
        let mut rng = Rng::new(seed);
        let dims = [1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)];
        let origin = [dyadic(&mut rng, -2.0, 2.0), dyadic(&mut rng, -2.0, 2.0), dyadic(&mut rng, -2.0, 2.0)];
        let extents = [dims[0] as f64 * 0.5, dims[1] as f64 * 0.25, dims[2] as f64];
        let grid = hvr::GridSpec::new(origin, extents, dims, 1 + rng.below(3)).unwrap();
        let vertices = (0..1 + rng.below(300))
            .map(|_| hvr::mesh_env::Vertex {
                pos: std::array::from_fn(|a| dyadic(&mut rng, origin[a] - 0.2, origin[a] + extents[a] + 0.2)),
                label: 1 + rng.below(3) as u32,
            })
            .collect();
        let mesh = hvr::mesh_env::SemanticMesh::new(vertices, Vec::new(), 4).unwrap();
        let offset = off.map(f64::from);
        let (m2, g2) = (mesh.translated(offset), grid.translated(offset));
        prop_assert_eq!(&build_hvr(&mesh, &grid).unwrap().data, &build_hvr(&m2, &g2).unwrap().data);
        prop_assert_eq!(&build_semvoxel(&mesh, &grid).unwrap().data, &build_semvoxel(&m2, &g2).unwrap().data);
    }
}

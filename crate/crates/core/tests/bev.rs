use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smac_seg::bev::{bev_project, foreground_mask, shift_points, BevSpec, ForegroundSet, OffsetMap};
use smac_seg::range_view::{spherical_project, ProjectionParams};
use smac_seg::scan_io::ClassTaxonomy;
use smac_seg::synth::{generate_scene, SceneSpec};

fn scene_set(seed: u64) -> (ForegroundSet, usize, usize) {
    let scene = generate_scene(&SceneSpec {
        seed,
        num_instances: 20,
        ..SceneSpec::default()
    })
    .unwrap();
    let img = spherical_project(&scene.cloud, ProjectionParams::hdl64()).unwrap();
    let sem = img.project_point_values(&scene.labels.semantic, 0).unwrap();
    let mask = foreground_mask(&sem, &ClassTaxonomy::semantic_kitti());
    (ForegroundSet::gather(&img, &mask).unwrap(), img.height(), img.width())
}

#[test]
fn grid_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for seed in 0..5 {
        let (set, h, w) = scene_set(seed);
        let offsets = OffsetMap::from_vec(
            h,
            w,
            (0..h * w)
                .map(|_| [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)])
                .collect(),
        )
        .unwrap();
        let shifted = shift_points(&set, &offsets).unwrap();
        for cell in [0.3, 0.5, 1.0] {
            let spec = BevSpec::square(cell, 50.0);
            let grid = bev_project(&shifted, spec).unwrap();

            // independent aggregation
            let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
            for (k, e) in shifted.entries.iter().enumerate() {
                let r = ((e.shifted[0] + 50.0) / cell).floor() as usize;
                let c = ((e.shifted[1] + 50.0) / cell).floor() as usize;
                groups.entry((r, c)).or_default().push(k);
            }
            assert_eq!(grid.num_occupied(), groups.len());
            assert_eq!(grid.clamped(), 0);
            let total: usize = grid.cells().iter().map(|c| c.sources.len()).sum();
            assert_eq!(total, shifted.len());
            for (cell_out, ((r, c), members)) in grid.cells().iter().zip(&groups) {
                assert_eq!((cell_out.row, cell_out.col), (*r, *c));
                let n = members.len() as f64;
                let mx = members.iter().map(|&k| shifted.entries[k].shifted[0]).sum::<f64>() / n;
                let my = members.iter().map(|&k| shifted.entries[k].shifted[1]).sum::<f64>() / n;
                assert!((cell_out.coord[0] - mx).abs() < 1e-9 && (cell_out.coord[1] - my).abs() < 1e-9);
                let mut src: Vec<usize> = members
                    .iter()
                    .map(|&k| shifted.flat_index(&shifted.entries[k]))
                    .collect();
                src.sort();
                assert_eq!(cell_out.sources, src);
                for ch in 0..5 {
                    let mf = members.iter().map(|&k| shifted.entries[k].feature[ch]).sum::<f64>() / n;
                    assert!((cell_out.feature[ch] - mf).abs() < 1e-9);
                }
                assert!(grid.is_occupied(*r, *c));
            }
            let occ = grid.occupancy().iter().filter(|&&b| b).count();
            assert_eq!(occ, groups.len());
        }
    }
}

#[test]
fn out_of_range_points_are_clamped_and_counted() {
    let (set, h, w) = scene_set(7);
    let push = OffsetMap::from_vec(h, w, vec![[200.0, -200.0]; h * w]).unwrap();
    let shifted = shift_points(&set, &push).unwrap();
    let grid = bev_project(&shifted, BevSpec::square(0.5, 50.0)).unwrap();
    assert_eq!(grid.clamped(), shifted.len());
    assert!(grid.cells().iter().all(|c| c.row == 199 && c.col == 0));
    assert_eq!(grid.num_occupied(), 1);
}

#[test]
fn reference_grid_is_200_square() {
    let spec = BevSpec::square(0.5, 50.0);
    assert_eq!((spec.rows(), spec.cols()), (200, 200));
    assert_eq!(spec.cell_of([-50.0, -50.0]), ((0, 0), false));
    assert_eq!(spec.cell_of([49.99, 0.1]), ((199, 100), false));
    assert!(spec.cell_of([50.0, 0.0]).1);
    assert!(BevSpec::square(0.0, 50.0).validate().is_err());
}

#[test]
fn mask_follows_taxonomy() {
    let tax = ClassTaxonomy::semantic_kitti();
    assert_eq!(
        foreground_mask(&[0, 1, 8, 9, 19], &tax),
        vec![false, true, true, false, false]
    );
}

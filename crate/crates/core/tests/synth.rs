use std::collections::HashSet;

mod common;

use smac_seg::bev::bev_project;
use smac_seg::config::PipelineConfig;
use smac_seg::pipeline::{segment_projected, SegmentContext, Segmentation};
use smac_seg::range_view::spherical_project;
use smac_seg::synth::{generate_scene, label_centroids, oracle_offsets, Scene, SceneSpec};
use smac_seg::Error;

fn spec(seed: u64, k: usize) -> SceneSpec {
    SceneSpec {
        seed,
        num_instances: k,
        ..SceneSpec::default()
    }
}

#[test]
fn same_seed_same_scene() {
    let (a, b) = (
        generate_scene(&spec(9, 20)).unwrap(),
        generate_scene(&spec(9, 20)).unwrap(),
    );
    assert_eq!(a.cloud, b.cloud);
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.cloud, generate_scene(&spec(10, 20)).unwrap().cloud);
}

#[test]
fn instance_bookkeeping() {
    for seed in 0..10 {
        let s = spec(seed, 5 + seed as usize * 3);
        let scene = generate_scene(&s).unwrap();
        assert_eq!(scene.instances.len(), s.num_instances);
        let ids: HashSet<u32> = scene.labels.instance.iter().copied().filter(|&i| i > 0).collect();
        assert_eq!(ids.len(), s.num_instances);
        for info in &scene.instances {
            assert!(s.thing_classes.contains(&info.class));
            for (&c, &i) in scene.labels.semantic.iter().zip(&scene.labels.instance) {
                if i == info.id {
                    assert_eq!(c, info.class);
                }
            }
        }
        // stored centroid is the mean of the stored f32 coordinates
        let exact = label_centroids(&scene.cloud, &scene.labels);
        for info in &scene.instances {
            let c = exact[&info.id];
            assert!((c[0] - info.centroid[0]).abs() < 1e-9 && (c[1] - info.centroid[1]).abs() < 1e-9);
        }
        for (i, a) in scene.instances.iter().enumerate() {
            for b in &scene.instances[i + 1..] {
                let d = (a.centroid[0] - b.centroid[0]).hypot(a.centroid[1] - b.centroid[1]);
                assert!(d >= s.min_separation, "{d}");
            }
        }
    }
}

#[test]
fn pixels_are_never_shared_across_instances() {
    let s = spec(4, 30);
    let scene = generate_scene(&s).unwrap();
    let image = spherical_project(&scene.cloud, s.projection).unwrap();
    assert_eq!(image.skipped(), 0);
    // points of one instance may stack in a pixel, but the winner carries the same labels
    let labels = &scene.labels;
    for i in 0..scene.cloud.len() {
        let (r, c) = image.point_pixel(i).unwrap();
        let w = image.winner(r, c).unwrap();
        assert_eq!(
            (labels.semantic[w], labels.instance[w]),
            (labels.semantic[i], labels.instance[i])
        );
    }
}

#[test]
fn noiseless_oracle_points_at_centroids() {
    let s = spec(6, 15);
    let scene = generate_scene(&s).unwrap();
    let image = spherical_project(&scene.cloud, s.projection).unwrap();
    let centroids = scene.centroid_map();
    let off = oracle_offsets(&image, &scene.labels, &centroids, 0.0, 0).unwrap();
    for i in 0..scene.cloud.len() {
        let (r, c) = image.point_pixel(i).unwrap();
        let p = scene.cloud.points[image.winner(r, c).unwrap()];
        let d = off.get(r, c);
        match centroids.get(&scene.labels.instance[i]) {
            Some(cen) => {
                assert!((p.x as f64 + d[0] - cen[0]).abs() < 1e-5);
                assert!((p.y as f64 + d[1] - cen[1]).abs() < 1e-5);
            }
            None => assert_eq!(d, [0.0, 0.0]),
        }
    }
    let noisy = oracle_offsets(&image, &scene.labels, &centroids, 1.0, 3).unwrap();
    assert_eq!(
        noisy,
        oracle_offsets(&image, &scene.labels, &centroids, 1.0, 3).unwrap()
    );
    assert_ne!(noisy, off);
    assert!(oracle_offsets(&image, &scene.labels, &centroids, -1.0, 0).is_err());
}

#[test]
fn infeasible_specs_are_reported() {
    assert!(matches!(generate_scene(&spec(1, 500)), Err(Error::Packing(_))));
    let bad = SceneSpec {
        points_per_instance: (10, 5),
        ..spec(1, 3)
    };
    assert!(generate_scene(&bad).is_err());
}

#[test]
fn tight_packing_keeps_every_pair_apart() {
    for seed in 0..20 {
        let s = SceneSpec {
            min_separation: 5.0,
            placement_range: (5.0, 14.0),
            ..spec(seed, 10)
        };
        let scene = generate_scene(&s).unwrap();
        let c = &scene.instances;
        let pairs = (0..10).flat_map(|i| (i + 1..10).map(move |j| (i, j)));
        assert_eq!(pairs.clone().count(), 45);
        for (i, j) in pairs {
            let d = (c[i].centroid[0] - c[j].centroid[0]).hypot(c[i].centroid[1] - c[j].centroid[1]);
            assert!(d >= 5.0, "seed {seed}: {d}");
        }
    }
}

fn segment(scene: &Scene, sigma: f64, noise_seed: u64) -> Segmentation {
    let cfg = PipelineConfig::default();
    let ctx = SegmentContext::from_config(&cfg).unwrap();
    let image = spherical_project(&scene.cloud, cfg.projection).unwrap();
    let pixel_semantics = image.project_point_values(&scene.labels.semantic, 0).unwrap();
    let off = oracle_offsets(&image, &scene.labels, &scene.centroid_map(), sigma, noise_seed).unwrap();
    segment_projected(&image, &pixel_semantics, &off, &ctx).unwrap()
}

#[test]
fn noiseless_offsets_collapse_instances() {
    let scene = generate_scene(&spec(12, 25)).unwrap();
    let seg = segment(&scene, 0.0, 0);
    let grid = bev_project(&seg.foreground, PipelineConfig::default().bev_spec()).unwrap();
    assert!(grid.cells().len() <= scene.instances.len());
}

#[test]
fn mild_noise_still_recovers_the_partition() {
    for seed in 0..10 {
        let s = SceneSpec {
            min_separation: 5.0,
            ..spec(100 + seed, 15)
        };
        let scene = generate_scene(&s).unwrap();
        let seg = segment(&scene, 0.2, seed);
        assert_eq!(
            common::canonical(&seg.labels.instance),
            common::canonical(&scene.labels.instance),
            "seed {seed}"
        );
    }
}

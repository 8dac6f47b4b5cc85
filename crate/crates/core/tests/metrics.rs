use smac_seg::metrics::{compute_scores, evaluate, match_instances, miou, PanopticStats};
use smac_seg::scan_io::{ClassTaxonomy, PointLabels};
use smac_seg::synth::{generate_scene, SceneSpec};

fn labels(runs: &[(u32, u32, usize)]) -> PointLabels {
    let (mut s, mut i) = (Vec::new(), Vec::new());
    for &(class, inst, n) in runs {
        s.extend(std::iter::repeat_n(class, n));
        i.extend(std::iter::repeat_n(inst, n));
    }
    PointLabels::new(s, i).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn iou_of_exactly_half_is_not_a_match() {
    let tax = ClassTaxonomy::semantic_kitti();
    // gt 40 points, pred 20 of them: IoU 0.5
    let gt = labels(&[(1, 1, 40)]);
    let pred = labels(&[(1, 1, 20), (0, 0, 20)]);
    let m = match_instances(&gt, &pred, &tax, 0).unwrap();
    assert_eq!((m[&1].tp_ious.len(), m[&1].fp, m[&1].fn_), (0, 1, 1));
    let pred = labels(&[(1, 1, 21), (0, 0, 19)]);
    let m = match_instances(&gt, &pred, &tax, 0).unwrap();
    assert_eq!((m[&1].tp_ious.len(), m[&1].fp, m[&1].fn_), (1, 0, 0));
}

#[test]
fn small_unmatched_predictions_are_not_false_positives() {
    let tax = ClassTaxonomy::semantic_kitti();
    let gt = labels(&[(1, 1, 30), (9, 0, 30)]);
    // a 10-point spurious car on road points
    let pred = labels(&[(1, 1, 30), (1, 2, 10), (9, 0, 20)]);
    let s = evaluate(&gt, &pred, &tax, 20).unwrap();
    let car = s.per_class.iter().find(|c| c.class == 1).unwrap();
    assert_eq!((car.tp, car.fp, car.fn_), (1, 0, 0));
    let s = evaluate(&gt, &pred, &tax, 5).unwrap();
    let car = s.per_class.iter().find(|c| c.class == 1).unwrap();
    assert_eq!(car.fp, 1);
}

#[test]
fn ignored_ground_truth_points_drop_out() {
    let tax = ClassTaxonomy::semantic_kitti();
    let gt = labels(&[(1, 1, 30), (0, 0, 50)]);
    let pred = labels(&[(1, 1, 30), (9, 0, 50)]);
    let s = evaluate(&gt, &pred, &tax, 20).unwrap();
    assert_eq!((s.pq, s.miou), (1.0, 1.0));
}

#[test]
fn pq_dagger_scores_stuff_by_iou() {
    let tax = ClassTaxonomy::semantic_kitti();
    // road IoU 0.4: unmatched, so PQ_road = 0 but PQ-dagger uses 0.4
    let gt = labels(&[(1, 1, 30), (9, 0, 40), (9, 0, 60)]);
    let pred = labels(&[(1, 1, 30), (9, 0, 40), (10, 0, 60)]);
    let s = evaluate(&gt, &pred, &tax, 20).unwrap();
    assert!(close(s.pq_st, 0.0));
    assert!(close(s.pq_dagger, (1.0 + 0.4 + 0.0) / 3.0));
    assert!(close(s.pq, 1.0 / 3.0));
    let (per, mean) = miou(&gt.semantic, &pred.semantic, &tax).unwrap();
    assert!(close(per[&9], 0.4));
    assert!(close(mean, (1.0 + 0.4) / 2.0));
}

#[test]
fn merged_stats_equal_stats_of_concatenated_scans() {
    let tax = ClassTaxonomy::semantic_kitti();
    let mut merged = PanopticStats::default();
    let (mut all_gt, mut all_pred) = (PointLabels::default(), PointLabels::default());
    for seed in 0..4 {
        let scene = generate_scene(&SceneSpec {
            seed,
            num_instances: 10,
            ..SceneSpec::default()
        })
        .unwrap();
        // corrupt predictions: merge instance pairs and flip some classes
        let mut pred = scene.labels.clone();
        for (k, (s, i)) in pred.semantic.iter_mut().zip(pred.instance.iter_mut()).enumerate() {
            if *i % 3 == 0 && *i > 0 {
                *i += 1;
            }
            if k % 17 == 0 {
                *s = 10;
            }
        }
        merged.merge(&PanopticStats::from_scan(&scene.labels, &pred, &tax, 20).unwrap());
        // disjoint instance ids per scan so concatenation keeps segments apart
        let off = seed as u32 * 1000;
        all_gt.semantic.extend(&scene.labels.semantic);
        all_gt
            .instance
            .extend(scene.labels.instance.iter().map(|&i| if i > 0 { i + off } else { 0 }));
        all_pred.semantic.extend(&pred.semantic);
        all_pred
            .instance
            .extend(pred.instance.iter().map(|&i| if i > 0 { i + off } else { 0 }));
    }
    let whole = PanopticStats::from_scan(&all_gt, &all_pred, &tax, 20).unwrap();
    let (a, b) = (compute_scores(&merged, &tax), compute_scores(&whole, &tax));
    for (x, y) in [
        (a.pq, b.pq),
        (a.rq_th, b.rq_th),
        (a.sq, b.sq),
        (a.miou, b.miou),
        (a.pq_dagger, b.pq_dagger),
    ] {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
    assert!(a.pq < 1.0);
}

#[test]
fn empty_input_scores_zero() {
    let tax = ClassTaxonomy::semantic_kitti();
    let s = evaluate(&PointLabels::default(), &PointLabels::default(), &tax, 20).unwrap();
    assert_eq!((s.pq, s.pq_th, s.miou), (0.0, 0.0, 0.0));
    assert!(evaluate(&labels(&[(1, 1, 3)]), &labels(&[(1, 1, 2)]), &tax, 20).is_err());
}

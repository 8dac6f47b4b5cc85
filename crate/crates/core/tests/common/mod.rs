//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use smac_seg::bev::BevSpec;
use smac_seg::clsa::Offset;
use smac_seg::mlp::Mlp;
use smac_seg::sma::ShiftedBev;
use smac_seg::tensor::FeatureMap;

/// Relabel a partition by order of first appearance, starting at 1.
pub fn canonical(ids: &[u32]) -> Vec<u32> {
    let mut map = HashMap::new();
    ids.iter()
        .map(|id| {
            let next = map.len() as u32 + 1;
            *map.entry(*id).or_insert(next)
        })
        .collect()
}

/// O(n^2) union-find over all pairs within `radius`.
pub fn union_find_partition(positions: &[[f64; 2]], radius: f64) -> Vec<u32> {
    let n = positions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            let d = ((positions[i][0] - positions[j][0]).powi(2) + (positions[i][1] - positions[j][1]).powi(2)).sqrt();
            if d <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<u32> = (0..n).map(|i| find(&mut parent, i) as u32).collect();
    canonical(&roots)
}

/// Random refined BEV: `n` distinct occupied cells with positions jittered up
/// to `jitter` cells away from their cell centre, sometimes clustered in blobs.
pub fn random_shifted_bev(rng: &mut ChaCha8Rng, spec: BevSpec, n: usize, jitter: f64) -> ShiftedBev {
    let (rows, cols) = (spec.rows(), spec.cols());
    let blobs: Vec<(f64, f64)> = (0..rng.random_range(1..12))
        .map(|_| (rng.random_range(0.0..rows as f64), rng.random_range(0.0..cols as f64)))
        .collect();
    let spread = rng.random_range(1.0..20.0);
    let mut taken = std::collections::BTreeSet::new();
    let mut tries = 0;
    while taken.len() < n {
        tries += 1;
        // tight blobs may not hold n cells; fall back to uniform draws
        let (r, c) = if tries < 20 * n {
            let (br, bc) = blobs[rng.random_range(0..blobs.len())];
            (
                (br + rng.random_range(-spread..spread)).clamp(0.0, rows as f64 - 1.0) as usize,
                (bc + rng.random_range(-spread..spread)).clamp(0.0, cols as f64 - 1.0) as usize,
            )
        } else {
            (rng.random_range(0..rows), rng.random_range(0..cols))
        };
        taken.insert((r, c));
    }
    let cells: Vec<(usize, usize)> = taken.into_iter().collect();
    let positions = cells
        .iter()
        .map(|&(r, c)| {
            let x = spec.x_min + (r as f64 + 0.5 + rng.random_range(-jitter..=jitter)) * spec.cell_size;
            let y = spec.y_min + (c as f64 + 0.5 + rng.random_range(-jitter..=jitter)) * spec.cell_size;
            [x, y]
        })
        .collect();
    ShiftedBev { spec, cells, positions }
}

/// Straight enumeration of a CLSA layer: for every location, build the
/// relative-coordinate vector, run the MLP, softmax each (out, in) pair over
/// taps and sum weighted neighbour features. Zero padding outside the image.
pub fn naive_clsa(input: &FeatureMap, coords: &FeatureMap, mlp: &Mlp, offsets: &[Offset], n_out: usize) -> FeatureMap {
    let (h, w, n_in) = (input.height(), input.width(), input.channels());
    let inside = |r: i64, c: i64| r >= 0 && c >= 0 && r < h as i64 && c < w as i64;
    FeatureMap::from_fn(h, w, n_out, |r, c, o| {
        let mut rel = Vec::new();
        for &(di, dj) in offsets {
            let (nr, nc) = (r as i64 + di as i64, c as i64 + dj as i64);
            for ch in 0..coords.channels() {
                rel.push(if inside(nr, nc) {
                    coords.get(nr as usize, nc as usize, ch) - coords.get(r, c, ch)
                } else {
                    0.0
                });
            }
        }
        let logits = mlp.forward(&rel);
        let logit = |k: usize, j: usize| logits[(k * n_out + o) * n_in + j];
        let mut acc = 0.0;
        for j in 0..n_in {
            let z: f64 = (0..offsets.len()).map(|k| logit(k, j).exp()).sum();
            for (k, &(di, dj)) in offsets.iter().enumerate() {
                let (nr, nc) = (r as i64 + di as i64, c as i64 + dj as i64);
                if inside(nr, nc) {
                    acc += logit(k, j).exp() / z * input.get(nr as usize, nc as usize, j);
                }
            }
        }
        acc
    })
}

/// Random instance groups where every point has a unique nearest foreign
/// point, a non-zero distance to it and a repel margin away from zero, so the
/// losses are differentiable at the sample.
pub fn generic_groups(rng: &mut ChaCha8Rng) -> smac_seg::losses::InstanceGroups {
    use smac_seg::losses::{centroid_gaps, InstanceGroups};
    const EPS: f64 = 1e-3;
    loop {
        let n_inst = rng.random_range(2..=5);
        let centroids: Vec<[f64; 2]> = (0..n_inst)
            .map(|_| [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)])
            .collect();
        let points: Vec<Vec<[f64; 2]>> = centroids
            .iter()
            .map(|c| {
                (0..rng.random_range(2..=6))
                    .map(|_| [c[0] + rng.random_range(-2.5..2.5), c[1] + rng.random_range(-2.5..2.5)])
                    .collect()
            })
            .collect();
        let gaps = centroid_gaps(&centroids);
        if gaps.iter().any(|&g| g < 0.5) {
            continue;
        }
        let mut ok = true;
        let mut active = false;
        for (i, g) in points.iter().enumerate() {
            let mean = g
                .iter()
                .fold([0.0; 2], |a, p| [a[0] + p[0], a[1] + p[1]])
                .map(|v| v / g.len() as f64);
            for p in g {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .flat_map(|(_, h)| h.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])))
                    .collect();
                d.sort_by(f64::total_cmp);
                let margin = gaps[i] - d[0];
                ok &= d[0] > EPS && (d.len() < 2 || d[1] - d[0] > EPS) && margin.abs() > EPS;
                ok &= (p[0] - mean[0]).hypot(p[1] - mean[1]) > EPS;
                active |= margin > 0.0;
            }
        }
        if ok && active {
            return InstanceGroups::new(points, centroids).unwrap();
        }
    }
}

/// Random CLSA layer and inputs with every hidden pre-activation at least
/// `margin` away from the ReLU kink.
pub fn generic_clsa(
    rng: &mut ChaCha8Rng,
    shape: smac_seg::clsa::KernelShape,
    size: usize,
    hw: (usize, usize),
    channels: (usize, usize),
    margin: f64,
) -> (FeatureMap, smac_seg::range_view::CoordFeatures, smac_seg::clsa::ClsaMlp) {
    use smac_seg::clsa::{min_relu_margin, ClsaMlp, KernelSpec};
    use smac_seg::range_view::CoordFeatures;
    let (n_in, n_out) = channels;
    let kernel = KernelSpec::new(shape, size).unwrap();
    loop {
        let input = FeatureMap::from_fn(hw.0, hw.1, n_in, |_, _, _| rng.random_range(-1.0..1.0));
        let coords = CoordFeatures::new(FeatureMap::from_fn(hw.0, hw.1, 5, |_, _, _| {
            rng.random_range(-2.0..2.0)
        }))
        .unwrap();
        let dims = ClsaMlp::layer_dims(&kernel, n_in, n_out, [8, 6]);
        let mlp = ClsaMlp::new(kernel.clone(), n_in, n_out, Mlp::random(&dims, 0.6, rng).unwrap()).unwrap();
        if min_relu_margin(&coords, &mlp) > margin {
            return (input, coords, mlp);
        }
    }
}

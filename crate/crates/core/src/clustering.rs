//! Radius BFS clustering of refined BEV positions, back-mapping to points and
//! majority-vote fusion.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::bev::BevGrid;
use crate::range_view::{unproject_labels, RangeImage};
use crate::scan_io::{ClassTaxonomy, PointLabels};
use crate::sma::ShiftedBev;
use crate::{Error, Result};

/// Connected components of the graph linking cells whose positions are at
/// most `radius` apart. Returns a 1-based id per cell; ids follow the
/// row-major order of each component's first cell.
///
/// Neighbour queries go through a hash grid of the positions with the BEV cell
/// size, scanning `ceil(radius / cell) + 1` rings around the query bin.
pub fn bfs_cluster(shifted: &ShiftedBev, radius: f64) -> Result<Vec<u32>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!(
            "clustering radius must be positive, got {radius}"
        )));
    }
    let n = shifted.len();
    let spec = &shifted.spec;
    let r2 = radius * radius;
    let rings = (radius / spec.cell_size).ceil() as i64 + 1;

    let keys: Vec<(i64, i64)> = shifted.positions.iter().map(|p| spec.raw_cell(*p)).collect();
    // live bins plus a key -> slot index; bins are dropped once drained
    let mut bins: Vec<((i64, i64), Vec<usize>)> = Vec::new();
    let mut slot: HashMap<(i64, i64), usize> = HashMap::new();
    for (i, key) in keys.iter().enumerate() {
        let s = *slot.entry(*key).or_insert_with(|| {
            bins.push((*key, Vec::new()));
            bins.len() - 1
        });
        bins[s].1.push(i);
    }
    let window = (2 * rings + 1).saturating_mul(2 * rings + 1) as usize;

    let mut ids = vec![0u32; n];
    let mut next_id = 0u32;
    let mut queue = VecDeque::new();
    let mut near = Vec::new();
    for seed in 0..n {
        if ids[seed] != 0 {
            continue;
        }
        next_id += 1;
        ids[seed] = next_id;
        queue.push_back(seed);
        while let Some(cur) = queue.pop_front() {
            let p = shifted.positions[cur];
            let (br, bc) = keys[cur];
            near.clear();
            // walk whichever is smaller: the live bins or the ring window
            if bins.len() < window {
                near.extend(
                    bins.iter()
                        .enumerate()
                        .filter(|(_, ((r, c), _))| (r - br).abs() <= rings && (c - bc).abs() <= rings)
                        .map(|(i, _)| i),
                );
            } else {
                for r in br - rings..=br + rings {
                    for c in bc - rings..=bc + rings {
                        near.extend(slot.get(&(r, c)));
                    }
                }
            }
            for &b in &near {
                bins[b].1.retain(|&j| {
                    if ids[j] != 0 {
                        return false;
                    }
                    let q = shifted.positions[j];
                    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                    if dx * dx + dy * dy <= r2 {
                        ids[j] = next_id;
                        queue.push_back(j);
                        false
                    } else {
                        true
                    }
                });
            }
            near.sort_unstable_by(|a, b| b.cmp(a));
            for &b in &near {
                if bins[b].1.is_empty() {
                    slot.remove(&bins[b].0);
                    bins.swap_remove(b);
                    if let Some((moved, _)) = bins.get(b) {
                        slot.insert(*moved, b);
                    }
                }
            }
        }
    }
    Ok(ids)
}

/// Instance id per range-image pixel (0 where no occupied cell refers to it).
pub fn backmap_pixels(cluster_ids: &[u32], grid: &BevGrid, num_pixels: usize) -> Result<Vec<u32>> {
    if cluster_ids.len() != grid.num_occupied() {
        return Err(Error::Dimension(format!(
            "{} cluster ids for {} occupied cells",
            cluster_ids.len(),
            grid.num_occupied()
        )));
    }
    let mut pixel_ids = vec![0u32; num_pixels];
    for (cell, &id) in grid.cells().iter().zip(cluster_ids) {
        for &src in &cell.sources {
            let slot = pixel_ids
                .get_mut(src)
                .ok_or_else(|| Error::Dimension(format!("source pixel {src} outside range image")))?;
            *slot = id;
        }
    }
    Ok(pixel_ids)
}

/// Per-point instance ids via each cell's source pixels. Points whose pixel is
/// not foreground get 0.
pub fn backmap(cluster_ids: &[u32], grid: &BevGrid, image: &RangeImage) -> Result<Vec<u32>> {
    let pixel_ids = backmap_pixels(cluster_ids, grid, image.height() * image.width())?;
    unproject_labels(image, &pixel_ids, 0)
}

/// Make every instance semantically pure. The most frequent non-ignored class
/// of an instance wins, ties going to the smaller class id. If that class is
/// a thing class all points of the instance take it; otherwise the instance is
/// dissolved (ids set to 0, semantics untouched).
pub fn fuse_majority(semantic: &[u32], instance: &[u32], taxonomy: &ClassTaxonomy) -> Result<PointLabels> {
    if semantic.len() != instance.len() {
        return Err(Error::Dimension(format!(
            "{} semantic vs {} instance labels",
            semantic.len(),
            instance.len()
        )));
    }
    let mut votes: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for (&s, &i) in semantic.iter().zip(instance) {
        if i != 0 && !taxonomy.is_ignored(s) {
            *votes.entry(i).or_default().entry(s).or_default() += 1;
        }
    }
    let winner: HashMap<u32, Option<u32>> = votes
        .iter()
        .map(|(&inst, counts)| {
            // BTreeMap iterates ascending, so the first maximum is the smallest id
            let (class, _) = counts
                .iter()
                .fold((0u32, 0usize), |best, (&c, &n)| if n > best.1 { (c, n) } else { best });
            (inst, taxonomy.is_thing(class).then_some(class))
        })
        .collect();

    let mut out = PointLabels::new(semantic.to_vec(), instance.to_vec())?;
    for (s, i) in out.semantic.iter_mut().zip(out.instance.iter_mut()) {
        if *i == 0 {
            continue;
        }
        match winner.get(i).copied().flatten() {
            Some(class) => *s = class,
            None => *i = 0,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::BevSpec;

    fn shifted(positions: Vec<[f64; 2]>) -> ShiftedBev {
        ShiftedBev {
            spec: BevSpec::square(0.5, 50.0),
            cells: (0..positions.len()).map(|i| (0, i)).collect(),
            positions,
        }
    }

    #[test]
    fn far_cells_split() {
        let r = 1.2;
        let ids = bfs_cluster(&shifted(vec![[0.0, 0.0], [3.0 * r, 0.0]]), r).unwrap();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn chain_is_one_cluster() {
        let pts = (0..10).map(|i| [i as f64 * 1.1, 0.0]).collect();
        assert_eq!(bfs_cluster(&shifted(pts), 1.2).unwrap(), vec![1; 10]);
    }

    #[test]
    fn distance_equal_to_radius_links() {
        let ids = bfs_cluster(&shifted(vec![[0.0, 0.0], [1.0, 0.0]]), 1.0).unwrap();
        assert_eq!(ids, vec![1, 1]);
    }

    #[test]
    fn huge_radius_single_cluster() {
        let pts = vec![[-40.0, -40.0], [40.0, 40.0], [0.0, 3.0]];
        assert_eq!(bfs_cluster(&shifted(pts), 1e6).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn bad_radius() {
        assert!(bfs_cluster(&shifted(vec![]), 0.0).is_err());
        assert!(bfs_cluster(&shifted(vec![]), f64::NAN).is_err());
    }

    #[test]
    fn majority_vote() {
        let tax = ClassTaxonomy::semantic_kitti();
        // car x9, bicycle x1
        let mut sem = vec![1; 9];
        sem.push(2);
        let out = fuse_majority(&sem, &[3; 10], &tax).unwrap();
        assert_eq!(out.semantic, vec![1; 10]);
        assert_eq!(out.instance, vec![3; 10]);

        // tie between 2 and 4 goes to 2
        let sem: Vec<u32> = [2; 5].into_iter().chain([4; 5]).collect();
        let out = fuse_majority(&sem, &[1; 10], &tax).unwrap();
        assert_eq!(out.semantic, vec![2; 10]);

        // stuff majority dissolves
        let sem = vec![9, 9, 1];
        let out = fuse_majority(&sem, &[5, 5, 5], &tax).unwrap();
        assert_eq!(out.semantic, sem);
        assert_eq!(out.instance, vec![0, 0, 0]);

        // instance 0 untouched
        let out = fuse_majority(&[9, 1], &[0, 0], &tax).unwrap();
        assert_eq!(out.semantic, vec![9, 1]);
        assert!(fuse_majority(&[1], &[], &tax).is_err());
    }
}

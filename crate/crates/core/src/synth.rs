//! Seeded synthetic scenes: disk-shaped thing objects over a flat ground.
//!
//! Randomness comes from ChaCha8 seeded with `SceneSpec::seed`, so a seed
//! produces the same scene on every platform. Scenes are generated so that no
//! range-image pixel (for the projection in the spec) is shared by two
//! segments: a thing point is only kept if its pixel is free or already owned
//! by the same instance, and ground points never land on thing pixels. Points
//! of one instance are drawn in mirrored pairs around the disk center, so the
//! disk center is the exact mean of the instance's points.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bev::OffsetMap;
use crate::range_view::{ProjectionParams, RangeImage, RV_X, RV_Y};
use crate::scan_io::{write_predictions, write_scan, Point, PointCloud, PointLabels};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub num_instances: usize,
    /// Inclusive range of requested points per instance.
    pub points_per_instance: (usize, usize),
    /// Object disk radius range, meters.
    pub radius_range: (f64, f64),
    /// Minimum distance between instance centroids, meters.
    pub min_separation: f64,
    pub ground_points: usize,
    /// Horizontal distance range of instance centroids from the sensor, meters.
    pub placement_range: (f64, f64),
    pub sensor_height: f64,
    pub projection: ProjectionParams,
    pub thing_classes: Vec<u32>,
    pub ground_class: u32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_instances: 20,
            points_per_instance: (40, 120),
            radius_range: (0.4, 1.2),
            min_separation: 4.0,
            ground_points: 4000,
            placement_range: (6.0, 40.0),
            sensor_height: 1.73,
            projection: ProjectionParams::hdl64(),
            thing_classes: (1..=8).collect(),
            ground_class: 9,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (pmin, pmax) = self.points_per_instance;
        let (rmin, rmax) = self.radius_range;
        let (dmin, dmax) = self.placement_range;
        if pmin == 0 || pmin > pmax {
            return Err(Error::Config(format!(
                "bad points_per_instance {:?}",
                self.points_per_instance
            )));
        }
        if !(rmin > 0.0 && rmin <= rmax) {
            return Err(Error::Config(format!("bad radius_range {:?}", self.radius_range)));
        }
        if !(dmin >= 0.0 && dmin < dmax) {
            return Err(Error::Config(format!("bad placement_range {:?}", self.placement_range)));
        }
        if !(self.min_separation >= 0.0) {
            return Err(Error::Config("min_separation must be non-negative".into()));
        }
        if self.num_instances > 0 && self.thing_classes.is_empty() {
            return Err(Error::Config("no thing classes to draw instances from".into()));
        }
        if self.num_instances > 0xFFFF {
            return Err(Error::Config("too many instances for 16-bit ids".into()));
        }
        self.projection.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceInfo {
    pub id: u32,
    pub class: u32,
    /// Mean `(x, y)` of the instance's points.
    pub centroid: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub labels: PointLabels,
    pub instances: Vec<InstanceInfo>,
}

impl Scene {
    pub fn centroid_map(&self) -> HashMap<u32, [f64; 2]> {
        self.instances.iter().map(|i| (i.id, i.centroid)).collect()
    }

    /// Write `<stem>.bin` and `<stem>.label` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, write_scan(&self.cloud)).map_err(|e| Error::io(&bin, e))?;
        let label = dir.join(format!("{stem}.label"));
        std::fs::write(&label, write_predictions(&self.labels)?).map_err(|e| Error::io(&label, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Instance(u32),
    Ground,
}

const PLACEMENT_TRIES: usize = 2000;
// Placement centres are kept this much further apart than required so the
// f32 point means, which drift from the centres by rounding, still satisfy
// the separation.
const SEPARATION_SLACK: f64 = 1e-3;
const POINT_TRIES: usize = 20;

fn sample_annulus(rng: &mut impl Rng, rmin: f64, rmax: f64) -> [f64; 2] {
    let r = rng.random_range(rmin * rmin..=rmax * rmax).sqrt();
    let t = rng.random_range(-PI..PI);
    [r * t.cos(), r * t.sin()]
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dmin, dmax) = spec.placement_range;

    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(spec.num_instances);
    for k in 0..spec.num_instances {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let c = sample_annulus(&mut rng, dmin, dmax);
            let ok = centers
                .iter()
                .all(|o| (o[0] - c[0]).hypot(o[1] - c[1]) >= spec.min_separation + SEPARATION_SLACK);
            if ok {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Packing(format!(
                "could not place instance {} of {} at {} m separation within {:?} m",
                k + 1,
                spec.num_instances,
                spec.min_separation,
                spec.placement_range
            )));
        }
    }

    let proj = &spec.projection;
    let mut owner: HashMap<(usize, usize), Owner> = HashMap::new();
    let mut points = Vec::new();
    let mut semantic = Vec::new();
    let mut instance = Vec::new();
    let mut instances = Vec::with_capacity(spec.num_instances);
    let ground_z = -spec.sensor_height;

    for (k, center) in centers.iter().enumerate() {
        let id = k as u32 + 1;
        let class = spec.thing_classes[rng.random_range(0..spec.thing_classes.len())];
        let radius = rng.random_range(spec.radius_range.0..=spec.radius_range.1);
        let height = rng.random_range(1.2..=2.0);
        let wanted = rng.random_range(spec.points_per_instance.0..=spec.points_per_instance.1);
        let start = points.len();

        let try_claim = |pts: &[Point], owner: &mut HashMap<(usize, usize), Owner>| -> bool {
            let pixels: Vec<_> = pts.iter().filter_map(|p| proj.pixel_of(p)).collect();
            if pixels.len() != pts.len() {
                return false;
            }
            if pixels
                .iter()
                .any(|px| owner.get(px).is_some_and(|o| *o != Owner::Instance(id)))
            {
                return false;
            }
            for px in pixels {
                owner.insert(px, Owner::Instance(id));
            }
            true
        };

        let make_point = |rng: &mut ChaCha8Rng, x: f64, y: f64| {
            let z = ground_z + rng.random_range(0.2..=height);
            Point::new(x as f32, y as f32, z as f32, rng.random_range(0.0..=1.0))
        };

        if wanted % 2 == 1 {
            for _ in 0..POINT_TRIES {
                let p = make_point(&mut rng, center[0], center[1]);
                if try_claim(&[p], &mut owner) {
                    points.push(p);
                    break;
                }
            }
        }
        for _ in 0..wanted / 2 {
            for _ in 0..POINT_TRIES {
                let rr = radius * rng.random_range(0.0..=1.0f64).sqrt();
                let t = rng.random_range(-PI..PI);
                let (dx, dy) = (rr * t.cos(), rr * t.sin());
                let a = make_point(&mut rng, center[0] + dx, center[1] + dy);
                let b = make_point(&mut rng, center[0] - dx, center[1] - dy);
                if try_claim(&[a, b], &mut owner) {
                    points.push(a);
                    points.push(b);
                    break;
                }
            }
        }

        let kept = &points[start..];
        if kept.is_empty() {
            return Err(Error::Packing(format!(
                "instance {id} lost all its points to occlusion"
            )));
        }
        let n = kept.len() as f64;
        let centroid = kept
            .iter()
            .fold([0.0; 2], |a, p| [a[0] + p.x as f64, a[1] + p.y as f64])
            .map(|v| v / n);
        semantic.extend(std::iter::repeat_n(class, kept.len()));
        instance.extend(std::iter::repeat_n(id, kept.len()));
        instances.push(InstanceInfo {
            id,
            class,
            centroid,
            radius,
        });
    }

    let ground_max = dmax + spec.radius_range.1 + 5.0;
    for _ in 0..spec.ground_points {
        for _ in 0..POINT_TRIES {
            let [x, y] = sample_annulus(&mut rng, 3.0, ground_max);
            let z = ground_z + rng.random_range(-0.05..=0.05);
            let p = Point::new(x as f32, y as f32, z as f32, rng.random_range(0.0..=1.0));
            let Some(px) = proj.pixel_of(&p) else {
                continue;
            };
            if matches!(owner.get(&px), Some(Owner::Instance(_))) {
                continue;
            }
            owner.insert(px, Owner::Ground);
            points.push(p);
            semantic.push(spec.ground_class);
            instance.push(0);
            break;
        }
    }

    Ok(Scene {
        cloud: PointCloud::new(points),
        labels: PointLabels::new(semantic, instance)?,
        instances,
    })
}

/// Ideal center offsets: for every valid pixel whose winning point belongs to a
/// known instance, `centroid - (x, y)` plus isotropic Gaussian noise of
/// standard deviation `sigma`. Zero elsewhere.
pub fn oracle_offsets(
    image: &RangeImage,
    labels: &PointLabels,
    centroids: &HashMap<u32, [f64; 2]>,
    sigma: f64,
    noise_seed: u64,
) -> Result<OffsetMap> {
    if labels.len() != image.num_points() {
        return Err(Error::Dimension(format!(
            "{} labels for {} points",
            labels.len(),
            image.num_points()
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("offset noise must be non-negative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (h, w) = (image.height(), image.width());
    let mut off = OffsetMap::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let Some(win) = image.winner(r, c) else {
                continue;
            };
            let Some(center) = centroids.get(&labels.instance[win]) else {
                continue;
            };
            let px = image.features().pixel(r, c);
            let mut d = [center[0] - px[RV_X], center[1] - px[RV_Y]];
            if sigma > 0.0 {
                d[0] += normal.sample(&mut rng);
                d[1] += normal.sample(&mut rng);
            }
            off.set(r, c, d);
        }
    }
    Ok(off)
}

/// Exact per-instance `(x, y)` means computed from labels, keyed by instance id.
pub fn label_centroids(cloud: &PointCloud, labels: &PointLabels) -> HashMap<u32, [f64; 2]> {
    let mut acc: HashMap<u32, ([f64; 2], usize)> = HashMap::new();
    for (p, &i) in cloud.points.iter().zip(&labels.instance) {
        if i == 0 {
            continue;
        }
        let e = acc.entry(i).or_insert(([0.0; 2], 0));
        e.0[0] += p.x as f64;
        e.0[1] += p.y as f64;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(i, (s, n))| (i, [s[0] / n as f64, s[1] / n as f64]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_instances_is_stuff_only() {
        let spec = SceneSpec {
            num_instances: 0,
            ground_points: 200,
            ..Default::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.instances.is_empty());
        assert!(scene.labels.instance.iter().all(|&i| i == 0));
        assert!(scene.labels.semantic.iter().all(|&s| s == 9));
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        let other = SceneSpec {
            seed: 43,
            ..spec.clone()
        };
        assert_ne!(generate_scene(&spec).unwrap(), generate_scene(&other).unwrap());
    }

    #[test]
    fn infeasible_packing() {
        let spec = SceneSpec {
            num_instances: 50,
            min_separation: 20.0,
            placement_range: (5.0, 10.0),
            ..Default::default()
        };
        assert!(matches!(generate_scene(&spec), Err(Error::Packing(_))));
    }
}

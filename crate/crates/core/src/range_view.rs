//! Spherical (range-view) projection of a point cloud.
//!
//! Column comes from azimuth `atan2(y, x)`, row from elevation `asin(z / depth)`
//! scaled linearly into the vertical field of view. When several points fall
//! into one pixel the nearest one wins; equal depths go to the lower index.

use crate::scan_io::{Point, PointCloud};
use crate::tensor::FeatureMap;
use crate::{Error, Result};

/// Channels of [`RangeImage::features`].
pub const RV_CHANNELS: usize = 5;
pub const RV_X: usize = 0;
pub const RV_Y: usize = 1;
pub const RV_Z: usize = 2;
pub const RV_REMISSION: usize = 3;
pub const RV_DEPTH: usize = 4;

/// Channels of [`CoordFeatures`]: x, y, z, depth, occupancy.
pub const COORD_CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    pub height: usize,
    pub width: usize,
    /// Upper edge of the vertical field of view, degrees.
    pub fov_up: f64,
    /// Lower edge of the vertical field of view, degrees (usually negative).
    pub fov_down: f64,
}

impl ProjectionParams {
    /// 64-beam sensor, 64x2048 image.
    pub fn hdl64() -> Self {
        Self {
            height: 64,
            width: 2048,
            fov_up: 3.0,
            fov_down: -25.0,
        }
    }

    /// 32-beam sensor, 32x1024 image.
    pub fn hdl32() -> Self {
        Self {
            height: 32,
            width: 1024,
            fov_up: 10.0,
            fov_down: -30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "range image must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.fov_down < self.fov_up) || !self.fov_up.is_finite() || !self.fov_down.is_finite() {
            return Err(Error::Config(format!(
                "fov_down ({}) must be below fov_up ({})",
                self.fov_down, self.fov_up
            )));
        }
        Ok(())
    }

    /// Pixel `(row, col)` a point projects to, or `None` for a zero-range point.
    pub fn pixel_of(&self, p: &Point) -> Option<(usize, usize)> {
        let depth = p.depth();
        if depth <= 0.0 {
            return None;
        }
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        let up = self.fov_up.to_radians();
        let down = self.fov_down.to_radians();
        let yaw = y.atan2(x);
        let pitch = (z / depth).clamp(-1.0, 1.0).asin();

        let col_f = 0.5 * (1.0 - yaw / std::f64::consts::PI) * self.width as f64;
        let col = (col_f.floor().max(0.0) as usize) % self.width;
        let row_f = (1.0 - (pitch - down) / (up - down)) * self.height as f64;
        let row = (row_f.floor().max(0.0) as usize).min(self.height - 1);
        Some((row, col))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    params: ProjectionParams,
    /// x, y, z, remission, depth per pixel; zeros on invalid pixels.
    features: FeatureMap,
    /// Winning point per pixel.
    winner: Vec<Option<u32>>,
    /// Pixel of every point; `None` for skipped zero-range points.
    point_pixel: Vec<Option<(u32, u32)>>,
    skipped: usize,
}

impl RangeImage {
    pub fn params(&self) -> &ProjectionParams {
        &self.params
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.winner[row * self.width() + col].is_some()
    }

    pub fn winner(&self, row: usize, col: usize) -> Option<usize> {
        self.winner[row * self.width() + col].map(|i| i as usize)
    }

    pub fn point_pixel(&self, point: usize) -> Option<(usize, usize)> {
        self.point_pixel[point].map(|(r, c)| (r as usize, c as usize))
    }

    pub fn num_points(&self) -> usize {
        self.point_pixel.len()
    }

    pub fn num_valid(&self) -> usize {
        self.winner.iter().filter(|w| w.is_some()).count()
    }

    /// Number of zero-range points that were left unprojected.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Geometric features `(x, y, z, depth, occupancy)` for spatial attention.
    pub fn coord_features(&self) -> CoordFeatures {
        let map = FeatureMap::from_fn(self.height(), self.width(), COORD_CHANNELS, |r, c, k| {
            let px = self.features.pixel(r, c);
            match k {
                0 => px[RV_X],
                1 => px[RV_Y],
                2 => px[RV_Z],
                3 => px[RV_DEPTH],
                _ => self.is_valid(r, c) as u8 as f64,
            }
        });
        CoordFeatures(map)
    }

    /// Per-pixel values taken from each pixel's winning point; `fill` elsewhere.
    pub fn project_point_values<T: Copy>(&self, per_point: &[T], fill: T) -> Result<Vec<T>> {
        if per_point.len() != self.num_points() {
            return Err(Error::Dimension(format!(
                "{} point values for {} points",
                per_point.len(),
                self.num_points()
            )));
        }
        Ok(self
            .winner
            .iter()
            .map(|w| w.map_or(fill, |i| per_point[i as usize]))
            .collect())
    }
}

/// Five-channel coordinate map `(x, y, z, depth, occupancy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordFeatures(FeatureMap);

impl CoordFeatures {
    pub fn new(map: FeatureMap) -> Result<Self> {
        if map.channels() != COORD_CHANNELS {
            return Err(Error::Dimension(format!(
                "coordinate map needs {COORD_CHANNELS} channels, got {}",
                map.channels()
            )));
        }
        Ok(Self(map))
    }

    pub fn map(&self) -> &FeatureMap {
        &self.0
    }
}

pub fn spherical_project(cloud: &PointCloud, params: ProjectionParams) -> Result<RangeImage> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let mut winner: Vec<Option<u32>> = vec![None; h * w];
    let mut best_depth = vec![f64::INFINITY; h * w];
    let mut point_pixel = Vec::with_capacity(cloud.len());
    let mut skipped = 0;

    for (i, p) in cloud.points.iter().enumerate() {
        let Some((row, col)) = params.pixel_of(p) else {
            skipped += 1;
            point_pixel.push(None);
            continue;
        };
        point_pixel.push(Some((row as u32, col as u32)));
        let slot = row * w + col;
        // strict comparison keeps the lower index on equal depth
        let d = p.depth();
        if d < best_depth[slot] {
            best_depth[slot] = d;
            winner[slot] = Some(i as u32);
        }
    }

    let mut features = FeatureMap::zeros(h, w, RV_CHANNELS);
    for (slot, win) in winner.iter().enumerate() {
        if let Some(i) = win {
            let p = &cloud.points[*i as usize];
            let px = features.pixel_mut(slot / w, slot % w);
            px[RV_X] = p.x as f64;
            px[RV_Y] = p.y as f64;
            px[RV_Z] = p.z as f64;
            px[RV_REMISSION] = p.r as f64;
            px[RV_DEPTH] = p.depth();
        }
    }

    Ok(RangeImage {
        params,
        features,
        winner,
        point_pixel,
        skipped,
    })
}

/// Copy per-pixel labels back to every point. Skipped points get `sentinel`.
pub fn unproject_labels<T: Copy>(image: &RangeImage, pixel_labels: &[T], sentinel: T) -> Result<Vec<T>> {
    if pixel_labels.len() != image.height() * image.width() {
        return Err(Error::Dimension(format!(
            "label map has {} entries, image is {}x{}",
            pixel_labels.len(),
            image.height(),
            image.width()
        )));
    }
    let w = image.width();
    Ok(image
        .point_pixel
        .iter()
        .map(|px| px.map_or(sentinel, |(r, c)| pixel_labels[r as usize * w + c as usize]))
        .collect())
}

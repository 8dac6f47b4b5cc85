//! Foreground masking, center-offset shifting and the sparse BEV grid.

use std::collections::BTreeMap;
use std::path::Path;

use crate::range_view::{RangeImage, RV_CHANNELS, RV_X, RV_Y};
use crate::scan_io::ClassTaxonomy;
use crate::{Error, Result};

/// Predicted `(dx, dy)` per range-image pixel, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetMap {
    height: usize,
    width: usize,
    data: Vec<[f64; 2]>,
}

impl OffsetMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![[0.0; 2]; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} offsets for a {height}x{width} image",
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("offset map has non-finite entries".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: [f64; 2]) {
        self.data[row * self.width + col] = v;
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.data
    }

    /// Row-major `H x W x 2` little-endian `f32`.
    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 8 {
            return Err(Error::Dimension(format!(
                "offset file has {} bytes, expected {} for {height}x{width}x2 f32",
                bytes.len(),
                height * width * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| {
                [
                    f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
                ]
            })
            .collect();
        Self::from_vec(height, width, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|[dx, dy]| {
                let mut rec = [0u8; 8];
                rec[..4].copy_from_slice(&(*dx as f32).to_le_bytes());
                rec[4..].copy_from_slice(&(*dy as f32).to_le_bytes());
                rec
            })
            .collect()
    }

    pub fn load(height: usize, width: usize, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(height, width, &bytes)
    }
}

/// `true` where the pixel's class is a thing class.
pub fn foreground_mask(pixel_semantics: &[u32], taxonomy: &ClassTaxonomy) -> Vec<bool> {
    pixel_semantics.iter().map(|&c| taxonomy.is_thing(c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundEntry {
    pub original: [f64; 2],
    pub shifted: [f64; 2],
    pub pixel: (usize, usize),
    pub feature: [f64; RV_CHANNELS],
}

/// Thing pixels of a range image, in row-major pixel order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForegroundSet {
    pub entries: Vec<ForegroundEntry>,
    /// Width of the source range image, for flat pixel indices.
    pub image_width: usize,
}

impl ForegroundSet {
    /// Collect valid pixels selected by `mask`. Shifted coordinates start equal
    /// to the originals.
    pub fn gather(image: &RangeImage, mask: &[bool]) -> Result<Self> {
        let (h, w) = (image.height(), image.width());
        if mask.len() != h * w {
            return Err(Error::Dimension(format!(
                "mask has {} entries, image is {h}x{w}",
                mask.len()
            )));
        }
        let mut entries = Vec::new();
        for row in 0..h {
            for col in 0..w {
                if !mask[row * w + col] || !image.is_valid(row, col) {
                    continue;
                }
                let px = image.features().pixel(row, col);
                let mut feature = [0.0; RV_CHANNELS];
                feature.copy_from_slice(px);
                let original = [px[RV_X], px[RV_Y]];
                entries.push(ForegroundEntry {
                    original,
                    shifted: original,
                    pixel: (row, col),
                    feature,
                });
            }
        }
        Ok(Self {
            entries,
            image_width: w,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flat_index(&self, entry: &ForegroundEntry) -> usize {
        entry.pixel.0 * self.image_width + entry.pixel.1
    }
}

/// `shifted = original + offset[pixel]` for every entry.
pub fn shift_points(set: &ForegroundSet, offsets: &OffsetMap) -> Result<ForegroundSet> {
    let mut out = set.clone();
    for e in &mut out.entries {
        let (r, c) = e.pixel;
        if r >= offsets.height || c >= offsets.width {
            return Err(Error::Dimension(format!(
                "pixel ({r}, {c}) outside {}x{} offset map",
                offsets.height, offsets.width
            )));
        }
        let [dx, dy] = offsets.get(r, c);
        e.shifted = [e.original[0] + dx, e.original[1] + dy];
    }
    Ok(out)
}

/// Grid geometry: rows follow x, columns follow y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevSpec {
    pub cell_size: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BevSpec {
    /// Square extent `[-half, half]` in both x and y.
    pub fn square(cell_size: f64, half_extent: f64) -> Self {
        Self {
            cell_size,
            x_min: -half_extent,
            x_max: half_extent,
            y_min: -half_extent,
            y_max: half_extent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cell_size, self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.cell_size <= 0.0 || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::Config(format!("invalid BEV geometry {self:?}")));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell_size).ceil().max(1.0) as usize
    }

    pub fn cols(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell_size).ceil().max(1.0) as usize
    }

    /// Unclamped integer cell of a position.
    pub fn raw_cell(&self, xy: [f64; 2]) -> (i64, i64) {
        (
            ((xy[0] - self.x_min) / self.cell_size).floor() as i64,
            ((xy[1] - self.y_min) / self.cell_size).floor() as i64,
        )
    }

    /// Cell of a position, clamped into the grid; the flag is set when clamping happened.
    pub fn cell_of(&self, xy: [f64; 2]) -> ((usize, usize), bool) {
        let (r, c) = self.raw_cell(xy);
        let rows = self.rows() as i64;
        let cols = self.cols() as i64;
        let rc = r.clamp(0, rows - 1);
        let cc = c.clamp(0, cols - 1);
        ((rc as usize, cc as usize), rc != r || cc != c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevCell {
    pub row: usize,
    pub col: usize,
    /// Mean shifted `(x, y)` of the contributors.
    pub coord: [f64; 2],
    /// Mean range-image feature of the contributors.
    pub feature: [f64; RV_CHANNELS],
    /// Flat range-image pixel indices of the contributors, ascending.
    pub sources: Vec<usize>,
}

/// Sparse BEV map: occupancy, per-cell mean coordinates, and the feature and
/// source-index tables keyed by occupied cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    spec: BevSpec,
    rows: usize,
    cols: usize,
    /// Index into `cells` per grid cell; `u32::MAX` when empty.
    slot: Vec<u32>,
    /// Occupied cells in row-major order.
    cells: Vec<BevCell>,
    clamped: usize,
}

const EMPTY: u32 = u32::MAX;

impl BevGrid {
    /// Build a grid directly from occupied cells.
    pub fn from_cells(spec: BevSpec, mut cells: Vec<BevCell>) -> Result<Self> {
        spec.validate()?;
        let (rows, cols) = (spec.rows(), spec.cols());
        cells.sort_by_key(|c| (c.row, c.col));
        let mut slot = vec![EMPTY; rows * cols];
        for (i, cell) in cells.iter().enumerate() {
            if cell.row >= rows || cell.col >= cols {
                return Err(Error::Dimension(format!(
                    "cell ({}, {}) outside {rows}x{cols} grid",
                    cell.row, cell.col
                )));
            }
            let s = &mut slot[cell.row * cols + cell.col];
            if *s != EMPTY {
                return Err(Error::Dimension(format!("duplicate cell ({}, {})", cell.row, cell.col)));
            }
            *s = i as u32;
        }
        Ok(Self {
            spec,
            rows,
            cols,
            slot,
            cells,
            clamped: 0,
        })
    }

    pub fn spec(&self) -> &BevSpec {
        &self.spec
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[BevCell] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [BevCell] {
        &mut self.cells
    }

    pub fn num_occupied(&self) -> usize {
        self.cells.len()
    }

    /// Entries that fell outside the extent and were clamped to a border cell.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.cell_index(row, col).is_some()
    }

    pub fn cell_index(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        let s = self.slot[row * self.cols + col];
        (s != EMPTY).then_some(s as usize)
    }

    /// Occupied cell at a signed position, if any.
    pub fn cell_at(&self, row: i64, col: i64) -> Option<&BevCell> {
        if row < 0 || col < 0 {
            return None;
        }
        self.cell_index(row as usize, col as usize).map(|i| &self.cells[i])
    }

    /// Dense occupancy mask, row-major.
    pub fn occupancy(&self) -> Vec<bool> {
        self.slot.iter().map(|&s| s != EMPTY).collect()
    }
}

pub fn bev_project(set: &ForegroundSet, spec: BevSpec) -> Result<BevGrid> {
    spec.validate()?;
    struct Acc {
        coord: [f64; 2],
        feature: [f64; RV_CHANNELS],
        sources: Vec<usize>,
    }
    let mut acc: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
    let mut clamped = 0;
    for e in &set.entries {
        let (cell, was_clamped) = spec.cell_of(e.shifted);
        clamped += was_clamped as usize;
        let a = acc.entry(cell).or_insert_with(|| Acc {
            coord: [0.0; 2],
            feature: [0.0; RV_CHANNELS],
            sources: Vec::new(),
        });
        a.coord[0] += e.shifted[0];
        a.coord[1] += e.shifted[1];
        a.feature.iter_mut().zip(&e.feature).for_each(|(s, v)| *s += v);
        a.sources.push(set.flat_index(e));
    }
    let cells = acc
        .into_iter()
        .map(|((row, col), mut a)| {
            let n = a.sources.len() as f64;
            a.sources.sort_unstable();
            BevCell {
                row,
                col,
                coord: [a.coord[0] / n, a.coord[1] / n],
                feature: a.feature.map(|v| v / n),
                sources: a.sources,
            }
        })
        .collect();
    let mut grid = BevGrid::from_cells(spec, cells)?;
    grid.clamped = clamped;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(x: f64, y: f64, pixel: (usize, usize), f0: f64) -> ForegroundEntry {
        let mut feature = [0.0; RV_CHANNELS];
        feature[0] = f0;
        ForegroundEntry {
            original: [x, y],
            shifted: [x, y],
            pixel,
            feature,
        }
    }

    #[test]
    fn shift_adds_offset() {
        let set = ForegroundSet {
            entries: vec![entry(2.0, 3.0, (0, 1), 0.0)],
            image_width: 2,
        };
        let mut off = OffsetMap::zeros(1, 2);
        assert_eq!(shift_points(&set, &off).unwrap(), set);
        off.set(0, 1, [-1.0, 0.5]);
        assert_eq!(shift_points(&set, &off).unwrap().entries[0].shifted, [1.0, 3.5]);
        assert!(shift_points(&set, &OffsetMap::zeros(1, 1)).is_err());
    }

    #[test]
    fn single_point_cell() {
        let set = ForegroundSet {
            entries: vec![entry(1.2, -0.7, (3, 4), 0.0)],
            image_width: 10,
        };
        let grid = bev_project(&set, BevSpec::square(0.5, 50.0)).unwrap();
        assert_eq!((grid.rows(), grid.cols()), (200, 200));
        assert_eq!(grid.num_occupied(), 1);
        let cell = &grid.cells()[0];
        assert_eq!((cell.row, cell.col), (102, 98));
        assert_eq!(cell.coord, [1.2, -0.7]);
        assert_eq!(cell.sources, vec![34]);
        assert!(grid.is_occupied(102, 98));
    }

    #[test]
    fn collisions_average_features() {
        let set = ForegroundSet {
            entries: vec![entry(0.1, 0.1, (0, 1), 1.0), entry(0.2, 0.3, (0, 0), 3.0)],
            image_width: 4,
        };
        let grid = bev_project(&set, BevSpec::square(0.5, 10.0)).unwrap();
        assert_eq!(grid.num_occupied(), 1);
        let cell = &grid.cells()[0];
        assert_eq!(cell.feature[0], 2.0);
        assert!((cell.coord[0] - 0.15).abs() < 1e-12 && (cell.coord[1] - 0.2).abs() < 1e-12);
        assert_eq!(cell.sources, vec![0, 1]);
    }

    #[test]
    fn out_of_extent_clamps() {
        let set = ForegroundSet {
            entries: vec![entry(80.0, -80.0, (0, 0), 0.0)],
            image_width: 1,
        };
        let grid = bev_project(&set, BevSpec::square(0.5, 50.0)).unwrap();
        assert_eq!(grid.clamped(), 1);
        assert_eq!((grid.cells()[0].row, grid.cells()[0].col), (199, 0));
    }

    #[test]
    fn offset_bytes_roundtrip() {
        let off = OffsetMap::from_vec(1, 2, vec![[0.5, -1.25], [3.0, 0.0]]).unwrap();
        assert_eq!(OffsetMap::from_bytes(1, 2, &off.to_bytes()).unwrap(), off);
        assert!(OffsetMap::from_bytes(2, 2, &off.to_bytes()).is_err());
    }

    #[test]
    fn mask_marks_things() {
        let tax = ClassTaxonomy::semantic_kitti();
        let sem = [9, 1, 1, 13, 6, 0];
        assert_eq!(foreground_mask(&sem, &tax), vec![false, true, true, false, true, false]);
    }
}

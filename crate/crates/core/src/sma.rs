//! Sparse multi-directional attention over the BEV grid.
//!
//! Each occupied cell looks along four half-lines of `K + 1` cells (west,
//! east, north, south, each including the cell itself) plus the cell alone,
//! averages the occupied cells' coordinates in each window, and mixes the
//! five centers of mass with softmax weights predicted from its feature.

use crate::bev::{BevGrid, BevSpec};
use crate::mlp::{softmax, Mlp};
use crate::range_view::RV_CHANNELS;
use crate::{Error, Result};

pub const NUM_DIRECTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    West,
    East,
    North,
    South,
    Center,
}

impl Direction {
    pub const ALL: [Direction; NUM_DIRECTIONS] = [
        Direction::West,
        Direction::East,
        Direction::North,
        Direction::South,
        Direction::Center,
    ];

    /// Unit step `(d_row, d_col)` of the window and whether it extends at all.
    fn step(self) -> Option<(i64, i64)> {
        match self {
            Direction::West => Some((0, -1)),
            Direction::East => Some((0, 1)),
            Direction::North => Some((-1, 0)),
            Direction::South => Some((1, 0)),
            Direction::Center => None,
        }
    }
}

/// Centers of mass per occupied cell, aligned with [`BevGrid::cells`].
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalComs {
    pub kernel: usize,
    /// `[W, E, N, S, C]` (x, y) per cell.
    pub coms: Vec<[[f64; 2]; NUM_DIRECTIONS]>,
    /// Occupied cells in each window (always at least 1).
    pub counts: Vec<[usize; NUM_DIRECTIONS]>,
}

pub fn directional_coms(grid: &BevGrid, kernel: usize) -> Result<DirectionalComs> {
    if kernel == 0 {
        return Err(Error::InvalidKernel("SMA kernel must be at least 1".into()));
    }
    let mut coms = Vec::with_capacity(grid.num_occupied());
    let mut counts = Vec::with_capacity(grid.num_occupied());
    for cell in grid.cells() {
        let mut com = [[0.0; 2]; NUM_DIRECTIONS];
        let mut cnt = [0usize; NUM_DIRECTIONS];
        for (d, dir) in Direction::ALL.iter().enumerate() {
            let mut sum = [0.0; 2];
            let mut n = 0;
            let reach = if dir.step().is_some() { kernel as i64 } else { 0 };
            let (sr, sc) = dir.step().unwrap_or((0, 0));
            for i in 0..=reach {
                if let Some(nb) = grid.cell_at(cell.row as i64 + sr * i, cell.col as i64 + sc * i) {
                    sum[0] += nb.coord[0];
                    sum[1] += nb.coord[1];
                    n += 1;
                }
            }
            com[d] = [sum[0] / n as f64, sum[1] / n as f64];
            cnt[d] = n;
        }
        coms.push(com);
        counts.push(cnt);
    }
    Ok(DirectionalComs { kernel, coms, counts })
}

/// Feature -> five direction logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SmaMlp {
    mlp: Mlp,
}

impl SmaMlp {
    pub fn layer_dims(hidden: usize) -> Vec<usize> {
        vec![RV_CHANNELS, hidden, NUM_DIRECTIONS]
    }

    pub fn new(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != RV_CHANNELS || mlp.output_dim() != NUM_DIRECTIONS {
            return Err(Error::Dimension(format!(
                "SMA MLP must map {RV_CHANNELS} features to {NUM_DIRECTIONS} logits, got {:?}",
                mlp.dims()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn zeros(hidden: usize) -> Result<Self> {
        Self::new(Mlp::zeros(&Self::layer_dims(hidden))?)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Softmax attention over `[W, E, N, S, C]`.
    pub fn attention(&self, feature: &[f64]) -> Result<[f64; NUM_DIRECTIONS]> {
        let logits = self.mlp.forward(feature);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("SMA logits are not finite".into()));
        }
        let p = softmax(&logits);
        Ok([p[0], p[1], p[2], p[3], p[4]])
    }
}

/// Final positions after attention, aligned with the grid's occupied cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedBev {
    pub spec: BevSpec,
    /// `(row, col)` of each occupied cell, row-major.
    pub cells: Vec<(usize, usize)>,
    pub positions: Vec<[f64; 2]>,
}

impl ShiftedBev {
    /// Positions without attention (identity), e.g. for plain BFS.
    pub fn unrefined(grid: &BevGrid) -> Self {
        Self {
            spec: *grid.spec(),
            cells: grid.cells().iter().map(|c| (c.row, c.col)).collect(),
            positions: grid.cells().iter().map(|c| c.coord).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn sma_apply(grid: &BevGrid, coms: &DirectionalComs, mlp: &SmaMlp) -> Result<ShiftedBev> {
    if coms.coms.len() != grid.num_occupied() {
        return Err(Error::Dimension(format!(
            "{} COM entries for {} occupied cells",
            coms.coms.len(),
            grid.num_occupied()
        )));
    }
    let positions = grid
        .cells()
        .iter()
        .zip(&coms.coms)
        .map(|(cell, com)| {
            let pi = mlp.attention(&cell.feature)?;
            let mut out = [0.0; 2];
            for (w, c) in pi.iter().zip(com) {
                out[0] += w * c[0];
                out[1] += w * c[1];
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShiftedBev {
        spec: *grid.spec(),
        cells: grid.cells().iter().map(|c| (c.row, c.col)).collect(),
        positions,
    })
}

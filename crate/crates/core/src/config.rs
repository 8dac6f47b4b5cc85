//! Flat `key = value` pipeline configuration.
//!
//! ```text
//! # comments start with '#'
//! input = synthetic            # or a directory of <stem>.bin / <stem>.label files
//! range.preset = hdl64         # hdl64 (64x2048) or hdl32 (32x1024)
//! bev.cell_size = 0.5
//! bev.extent = 50
//! sma.kernel = 7
//! cluster.radius = 1.2
//! offsets = oracle             # oracle | none | file:<path>
//! offsets.sigma = 0.0
//! ```
//!
//! Every key can be overridden from the command line with the same name.

use std::path::{Path, PathBuf};

use crate::bev::BevSpec;
use crate::losses::LossWeights;
use crate::range_view::ProjectionParams;
use crate::scan_io::ClassTaxonomy;
use crate::synth::SceneSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OffsetSource {
    /// Ground-truth centroid minus point, plus Gaussian noise.
    Oracle,
    /// No shifting at all.
    None,
    /// `H x W x 2` f32 file, or a directory of `<stem>.off` files.
    File(PathBuf),
}

impl OffsetSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(OffsetSource::Oracle),
            "none" | "zero" => Ok(OffsetSource::None),
            _ => s
                .strip_prefix("file:")
                .filter(|p| !p.is_empty())
                .map(|p| OffsetSource::File(PathBuf::from(p)))
                .ok_or_else(|| Error::Config(format!("unknown offset source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Synthetic,
    Directory(PathBuf),
}

/// Synthetic batch: `count` scenes with seeds `seed, seed + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub count: usize,
    pub seed: u64,
    pub instances: (usize, usize),
    pub scene: SceneSpec,
}

impl Default for SyntheticBatch {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            instances: (10, 40),
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: InputSource,
    pub synthetic: SyntheticBatch,
    pub projection: ProjectionParams,
    pub taxonomy: Option<PathBuf>,
    pub cell_size: f64,
    pub extent: f64,
    pub sma_kernel: usize,
    pub sma_hidden: usize,
    pub sma_weights: Option<PathBuf>,
    pub radius: f64,
    pub loss_weights: LossWeights,
    pub offsets: OffsetSource,
    pub offset_sigma: f64,
    pub offset_seed: u64,
    pub min_points: usize,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputSource::Synthetic,
            synthetic: SyntheticBatch::default(),
            projection: ProjectionParams::hdl64(),
            taxonomy: None,
            cell_size: 0.5,
            extent: 50.0,
            sma_kernel: 7,
            sma_hidden: 16,
            sma_weights: None,
            radius: 1.2,
            loss_weights: LossWeights::default(),
            offsets: OffsetSource::Oracle,
            offset_sigma: 0.0,
            offset_seed: 0,
            min_points: 20,
            out: None,
            jobs: 1,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Load a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InputSource::Directory(p) = &mut self.input {
            fix(p);
        }
        if let OffsetSource::File(p) = &mut self.offsets {
            fix(p);
        }
        self.taxonomy.as_mut().map(fix);
        self.sma_weights.as_mut().map(fix);
        self.out.as_mut().map(fix);
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let syn = &mut self.synthetic;
        match key {
            "input" => {
                self.input = match value {
                    "synthetic" => InputSource::Synthetic,
                    dir => InputSource::Directory(PathBuf::from(dir)),
                }
            }
            "synthetic.count" => syn.count = num(key, value)?,
            "synthetic.seed" => syn.seed = num(key, value)?,
            "synthetic.instances_min" => syn.instances.0 = num(key, value)?,
            "synthetic.instances_max" => syn.instances.1 = num(key, value)?,
            "synthetic.points_min" => syn.scene.points_per_instance.0 = num(key, value)?,
            "synthetic.points_max" => syn.scene.points_per_instance.1 = num(key, value)?,
            "synthetic.radius_min" => syn.scene.radius_range.0 = num(key, value)?,
            "synthetic.radius_max" => syn.scene.radius_range.1 = num(key, value)?,
            "synthetic.separation" => syn.scene.min_separation = num(key, value)?,
            "synthetic.ground_points" => syn.scene.ground_points = num(key, value)?,
            "synthetic.range_min" => syn.scene.placement_range.0 = num(key, value)?,
            "synthetic.range_max" => syn.scene.placement_range.1 = num(key, value)?,
            "range.preset" => {
                self.projection = match value {
                    "hdl64" | "64x2048" => ProjectionParams::hdl64(),
                    "hdl32" | "32x1024" => ProjectionParams::hdl32(),
                    other => return Err(Error::Config(format!("unknown range preset `{other}`"))),
                }
            }
            "range.height" => self.projection.height = num(key, value)?,
            "range.width" => self.projection.width = num(key, value)?,
            "range.fov_up" => self.projection.fov_up = num(key, value)?,
            "range.fov_down" => self.projection.fov_down = num(key, value)?,
            "taxonomy" => self.taxonomy = Some(PathBuf::from(value)),
            "bev.cell_size" | "grid" => self.cell_size = num(key, value)?,
            "bev.extent" => self.extent = num(key, value)?,
            "sma.kernel" | "kernel" => self.sma_kernel = num(key, value)?,
            "sma.hidden" => self.sma_hidden = num(key, value)?,
            "sma.weights" => self.sma_weights = Some(PathBuf::from(value)),
            "cluster.radius" | "radius" => self.radius = num(key, value)?,
            "loss.wce" => self.loss_weights.wce = num(key, value)?,
            "loss.ls" => self.loss_weights.ls = num(key, value)?,
            "loss.tv" => self.loss_weights.tv = num(key, value)?,
            "loss.l2" => self.loss_weights.l2 = num(key, value)?,
            "loss.repel" => self.loss_weights.repel = num(key, value)?,
            "loss.attract" => self.loss_weights.attract = num(key, value)?,
            "offsets" => self.offsets = OffsetSource::parse(value)?,
            "offsets.sigma" => self.offset_sigma = num(key, value)?,
            "offsets.seed" => self.offset_seed = num(key, value)?,
            "eval.min_points" => self.min_points = num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "jobs" => self.jobs = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.projection.validate()?;
        self.bev_spec().validate()?;
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Config(format!(
                "cluster.radius must be positive, got {}",
                self.radius
            )));
        }
        if self.sma_kernel == 0 || self.sma_hidden == 0 {
            return Err(Error::Config("sma.kernel and sma.hidden must be positive".into()));
        }
        if !(self.offset_sigma >= 0.0) || !self.offset_sigma.is_finite() {
            return Err(Error::Config("offsets.sigma must be non-negative".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.loss_weights.validate()?;
        if self.input == InputSource::Synthetic {
            let (lo, hi) = self.synthetic.instances;
            if lo > hi {
                return Err(Error::Config("synthetic.instances_min exceeds instances_max".into()));
            }
            SceneSpec {
                num_instances: hi,
                ..self.synthetic.scene.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn bev_spec(&self) -> BevSpec {
        BevSpec::square(self.cell_size, self.extent)
    }

    pub fn load_taxonomy(&self) -> Result<ClassTaxonomy> {
        match &self.taxonomy {
            Some(p) => ClassTaxonomy::load(p),
            None => Ok(ClassTaxonomy::semantic_kitti()),
        }
    }
}

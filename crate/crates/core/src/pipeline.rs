//! End-to-end batch runs: project, mask, shift, grid, attend, cluster, fuse,
//! evaluate.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::bev::{bev_project, foreground_mask, shift_points, BevGrid, BevSpec, ForegroundSet, OffsetMap};
use crate::clustering::{backmap, bfs_cluster, fuse_majority};
use crate::config::{InputSource, OffsetSource, PipelineConfig};
use crate::losses::{attract_loss, offset_l2_loss, repel_loss, total_loss, InstanceGroups, LossComponents};
use crate::metrics::{compute_scores, PanopticScores, PanopticStats};
use crate::mlp::Mlp;
use crate::range_view::{spherical_project, unproject_labels, RangeImage};
use crate::scan_io::{read_label_file, read_scan_file, write_predictions, ClassTaxonomy, PointCloud, PointLabels};
use crate::sma::{directional_coms, sma_apply, ShiftedBev, SmaMlp};
use crate::synth::{generate_scene, label_centroids, oracle_offsets, SceneSpec};
use crate::{Error, Result};

/// Everything the clustering path needs besides the scan itself.
#[derive(Debug, Clone)]
pub struct SegmentContext {
    pub taxonomy: ClassTaxonomy,
    pub bev: BevSpec,
    pub kernel: usize,
    pub sma: SmaMlp,
    pub radius: f64,
}

impl SegmentContext {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = SmaMlp::layer_dims(cfg.sma_hidden);
        let sma = match &cfg.sma_weights {
            Some(p) => SmaMlp::new(Mlp::load(&dims, p)?)?,
            None => SmaMlp::new(Mlp::zeros(&dims)?)?,
        };
        Ok(Self {
            taxonomy: cfg.load_taxonomy()?,
            bev: cfg.bev_spec(),
            kernel: cfg.sma_kernel,
            sma,
            radius: cfg.radius,
        })
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub project_ms: f64,
    pub bev_ms: f64,
    pub sma_ms: f64,
    pub cluster_ms: f64,
    pub fuse_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: PointLabels,
    pub foreground: ForegroundSet,
    pub grid: BevGrid,
    pub shifted: ShiftedBev,
    pub cluster_ids: Vec<u32>,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Run the clustering path on a projected scan. `pixel_semantics` holds the
/// semantic prediction per range-image pixel.
pub fn segment_projected(
    image: &RangeImage,
    pixel_semantics: &[u32],
    offsets: &OffsetMap,
    ctx: &SegmentContext,
) -> Result<Segmentation> {
    let t = Instant::now();
    let mask = foreground_mask(pixel_semantics, &ctx.taxonomy);
    let foreground = shift_points(&ForegroundSet::gather(image, &mask)?, offsets)?;
    let grid = bev_project(&foreground, ctx.bev)?;
    let bev_ms = ms(t);

    let t = Instant::now();
    let coms = directional_coms(&grid, ctx.kernel)?;
    let shifted = sma_apply(&grid, &coms, &ctx.sma)?;
    let sma_ms = ms(t);

    let t = Instant::now();
    let cluster_ids = bfs_cluster(&shifted, ctx.radius)?;
    let cluster_ms = ms(t);

    let t = Instant::now();
    let instance = backmap(&cluster_ids, &grid, image)?;
    let semantic = unproject_labels(image, pixel_semantics, 0)?;
    let labels = fuse_majority(&semantic, &instance, &ctx.taxonomy)?;
    let fuse_ms = ms(t);

    Ok(Segmentation {
        labels,
        foreground,
        grid,
        shifted,
        cluster_ids,
        timings: StageTimings {
            project_ms: 0.0,
            bev_ms,
            sma_ms,
            cluster_ms,
            fuse_ms,
        },
    })
}

/// One scan to process.
#[derive(Debug, Clone)]
pub enum ScanJob {
    Synthetic {
        name: String,
        spec: SceneSpec,
    },
    Files {
        name: String,
        scan: PathBuf,
        labels: PathBuf,
        offsets: Option<PathBuf>,
    },
}

impl ScanJob {
    pub fn name(&self) -> &str {
        match self {
            ScanJob::Synthetic { name, .. } | ScanJob::Files { name, .. } => name,
        }
    }

    fn load(&self) -> Result<(PointCloud, PointLabels)> {
        match self {
            ScanJob::Synthetic { spec, .. } => {
                let scene = generate_scene(spec)?;
                Ok((scene.cloud, scene.labels))
            }
            ScanJob::Files { scan, labels, .. } => {
                let cloud = read_scan_file(scan)?;
                let labels = read_label_file(labels, cloud.len())?;
                Ok((cloud, labels))
            }
        }
    }
}

/// Scans described by a config, in a fixed order.
pub fn scan_jobs(cfg: &PipelineConfig) -> Result<Vec<ScanJob>> {
    match &cfg.input {
        InputSource::Synthetic => {
            let batch = &cfg.synthetic;
            Ok((0..batch.count)
                .map(|i| {
                    let seed = batch.seed.wrapping_add(i as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
                    let spec = SceneSpec {
                        seed,
                        num_instances: rng.random_range(batch.instances.0..=batch.instances.1),
                        projection: cfg.projection,
                        ..batch.scene.clone()
                    };
                    ScanJob::Synthetic {
                        name: format!("{i:06}"),
                        spec,
                    }
                })
                .collect())
        }
        InputSource::Directory(dir) => {
            let mut bins: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "bin"))
                .collect();
            bins.sort();
            Ok(bins
                .into_iter()
                .map(|scan| {
                    let name = scan.file_stem().unwrap().to_string_lossy().into_owned();
                    let offsets = match &cfg.offsets {
                        OffsetSource::File(p) if p.is_dir() => Some(p.join(format!("{name}.off"))),
                        OffsetSource::File(p) => Some(p.clone()),
                        _ => None,
                    };
                    ScanJob::Files {
                        labels: scan.with_extension("label"),
                        name,
                        scan,
                        offsets,
                    }
                })
                .collect())
        }
    }
}

/// Per-scan outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub name: String,
    pub points: usize,
    pub foreground: usize,
    pub occupied_cells: usize,
    pub clusters: usize,
    pub clamped: usize,
    pub scores: PanopticScores,
    pub losses: LossComponents,
    #[serde(skip)]
    pub stats: PanopticStats,
    #[serde(skip)]
    pub timings: StageTimings,
    #[serde(skip)]
    pub predictions: PointLabels,
}

/// Repel / attract inputs: refined cell positions grouped by the ground-truth
/// instance that contributes most source pixels to each cell.
pub fn cell_groups(
    seg: &Segmentation,
    pixel_instance: &[u32],
    centroids: &HashMap<u32, [f64; 2]>,
) -> Result<InstanceGroups> {
    let mut groups: std::collections::BTreeMap<u32, Vec<[f64; 2]>> = Default::default();
    for (cell, pos) in seg.grid.cells().iter().zip(&seg.shifted.positions) {
        let mut votes: std::collections::BTreeMap<u32, usize> = Default::default();
        for &src in &cell.sources {
            *votes.entry(pixel_instance[src]).or_default() += 1;
        }
        let (inst, _) = votes
            .into_iter()
            .fold((0, 0), |best, (i, n)| if n > best.1 { (i, n) } else { best });
        if inst != 0 && centroids.contains_key(&inst) {
            groups.entry(inst).or_default().push(*pos);
        }
    }
    let centers = groups.keys().map(|i| centroids[i]).collect();
    InstanceGroups::new(groups.into_values().collect(), centers)
}

fn process_scan(job: &ScanJob, index: usize, cfg: &PipelineConfig, ctx: &SegmentContext) -> Result<ScanReport> {
    let (cloud, gt) = job.load()?;

    let t = Instant::now();
    let image = spherical_project(&cloud, cfg.projection)?;
    let project_ms = ms(t);

    let pixel_sem = image.project_point_values(&gt.semantic, 0)?;
    let pixel_inst = image.project_point_values(&gt.instance, 0)?;
    let centroids = label_centroids(&cloud, &gt);
    let noise_seed = cfg.offset_seed.wrapping_add(index as u64);
    let offsets = match (&cfg.offsets, job) {
        (OffsetSource::Oracle, _) => oracle_offsets(&image, &gt, &centroids, cfg.offset_sigma, noise_seed)?,
        (OffsetSource::None, _) => OffsetMap::zeros(image.height(), image.width()),
        (OffsetSource::File(_), ScanJob::Files { offsets: Some(p), .. }) => {
            OffsetMap::load(image.height(), image.width(), p)?
        }
        (OffsetSource::File(_), _) => {
            return Err(Error::Config("file offsets need directory input".into()));
        }
    };

    let mut seg = segment_projected(&image, &pixel_sem, &offsets, ctx)?;
    seg.timings.project_ms = project_ms;

    let stats = PanopticStats::from_scan(&gt, &seg.labels, &ctx.taxonomy, cfg.min_points)?;
    let scores = compute_scores(&stats, &ctx.taxonomy);

    let target = oracle_offsets(&image, &gt, &centroids, 0.0, 0)?;
    let mask = foreground_mask(&pixel_sem, &ctx.taxonomy);
    let (l2, _) = offset_l2_loss(&offsets, &target, &mask)?;
    let groups = cell_groups(&seg, &pixel_inst, &centroids)?;
    let losses = LossComponents {
        l2,
        repel: repel_loss(&groups).value,
        attract: attract_loss(&groups).value,
        ..Default::default()
    };

    Ok(ScanReport {
        name: job.name().to_string(),
        points: cloud.len(),
        foreground: seg.foreground.len(),
        occupied_cells: seg.grid.num_occupied(),
        clusters: seg.cluster_ids.iter().copied().max().unwrap_or(0) as usize,
        clamped: seg.grid.clamped(),
        scores,
        losses,
        stats,
        timings: seg.timings,
        predictions: seg.labels,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanFailure {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scans: Vec<ScanReport>,
    pub failures: Vec<ScanFailure>,
    pub stats: PanopticStats,
    pub scores: PanopticScores,
    /// Mean over successful scans; the semantic terms are not evaluated.
    pub mean_losses: LossComponents,
}

impl RunReport {
    pub fn metrics_json(&self, cfg: &PipelineConfig) -> serde_json::Value {
        let w = &cfg.loss_weights;
        json!({
            "config": {
                "range_image": [cfg.projection.height, cfg.projection.width],
                "fov": [cfg.projection.fov_up, cfg.projection.fov_down],
                "cell_size": cfg.cell_size,
                "extent": cfg.extent,
                "sma_kernel": cfg.sma_kernel,
                "radius": cfg.radius,
                "offset_sigma": cfg.offset_sigma,
                "min_points": cfg.min_points,
                "loss_weights": w,
            },
            "scores": self.scores,
            "losses": {
                "mean": self.mean_losses,
                "weighted_clustering_terms": total_loss(&self.mean_losses, w),
            },
            "scans": self.scans,
            "failures": self.failures,
        })
    }

    pub fn scans_csv(&self) -> String {
        let header = [
            "name",
            "points",
            "foreground",
            "cells",
            "clusters",
            "pq",
            "pq_th",
            "rq_th",
            "sq_th",
            "pq_st",
            "miou",
            "l2",
            "repel",
            "attract",
        ];
        let rows = self.scans.iter().map(|s| {
            let c = &s.scores;
            let mut row = vec![
                s.name.clone(),
                s.points.to_string(),
                s.foreground.to_string(),
                s.occupied_cells.to_string(),
                s.clusters.to_string(),
            ];
            row.extend(
                [
                    c.pq,
                    c.pq_th,
                    c.rq_th,
                    c.sq_th,
                    c.pq_st,
                    c.miou,
                    s.losses.l2,
                    s.losses.repel,
                    s.losses.attract,
                ]
                .map(|v| format!("{v:.6}")),
            );
            row
        });
        to_csv(&header, rows)
    }

    pub fn timings_csv(&self) -> String {
        let header = ["name", "project_ms", "bev_ms", "sma_ms", "cluster_ms", "fuse_ms"];
        let rows = self.scans.iter().map(|s| {
            let t = &s.timings;
            let mut row = vec![s.name.clone()];
            row.extend([t.project_ms, t.bev_ms, t.sma_ms, t.cluster_ms, t.fuse_ms].map(|v| format!("{v:.3}")));
            row
        });
        to_csv(&header, rows)
    }

    /// Writes `predictions/<name>.label`, `metrics.json`, `scans.csv` and `timings.csv`.
    pub fn write(&self, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
        let pred_dir = dir.join("predictions");
        fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
        for s in &self.scans {
            let p = pred_dir.join(format!("{}.label", s.name));
            fs::write(&p, write_predictions(&s.predictions)?).map_err(|e| Error::io(&p, e))?;
        }
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write(
            "metrics.json",
            serde_json::to_string_pretty(&self.metrics_json(cfg)).expect("report serialises"),
        )?;
        write("scans.csv", self.scans_csv())?;
        write("timings.csv", self.timings_csv())
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))
}

/// Process every scan of the config. Per-scan failures are collected and the
/// run continues; an invalid config fails immediately.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    let ctx = SegmentContext::from_config(cfg)?;
    let jobs = scan_jobs(cfg)?;
    run_jobs(cfg, &ctx, &jobs)
}

pub fn run_jobs(cfg: &PipelineConfig, ctx: &SegmentContext, jobs: &[ScanJob]) -> Result<RunReport> {
    let outcomes: Vec<Result<ScanReport>> = thread_pool(cfg.jobs)?.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(i, job)| process_scan(job, i, cfg, ctx))
            .collect()
    });

    let mut scans = Vec::new();
    let mut failures = Vec::new();
    let mut stats = PanopticStats::default();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(report) => {
                stats.merge(&report.stats);
                scans.push(report);
            }
            Err(e) => failures.push(ScanFailure {
                name: job.name().to_string(),
                error: e.to_string(),
            }),
        }
    }
    let n = scans.len().max(1) as f64;
    let mut mean_losses = LossComponents::default();
    for s in &scans {
        mean_losses.l2 += s.losses.l2 / n;
        mean_losses.repel += s.losses.repel / n;
        mean_losses.attract += s.losses.attract / n;
    }
    Ok(RunReport {
        scores: compute_scores(&stats, &ctx.taxonomy),
        scans,
        failures,
        stats,
        mean_losses,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub cell_size: f64,
    pub kernel: usize,
    pub scans: usize,
    pub failures: usize,
    pub scores: Option<PanopticScores>,
    pub error: Option<String>,
}

/// One run per `(cell_size, kernel)` combination, grid-major.
pub fn sweep(base: &PipelineConfig, cell_sizes: &[f64], kernels: &[usize]) -> Result<Vec<SweepRow>> {
    if cell_sizes.is_empty() || kernels.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    base.validate()?;
    let mut rows = Vec::new();
    for &cell_size in cell_sizes {
        for &kernel in kernels {
            let cfg = PipelineConfig {
                cell_size,
                sma_kernel: kernel,
                out: None,
                ..base.clone()
            };
            rows.push(match run_pipeline(&cfg) {
                Ok(r) => SweepRow {
                    cell_size,
                    kernel,
                    scans: r.scans.len(),
                    failures: r.failures.len(),
                    scores: Some(r.scores),
                    error: None,
                },
                Err(e) => SweepRow {
                    cell_size,
                    kernel,
                    scans: 0,
                    failures: 0,
                    scores: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let header = [
        "grid",
        "kernel",
        "status",
        "scans",
        "pq",
        "pq_dagger",
        "rq",
        "sq",
        "pq_th",
        "rq_th",
        "sq_th",
        "pq_st",
        "rq_st",
        "sq_st",
        "miou",
    ];
    let body = rows.iter().map(|r| {
        let mut row = vec![r.cell_size.to_string(), r.kernel.to_string()];
        match &r.scores {
            Some(s) => {
                row.extend(["ok".to_string(), r.scans.to_string()]);
                row.extend(
                    [
                        s.pq,
                        s.pq_dagger,
                        s.rq,
                        s.sq,
                        s.pq_th,
                        s.rq_th,
                        s.sq_th,
                        s.pq_st,
                        s.rq_st,
                        s.sq_st,
                        s.miou,
                    ]
                    .map(|v| format!("{v:.6}")),
                );
            }
            None => {
                row.extend(["failed".to_string(), "0".to_string()]);
                row.extend(std::iter::repeat_n(String::new(), 11));
            }
        }
        row
    });
    to_csv(&header, body)
}

fn to_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub scans: Vec<String>,
    pub failures: Vec<ScanFailure>,
    pub scores: PanopticScores,
}

/// Score every `<stem>.label` in `gt_dir` against `pred_dir/<stem>.label`.
pub fn evaluate_dirs(
    gt_dir: &Path,
    pred_dir: &Path,
    taxonomy: &ClassTaxonomy,
    min_points: usize,
) -> Result<EvalReport> {
    let mut gts: Vec<PathBuf> = fs::read_dir(gt_dir)
        .map_err(|e| Error::io(gt_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "label"))
        .collect();
    gts.sort();
    let mut stats = PanopticStats::default();
    let mut scans = Vec::new();
    let mut failures = Vec::new();
    for gt_path in gts {
        let name = gt_path.file_stem().unwrap().to_string_lossy().into_owned();
        let pred_path = pred_dir.join(format!("{name}.label"));
        let outcome = (|| -> Result<PanopticStats> {
            let bytes = fs::read(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
            let n = bytes.len() / 4;
            let gt = crate::scan_io::load_labels(&bytes, n)?;
            let pred = read_label_file(&pred_path, n)?;
            PanopticStats::from_scan(&gt, &pred, taxonomy, min_points)
        })();
        match outcome {
            Ok(s) => {
                stats.merge(&s);
                scans.push(name);
            }
            Err(e) => failures.push(ScanFailure {
                name,
                error: e.to_string(),
            }),
        }
    }
    Ok(EvalReport {
        scans,
        failures,
        scores: compute_scores(&stats, taxonomy),
    })
}

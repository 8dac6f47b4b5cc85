use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use smac_seg::config::PipelineConfig;
use smac_seg::pipeline::{evaluate_dirs, run_pipeline, sweep, sweep_csv};
use smac_seg::scan_io::ClassTaxonomy;
use smac_seg::synth::generate_scene;

#[derive(Parser)]
#[command(
    name = "smac-seg",
    version,
    about = "Range-view LiDAR panoptic clustering and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Overrides {
    /// Config file of `key = value` lines. Defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    grid: Option<f64>,
    #[arg(long)]
    kernel: Option<usize>,
    /// oracle | none | file:<path>
    #[arg(long)]
    offsets: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

impl Overrides {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(v) = self.radius {
            cfg.radius = v;
        }
        if let Some(v) = self.grid {
            cfg.cell_size = v;
        }
        if let Some(v) = self.kernel {
            cfg.sma_kernel = v;
        }
        if let Some(v) = &self.offsets {
            cfg.set("offsets", v)?;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Segment a batch of scans and score them.
    Run(Overrides),
    /// Run once per (grid, kernel) combination and write sweep.csv.
    Sweep {
        #[command(flatten)]
        base: Overrides,
        #[arg(long, value_delimiter = ',', required = true)]
        grid_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        kernel_list: Vec<usize>,
    },
    /// Score prediction label files against ground truth label files.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        min_points: usize,
    },
    /// Write synthetic scans as `<stem>.bin` / `<stem>.label` pairs.
    Synth {
        #[command(flatten)]
        base: Overrides,
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run(o) => {
            let cfg = o.config()?;
            let report = run_pipeline(&cfg)?;
            if let Some(dir) = &cfg.out {
                report.write(&cfg, dir)?;
            }
            for f in &report.failures {
                eprintln!("scan {} failed: {}", f.name, f.error);
            }
            let s = &report.scores;
            println!(
                "scans={} failed={} PQ={:.4} PQ_th={:.4} RQ_th={:.4} SQ_th={:.4} mIoU={:.4}",
                report.scans.len(),
                report.failures.len(),
                s.pq,
                s.pq_th,
                s.rq_th,
                s.sq_th,
                s.miou
            );
            if report.scans.is_empty() && !report.failures.is_empty() {
                bail!("every scan failed");
            }
        }
        Cmd::Sweep {
            base,
            grid_list,
            kernel_list,
        } => {
            let cfg = base.config()?;
            let rows = sweep(&cfg, &grid_list, &kernel_list)?;
            let csv = sweep_csv(&rows);
            match &cfg.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join("sweep.csv"), &csv)?;
                }
                None => print!("{csv}"),
            }
        }
        Cmd::Eval {
            gt,
            pred,
            taxonomy,
            min_points,
        } => {
            let tax = match taxonomy {
                Some(p) => ClassTaxonomy::load(&p)?,
                None => ClassTaxonomy::semantic_kitti(),
            };
            let report = evaluate_dirs(&gt, &pred, &tax, min_points)?;
            for f in &report.failures {
                eprintln!("scan {} failed: {}", f.name, f.error);
            }
            println!("{}", serde_json::to_string_pretty(&report.scores)?);
        }
        Cmd::Synth { base, dir } => {
            let cfg = base.config()?;
            fs::create_dir_all(&dir)?;
            for job in smac_seg::pipeline::scan_jobs(&cfg)? {
                if let smac_seg::pipeline::ScanJob::Synthetic { name, spec } = job {
                    generate_scene(&spec)?.export(&dir, &name)?;
                }
            }
        }
    }
    Ok(())
}

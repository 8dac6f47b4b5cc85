//! C ABI for `smac-seg`.
//!
//! Objects are opaque handles created by `*_new` functions and released with
//! the matching `*_free`. Every fallible call returns a [`SmacStatus`]; the
//! message of the most recent failure on the calling thread is available from
//! [`smac_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use smac_seg::bev::OffsetMap;
use smac_seg::config::PipelineConfig;
use smac_seg::metrics::{compute_scores, PanopticScores, PanopticStats};
use smac_seg::pipeline::{run_pipeline, segment_projected, SegmentContext};
use smac_seg::range_view::spherical_project;
use smac_seg::scan_io::{load_labels, write_predictions, ClassTaxonomy, Point, PointCloud, PointLabels};
use smac_seg::synth::{generate_scene, Scene, SceneSpec};
use smac_seg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MalformedScan = 3,
    InvalidPoint = 4,
    LabelCount = 5,
    EncodingOverflow = 6,
    InvalidKernel = 7,
    Dimension = 8,
    Numeric = 9,
    InvalidLabel = 10,
    Packing = 11,
    Config = 12,
    Taxonomy = 13,
    Io = 14,
    Panic = 15,
}

impl From<&Error> for SmacStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::MalformedScan { .. } => SmacStatus::MalformedScan,
            Error::InvalidPoint { .. } => SmacStatus::InvalidPoint,
            Error::LabelCount { .. } => SmacStatus::LabelCount,
            Error::EncodingOverflow { .. } => SmacStatus::EncodingOverflow,
            Error::InvalidKernel(_) => SmacStatus::InvalidKernel,
            Error::Dimension(_) => SmacStatus::Dimension,
            Error::Numeric(_) => SmacStatus::Numeric,
            Error::InvalidLabel { .. } => SmacStatus::InvalidLabel,
            Error::Packing(_) => SmacStatus::Packing,
            Error::Config(_) => SmacStatus::Config,
            Error::Taxonomy(_) => SmacStatus::Taxonomy,
            Error::Io { .. } => SmacStatus::Io,
        }
    }
}

/// Aggregate panoptic scores, all in `[0, 1]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SmacScores {
    pub pq: f64,
    pub pq_dagger: f64,
    pub rq: f64,
    pub sq: f64,
    pub pq_th: f64,
    pub rq_th: f64,
    pub sq_th: f64,
    pub pq_st: f64,
    pub rq_st: f64,
    pub sq_st: f64,
    pub miou: f64,
}

impl From<&PanopticScores> for SmacScores {
    fn from(s: &PanopticScores) -> Self {
        Self {
            pq: s.pq,
            pq_dagger: s.pq_dagger,
            rq: s.rq,
            sq: s.sq,
            pq_th: s.pq_th,
            rq_th: s.rq_th,
            sq_th: s.sq_th,
            pq_st: s.pq_st,
            rq_st: s.rq_st,
            sq_st: s.sq_st,
            miou: s.miou,
        }
    }
}

/// Pipeline settings (`key = value` pairs).
pub struct SmacConfig(PipelineConfig);

/// Clustering path with loaded taxonomy and attention weights.
pub struct SmacSegmenter {
    ctx: SegmentContext,
    config: PipelineConfig,
}

/// Accumulates panoptic statistics over scans.
pub struct SmacEvaluator {
    taxonomy: ClassTaxonomy,
    min_points: usize,
    stats: PanopticStats,
}

/// A generated synthetic scan.
pub struct SmacScene(Scene);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

enum Fail {
    Status(SmacStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(SmacStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Status(SmacStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SmacStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (SmacStatus::Ok, String::new()),
        Ok(Err(Fail::Status(s, m))) => (s, m),
        Ok(Err(Fail::Lib(e))) => ((&e).into(), e.to_string()),
        Err(_) => (SmacStatus::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|l| *l.borrow_mut() = msg);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated). Returns the full message length in bytes, excluding the
/// terminator. Passing a null `buf` only queries the length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn smac_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|l| {
        let msg = l.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smac_config_new(out: *mut *mut SmacConfig) -> SmacStatus {
    guard(|| put(out, SmacConfig(PipelineConfig::default())))
}

/// Configuration from a `key = value` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smac_config_load(path: *const c_char, out: *mut *mut SmacConfig) -> SmacStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, SmacConfig(PipelineConfig::load(Path::new(path))?))
    })
}

/// Set one key, e.g. `("cluster.radius", "1.2")`.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn smac_config_set(cfg: *mut SmacConfig, key: *const c_char, value: *const c_char) -> SmacStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        cfg.0.set(str_arg(key, "key")?, str_arg(value, "value")?)?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from `smac_config_new` / `smac_config_load`.
#[no_mangle]
pub unsafe extern "C" fn smac_config_free(cfg: *mut SmacConfig) {
    free(cfg)
}

/// Run the batch described by `cfg`, writing outputs when `out` is set.
/// `scores` receives the aggregate over all successful scans.
///
/// # Safety
/// `cfg` must be a live handle; `scores` null or valid.
#[no_mangle]
pub unsafe extern "C" fn smac_config_run(cfg: *const SmacConfig, scores: *mut SmacScores) -> SmacStatus {
    guard(|| {
        let cfg = &handle(cfg, "config")?.0;
        let report = run_pipeline(cfg)?;
        if let Some(dir) = &cfg.out {
            report.write(cfg, dir)?;
        }
        if let Some(s) = scores.as_mut() {
            *s = (&report.scores).into();
        }
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smac_segmenter_new(cfg: *const SmacConfig, out: *mut *mut SmacSegmenter) -> SmacStatus {
    guard(|| {
        let config = handle(cfg, "config")?.0.clone();
        let ctx = SegmentContext::from_config(&config)?;
        put(out, SmacSegmenter { ctx, config })
    })
}

/// # Safety
/// `seg` must be null or a handle from `smac_segmenter_new`.
#[no_mangle]
pub unsafe extern "C" fn smac_segmenter_free(seg: *mut SmacSegmenter) {
    free(seg)
}

/// Segment one scan.
///
/// * `points`: `n * 4` floats `(x, y, z, remission)`.
/// * `semantic`: `n` predicted class ids.
/// * `offsets`: `n * 2` predicted `(dx, dy)` per point, or null for none.
/// * `out_semantic`, `out_instance`: `n` fused labels each; points that do
///   not reach the range image get class and instance 0.
///
/// # Safety
/// All non-null pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn smac_segmenter_run(
    seg: *const SmacSegmenter,
    points: *const f32,
    semantic: *const u32,
    offsets: *const f32,
    n: usize,
    out_semantic: *mut u32,
    out_instance: *mut u32,
) -> SmacStatus {
    guard(|| {
        let seg = handle(seg, "segmenter")?;
        let raw = slice(points, n * 4, "points")?;
        let semantic = slice(semantic, n, "semantic")?;
        let cloud = PointCloud::new(
            raw.chunks_exact(4)
                .map(|p| Point::new(p[0], p[1], p[2], p[3]))
                .collect(),
        );
        let image = spherical_project(&cloud, seg.config.projection)?;
        let pixel_sem = image.project_point_values(semantic, 0)?;
        let offset_map = if offsets.is_null() {
            OffsetMap::zeros(image.height(), image.width())
        } else {
            let per_point: Vec<[f64; 2]> = slice(offsets, n * 2, "offsets")?
                .chunks_exact(2)
                .map(|o| [o[0] as f64, o[1] as f64])
                .collect();
            OffsetMap::from_vec(
                image.height(),
                image.width(),
                image.project_point_values(&per_point, [0.0, 0.0])?,
            )?
        };
        let result = segment_projected(&image, &pixel_sem, &offset_map, &seg.ctx)?;
        slice_mut(out_semantic, n, "out_semantic")?.copy_from_slice(&result.labels.semantic);
        slice_mut(out_instance, n, "out_instance")?.copy_from_slice(&result.labels.instance);
        Ok(())
    })
}

/// Evaluator over a class taxonomy given as text (`id: name` lines plus
/// `things:` / `ignore:` lines), or the default 20-class taxonomy when null.
/// Ground-truth instances with fewer than `min_points` points are ignored.
///
/// # Safety
/// `taxonomy` must be null or NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smac_evaluator_new(
    taxonomy: *const c_char,
    min_points: usize,
    out: *mut *mut SmacEvaluator,
) -> SmacStatus {
    guard(|| {
        let taxonomy = if taxonomy.is_null() {
            ClassTaxonomy::semantic_kitti()
        } else {
            ClassTaxonomy::parse(str_arg(taxonomy, "taxonomy")?)?
        };
        put(
            out,
            SmacEvaluator {
                taxonomy,
                min_points,
                stats: PanopticStats::default(),
            },
        )
    })
}

/// Add one scan of `n` points.
///
/// # Safety
/// `ev` must be a live handle and every array must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn smac_evaluator_add(
    ev: *mut SmacEvaluator,
    gt_semantic: *const u32,
    gt_instance: *const u32,
    pred_semantic: *const u32,
    pred_instance: *const u32,
    n: usize,
) -> SmacStatus {
    guard(|| {
        let ev = handle_mut(ev, "evaluator")?;
        let gt = PointLabels::new(
            slice(gt_semantic, n, "gt_semantic")?.to_vec(),
            slice(gt_instance, n, "gt_instance")?.to_vec(),
        )?;
        let pred = PointLabels::new(
            slice(pred_semantic, n, "pred_semantic")?.to_vec(),
            slice(pred_instance, n, "pred_instance")?.to_vec(),
        )?;
        let stats = PanopticStats::from_scan(&gt, &pred, &ev.taxonomy, ev.min_points)?;
        ev.stats.merge(&stats);
        Ok(())
    })
}

/// # Safety
/// `ev` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smac_evaluator_scores(ev: *const SmacEvaluator, out: *mut SmacScores) -> SmacStatus {
    guard(|| {
        let ev = handle(ev, "evaluator")?;
        let out = out.as_mut().ok_or_else(|| null("scores"))?;
        *out = (&compute_scores(&ev.stats, &ev.taxonomy)).into();
        Ok(())
    })
}

/// # Safety
/// `ev` must be null or a handle from `smac_evaluator_new`.
#[no_mangle]
pub unsafe extern "C" fn smac_evaluator_free(ev: *mut SmacEvaluator) {
    free(ev)
}

/// Pack labels into `.label` words (`semantic | instance << 16`).
///
/// # Safety
/// Arrays must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn smac_labels_encode(
    semantic: *const u32,
    instance: *const u32,
    n: usize,
    out: *mut u32,
) -> SmacStatus {
    guard(|| {
        let labels = PointLabels::new(
            slice(semantic, n, "semantic")?.to_vec(),
            slice(instance, n, "instance")?.to_vec(),
        )?;
        let bytes = write_predictions(&labels)?;
        for (o, w) in slice_mut(out, n, "out")?.iter_mut().zip(bytes.chunks_exact(4)) {
            *o = u32::from_le_bytes(w.try_into().unwrap());
        }
        Ok(())
    })
}

/// Split `.label` words into semantic and instance ids.
///
/// # Safety
/// Arrays must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn smac_labels_decode(
    words: *const u32,
    n: usize,
    semantic: *mut u32,
    instance: *mut u32,
) -> SmacStatus {
    guard(|| {
        let bytes: Vec<u8> = slice(words, n, "words")?.iter().flat_map(|w| w.to_le_bytes()).collect();
        let labels = load_labels(&bytes, n)?;
        slice_mut(semantic, n, "semantic")?.copy_from_slice(&labels.semantic);
        slice_mut(instance, n, "instance")?.copy_from_slice(&labels.instance);
        Ok(())
    })
}

/// Generate a synthetic scan with default settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smac_scene_generate(seed: u64, num_instances: usize, out: *mut *mut SmacScene) -> SmacStatus {
    guard(|| {
        let spec = SceneSpec {
            seed,
            num_instances,
            ..SceneSpec::default()
        };
        put(out, SmacScene(generate_scene(&spec)?))
    })
}

/// Number of points in the scene, or 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smac_scene_len(scene: *const SmacScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.cloud.len())
}

/// Copy points (`n * 4` floats) and labels (`n` each) out of the scene.
/// Any output may be null to skip it.
///
/// # Safety
/// Non-null outputs must have room for `smac_scene_len(scene)` records.
#[no_mangle]
pub unsafe extern "C" fn smac_scene_copy(
    scene: *const SmacScene,
    points: *mut f32,
    semantic: *mut u32,
    instance: *mut u32,
) -> SmacStatus {
    guard(|| {
        let s = &handle(scene, "scene")?.0;
        let n = s.cloud.len();
        if !points.is_null() {
            for (o, p) in slice_mut(points, n * 4, "points")?
                .chunks_exact_mut(4)
                .zip(&s.cloud.points)
            {
                o.copy_from_slice(&[p.x, p.y, p.z, p.r]);
            }
        }
        if !semantic.is_null() {
            slice_mut(semantic, n, "semantic")?.copy_from_slice(&s.labels.semantic);
        }
        if !instance.is_null() {
            slice_mut(instance, n, "instance")?.copy_from_slice(&s.labels.instance);
        }
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from `smac_scene_generate`.
#[no_mangle]
pub unsafe extern "C" fn smac_scene_free(scene: *mut SmacScene) {
    free(scene)
}

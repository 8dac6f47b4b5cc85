//! Panoptic quality (PQ, PQ-dagger, RQ, SQ) and mIoU over per-point labels.
//!
//! Thing classes are matched segment by segment (segments are `(class,
//! instance)` point sets with instance > 0); each stuff class is a single
//! segment. A ground-truth and predicted segment match when their IoU exceeds
//! 0.5, which makes matches unique. Points whose ground-truth class is ignored
//! are dropped from both sides.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::scan_io::{ClassTaxonomy, PointLabels};
use crate::{Error, Result};

/// Zero instance ids of `(class, instance)` segments with fewer than `min_points` points.
pub fn filter_small_instances(labels: &PointLabels, min_points: usize) -> PointLabels {
    let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
    for (&s, &i) in labels.semantic.iter().zip(&labels.instance) {
        if i != 0 {
            *counts.entry((s, i)).or_default() += 1;
        }
    }
    let instance = labels
        .semantic
        .iter()
        .zip(&labels.instance)
        .map(|(&s, &i)| if i != 0 && counts[&(s, i)] < min_points { 0 } else { i })
        .collect();
    PointLabels {
        semantic: labels.semantic.clone(),
        instance,
    }
}

/// Matching outcome for one class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassMatch {
    /// IoU of every matched pair, in deterministic order.
    pub tp_ious: Vec<f64>,
    pub fp: usize,
    pub fn_: usize,
}

fn check_lengths(gt: &PointLabels, pred: &PointLabels) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "{} ground-truth vs {} predicted labels",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Match segments class by class. Unmatched predicted thing segments smaller
/// than `min_points` are not counted as false positives.
pub fn match_instances(
    gt: &PointLabels,
    pred: &PointLabels,
    taxonomy: &ClassTaxonomy,
    min_points: usize,
) -> Result<BTreeMap<u32, ClassMatch>> {
    check_lengths(gt, pred)?;
    // segment key: (class, instance); stuff segments use instance 0
    let seg_key = |class: u32, inst: u32| -> Option<(u32, u32)> {
        if taxonomy.is_thing(class) {
            (inst != 0).then_some((class, inst))
        } else if taxonomy.is_stuff(class) {
            Some((class, 0))
        } else {
            None
        }
    };
    let mut gt_size: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let mut pred_size: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    type Key = (u32, u32);
    let mut inter: BTreeMap<(Key, Key), usize> = BTreeMap::new();
    for k in 0..gt.len() {
        let gs = gt.semantic[k];
        if taxonomy.is_ignored(gs) {
            continue;
        }
        let g = seg_key(gs, gt.instance[k]);
        let p = seg_key(pred.semantic[k], pred.instance[k]);
        if let Some(g) = g {
            *gt_size.entry(g).or_default() += 1;
        }
        if let Some(p) = p {
            *pred_size.entry(p).or_default() += 1;
        }
        if let (Some(g), Some(p)) = (g, p) {
            if g.0 == p.0 {
                *inter.entry((g, p)).or_default() += 1;
            }
        }
    }

    let mut out: BTreeMap<u32, ClassMatch> = BTreeMap::new();
    let mut gt_matched: HashMap<(u32, u32), bool> = HashMap::new();
    let mut pred_matched: HashMap<(u32, u32), bool> = HashMap::new();
    for (&(g, p), &n) in &inter {
        let union = gt_size[&g] + pred_size[&p] - n;
        let iou = n as f64 / union as f64;
        if iou > 0.5 {
            out.entry(g.0).or_default().tp_ious.push(iou);
            gt_matched.insert(g, true);
            pred_matched.insert(p, true);
        }
    }
    for g in gt_size.keys() {
        if !gt_matched.contains_key(g) {
            out.entry(g.0).or_default().fn_ += 1;
        }
    }
    for (p, &n) in &pred_size {
        let small_thing = taxonomy.is_thing(p.0) && n < min_points;
        if !pred_matched.contains_key(p) && !small_thing {
            out.entry(p.0).or_default().fp += 1;
        }
    }
    Ok(out)
}

/// Per-class semantic intersection and union point counts.
pub fn semantic_overlap(gt: &[u32], pred: &[u32], taxonomy: &ClassTaxonomy) -> Result<BTreeMap<u32, (u64, u64, u64)>> {
    if gt.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "{} vs {} semantic labels",
            gt.len(),
            pred.len()
        )));
    }
    // (intersection, gt count, pred count)
    let mut acc: BTreeMap<u32, (u64, u64, u64)> = taxonomy.evaluated_classes().map(|c| (c, (0, 0, 0))).collect();
    for (&g, &p) in gt.iter().zip(pred) {
        if taxonomy.is_ignored(g) {
            continue;
        }
        if let Some(e) = acc.get_mut(&g) {
            e.1 += 1;
            if g == p {
                e.0 += 1;
            }
        }
        if let Some(e) = acc.get_mut(&p) {
            e.2 += 1;
        }
    }
    Ok(acc)
}

/// Per-class IoU over classes present in the ground truth, and their mean.
pub fn miou(gt: &[u32], pred: &[u32], taxonomy: &ClassTaxonomy) -> Result<(BTreeMap<u32, f64>, f64)> {
    let overlap = semantic_overlap(gt, pred, taxonomy)?;
    let per_class: BTreeMap<u32, f64> = overlap
        .into_iter()
        .filter(|(_, (_, g, _))| *g > 0)
        .map(|(c, (i, g, p))| (c, i as f64 / (g + p - i) as f64))
        .collect();
    let mean = mean(per_class.values().copied());
    Ok((per_class, mean))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
    pub intersection: u64,
    pub gt_points: u64,
    pub pred_points: u64,
}

impl ClassStats {
    fn merge(&mut self, o: &ClassStats) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.iou_sum += o.iou_sum;
        self.intersection += o.intersection;
        self.gt_points += o.gt_points;
        self.pred_points += o.pred_points;
    }

    fn union(&self) -> u64 {
        self.gt_points + self.pred_points - self.intersection
    }
}

/// Mergeable accumulator over scans.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanopticStats {
    pub classes: BTreeMap<u32, ClassStats>,
}

impl PanopticStats {
    /// Statistics of one scan. The small-instance filter is applied to the
    /// ground truth before matching.
    pub fn from_scan(
        gt: &PointLabels,
        pred: &PointLabels,
        taxonomy: &ClassTaxonomy,
        min_points: usize,
    ) -> Result<Self> {
        let gt = filter_small_instances(gt, min_points);
        let matches = match_instances(&gt, pred, taxonomy, min_points)?;
        let overlap = semantic_overlap(&gt.semantic, &pred.semantic, taxonomy)?;
        let mut classes: BTreeMap<u32, ClassStats> = BTreeMap::new();
        for (c, (i, g, p)) in overlap {
            let s = classes.entry(c).or_default();
            s.intersection = i;
            s.gt_points = g;
            s.pred_points = p;
        }
        for (c, m) in matches {
            let s = classes.entry(c).or_default();
            s.tp = m.tp_ious.len() as u64;
            s.fp = m.fp as u64;
            s.fn_ = m.fn_ as u64;
            s.iou_sum = m.tp_ious.iter().sum();
        }
        Ok(Self { classes })
    }

    pub fn merge(&mut self, other: &PanopticStats) {
        for (c, s) in &other.classes {
            self.classes.entry(*c).or_default().merge(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub class: u32,
    pub name: String,
    pub thing: bool,
    pub pq: f64,
    pub rq: f64,
    pub sq: f64,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Aggregates are macro-averages over classes with at least one segment
/// (TP + FP + FN > 0); mIoU averages over classes present in the ground truth.
/// Empty averages are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanopticScores {
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
    pub per_class: Vec<ClassScore>,
}

pub fn compute_scores(stats: &PanopticStats, taxonomy: &ClassTaxonomy) -> PanopticScores {
    let mut per_class = Vec::new();
    for c in taxonomy.evaluated_classes() {
        let s = stats.classes.get(&c).copied().unwrap_or_default();
        let sq = if s.tp > 0 { s.iou_sum / s.tp as f64 } else { 0.0 };
        let denom = s.tp as f64 + 0.5 * s.fp as f64 + 0.5 * s.fn_ as f64;
        let rq = if denom > 0.0 { s.tp as f64 / denom } else { 0.0 };
        let iou = if s.union() > 0 {
            s.intersection as f64 / s.union() as f64
        } else {
            0.0
        };
        per_class.push((
            s,
            ClassScore {
                class: c,
                name: taxonomy.name(c).unwrap_or_default().to_string(),
                thing: taxonomy.is_thing(c),
                pq: sq * rq,
                rq,
                sq,
                iou,
                tp: s.tp,
                fp: s.fp,
                fn_: s.fn_,
            },
        ));
    }

    let segmented = |filter: fn(&ClassScore) -> bool| {
        per_class
            .iter()
            .filter(move |(s, cs)| s.tp + s.fp + s.fn_ > 0 && filter(cs))
            .map(|(_, cs)| cs)
    };
    let avg = |filter: fn(&ClassScore) -> bool, pick: fn(&ClassScore) -> f64| mean(segmented(filter).map(pick));
    let all = |_: &ClassScore| true;
    let th = |c: &ClassScore| c.thing;
    let st = |c: &ClassScore| !c.thing;

    PanopticScores {
        pq: avg(all, |c| c.pq),
        pq_dagger: avg(all, |c| if c.thing { c.pq } else { c.iou }),
        rq: avg(all, |c| c.rq),
        sq: avg(all, |c| c.sq),
        pq_th: avg(th, |c| c.pq),
        rq_th: avg(th, |c| c.rq),
        sq_th: avg(th, |c| c.sq),
        pq_st: avg(st, |c| c.pq),
        rq_st: avg(st, |c| c.rq),
        sq_st: avg(st, |c| c.sq),
        miou: mean(per_class.iter().filter(|(s, _)| s.gt_points > 0).map(|(_, cs)| cs.iou)),
        per_class: per_class.into_iter().map(|(_, cs)| cs).collect(),
    }
}

/// Score a single scan.
pub fn evaluate(
    gt: &PointLabels,
    pred: &PointLabels,
    taxonomy: &ClassTaxonomy,
    min_points: usize,
) -> Result<PanopticScores> {
    Ok(compute_scores(
        &PanopticStats::from_scan(gt, pred, taxonomy, min_points)?,
        taxonomy,
    ))
}

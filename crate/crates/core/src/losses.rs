//! Clustering and regression losses with analytic (sub)gradients, plus a
//! central-difference gradient harness.
//!
//! Repel and attract losses act on final BEV positions grouped by ground-truth
//! instance. Both are averaged per instance and then over instances.

use serde::{Deserialize, Serialize};

use crate::bev::OffsetMap;
use crate::{Error, Result};

pub type Xy = [f64; 2];

/// Final positions grouped by instance, with each instance's ground-truth centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGroups {
    points: Vec<Vec<Xy>>,
    centroids: Vec<Xy>,
}

impl InstanceGroups {
    pub fn new(points: Vec<Vec<Xy>>, centroids: Vec<Xy>) -> Result<Self> {
        if points.len() != centroids.len() {
            return Err(Error::Dimension(format!(
                "{} point groups but {} centroids",
                points.len(),
                centroids.len()
            )));
        }
        if points.iter().any(Vec::is_empty) {
            return Err(Error::Dimension("every instance needs at least one point".into()));
        }
        let finite = |p: &Xy| p[0].is_finite() && p[1].is_finite();
        if !centroids.iter().all(finite) || !points.iter().flatten().all(finite) {
            return Err(Error::Numeric("non-finite instance coordinates".into()));
        }
        Ok(Self { points, centroids })
    }

    pub fn num_instances(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec<Xy>] {
        &self.points
    }

    pub fn centroids(&self) -> &[Xy] {
        &self.centroids
    }

    /// All points flattened in instance order.
    pub fn flat_points(&self) -> Vec<f64> {
        self.points.iter().flatten().flat_map(|p| *p).collect()
    }

    /// Same grouping with points replaced from a flat vector.
    pub fn with_flat_points(&self, flat: &[f64]) -> Self {
        let mut k = 0;
        let points = self
            .points
            .iter()
            .map(|g| {
                g.iter()
                    .map(|_| {
                        let p = [flat[k], flat[k + 1]];
                        k += 2;
                        p
                    })
                    .collect()
            })
            .collect();
        Self {
            points,
            centroids: self.centroids.clone(),
        }
    }
}

/// Loss value with its gradient per point, shaped like the input groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLoss {
    pub value: f64,
    pub grad: Vec<Vec<Xy>>,
}

impl GroupLoss {
    fn zero(groups: &InstanceGroups) -> Self {
        Self {
            value: 0.0,
            grad: groups.points.iter().map(|g| vec![[0.0; 2]; g.len()]).collect(),
        }
    }

    pub fn flat_grad(&self) -> Vec<f64> {
        self.grad.iter().flatten().flat_map(|p| *p).collect()
    }
}

fn dist(a: Xy, b: Xy) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance from each instance's centroid to the nearest other centroid.
pub fn centroid_gaps(centroids: &[Xy]) -> Vec<f64> {
    centroids
        .iter()
        .enumerate()
        .map(|(i, &ci)| {
            centroids
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &cj)| dist(ci, cj))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Nearest point of any other instance: `(distance, instance, index)`.
/// Ties keep the first in instance-then-point order.
pub fn nearest_foreign(groups: &InstanceGroups, i: usize, p: Xy) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (j, g) in groups.points.iter().enumerate() {
        if j == i {
            continue;
        }
        for (q, &pt) in g.iter().enumerate() {
            let d = dist(p, pt);
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, j, q));
            }
        }
    }
    best
}

/// `1/I sum_i 1/P_i sum_p max(0, d_i - dhat_{i,p})` where `d_i` is the gap from
/// instance i's centroid to the nearest other centroid and `dhat_{i,p}` the
/// distance from point p to the nearest point of another instance. Zero when
/// there are fewer than two instances.
pub fn repel_loss(groups: &InstanceGroups) -> GroupLoss {
    let mut out = GroupLoss::zero(groups);
    let n_inst = groups.num_instances();
    if n_inst <= 1 {
        return out;
    }
    let gaps = centroid_gaps(&groups.centroids);
    for (i, g) in groups.points.iter().enumerate() {
        let scale = 1.0 / (n_inst as f64 * g.len() as f64);
        for (p, &pt) in g.iter().enumerate() {
            let (d_hat, j, q) = nearest_foreign(groups, i, pt).expect("at least two instances");
            let margin = gaps[i] - d_hat;
            if margin <= 0.0 {
                continue;
            }
            out.value += scale * margin;
            if d_hat > 0.0 {
                let other = groups.points[j][q];
                let u = [(pt[0] - other[0]) / d_hat, (pt[1] - other[1]) / d_hat];
                // d(-dhat)/d pt = -u, d(-dhat)/d other = +u
                out.grad[i][p][0] -= scale * u[0];
                out.grad[i][p][1] -= scale * u[1];
                out.grad[j][q][0] += scale * u[0];
                out.grad[j][q][1] += scale * u[1];
            }
        }
    }
    out
}

/// `1/I sum_i 1/P_i sum_p ||x_{i,p} - mean_i||`. The gradient of a point that
/// sits exactly on its instance mean is taken as zero.
pub fn attract_loss(groups: &InstanceGroups) -> GroupLoss {
    let mut out = GroupLoss::zero(groups);
    let n_inst = groups.num_instances();
    if n_inst == 0 {
        return out;
    }
    for (i, g) in groups.points.iter().enumerate() {
        let n = g.len() as f64;
        let mean = g
            .iter()
            .fold([0.0; 2], |a, p| [a[0] + p[0], a[1] + p[1]])
            .map(|v| v / n);
        let scale = 1.0 / (n_inst as f64 * n);
        let units: Vec<Xy> = g
            .iter()
            .map(|p| {
                let d = dist(*p, mean);
                out.value += scale * d;
                if d > 0.0 {
                    [(p[0] - mean[0]) / d, (p[1] - mean[1]) / d]
                } else {
                    [0.0; 2]
                }
            })
            .collect();
        let usum = units.iter().fold([0.0; 2], |a, u| [a[0] + u[0], a[1] + u[1]]);
        for (gp, u) in out.grad[i].iter_mut().zip(&units) {
            gp[0] = scale * (u[0] - usum[0] / n);
            gp[1] = scale * (u[1] - usum[1] / n);
        }
    }
    out
}

/// Mean squared offset error over masked pixels, and its gradient w.r.t. `pred`.
pub fn offset_l2_loss(pred: &OffsetMap, target: &OffsetMap, mask: &[bool]) -> Result<(f64, Vec<Xy>)> {
    let n_px = pred.height() * pred.width();
    if pred.height() != target.height() || pred.width() != target.width() || mask.len() != n_px {
        return Err(Error::Dimension(format!(
            "offset maps {}x{} / {}x{} with a mask of {}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width(),
            mask.len()
        )));
    }
    let m = mask.iter().filter(|&&b| b).count();
    let mut grad = vec![[0.0; 2]; n_px];
    if m == 0 {
        return Ok((0.0, grad));
    }
    let mut sum = 0.0;
    for (k, ((p, t), g)) in pred.as_slice().iter().zip(target.as_slice()).zip(&mut grad).enumerate() {
        if !mask[k] {
            continue;
        }
        let e = [p[0] - t[0], p[1] - t[1]];
        sum += e[0] * e[0] + e[1] * e[1];
        *g = [2.0 * e[0] / m as f64, 2.0 * e[1] / m as f64];
    }
    Ok((sum / m as f64, grad))
}

/// Class-weighted cross-entropy: `sum_n w[y_n] * -log softmax(z_n)[y_n] / sum_n w[y_n]`
/// over pixels whose label is not `ignore`. `logits` is `num_pixels x num_classes`.
/// Returns the loss and its gradient w.r.t. the logits.
pub fn weighted_ce(
    logits: &[f64],
    labels: &[usize],
    class_weights: &[f64],
    ignore: Option<usize>,
) -> Result<(f64, Vec<f64>)> {
    let nc = class_weights.len();
    if nc == 0 || logits.len() != labels.len() * nc {
        return Err(Error::Dimension(format!(
            "{} logits for {} pixels and {nc} classes",
            logits.len(),
            labels.len()
        )));
    }
    if class_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::Config("class weights must be positive".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    let mut norm = 0.0;
    for (n, &y) in labels.iter().enumerate() {
        if Some(y) == ignore {
            continue;
        }
        if y >= nc {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes: nc,
            });
        }
        let z = &logits[n * nc..(n + 1) * nc];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = class_weights[y];
        total += w * (lse - z[y]);
        norm += w;
        let g = &mut grad[n * nc..(n + 1) * nc];
        for (c, gc) in g.iter_mut().enumerate() {
            *gc = w * ((z[c] - lse).exp() - (c == y) as u8 as f64);
        }
    }
    if norm == 0.0 {
        return Ok((0.0, grad));
    }
    grad.iter_mut().for_each(|g| *g /= norm);
    Ok((total / norm, grad))
}

/// Multipliers of the six loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub wce: f64,
    pub ls: f64,
    pub tv: f64,
    pub l2: f64,
    pub repel: f64,
    pub attract: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            wce: 1.0,
            ls: 1.0,
            tv: 5.0,
            l2: 0.1,
            repel: 0.1,
            attract: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.wce, self.ls, self.tv, self.l2, self.repel, self.attract];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Individual loss values. The Lovasz and total-variation terms are computed
/// elsewhere and passed in as plain scalars.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub wce: f64,
    pub ls: f64,
    pub tv: f64,
    pub l2: f64,
    pub repel: f64,
    pub attract: f64,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.wce * c.wce + w.ls * c.ls + w.tv * c.tv + w.l2 * c.l2 + w.repel * c.repel + w.attract * c.attract
}

/// Central-difference gradient `(f(x + h e_k) - f(x - h e_k)) / 2h`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::Numeric(format!("step must be positive, got {step}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let hi = f(&probe);
        probe[k] = x[k] - step;
        let lo = f(&probe);
        probe[k] = x[k];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Numeric(format!("non-finite evaluation at coordinate {k}")));
        }
        grad.push((hi - lo) / (2.0 * step));
    }
    Ok(grad)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

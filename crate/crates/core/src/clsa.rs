//! Convolution with cross local spatial attention (CLSA).
//!
//! For every location `u` the relative coordinates of its kernel neighbours,
//! `c[u+i] - c[u]` for all offsets `i`, are concatenated and fed through a
//! three-layer MLP. The MLP output is reshaped to `(taps, n_out, n_in)` and
//! soft-maxed over the tap axis, giving a per-location kernel that is then
//! applied like an ordinary convolution. Borders are zero padded for both the
//! features and the relative coordinates.

use std::fmt;
use std::str::FromStr;

use crate::mlp::{Mlp, MlpTrace};
use crate::range_view::{CoordFeatures, COORD_CHANNELS};
use crate::tensor::{offset_index, FeatureMap};
use crate::{Error, Result};

pub type Offset = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelShape {
    Cross,
    Diamond,
    SquareDense,
    /// 3x3 taps spread to the corners and edge midpoints of the `K x K` window.
    SquareDilated,
}

impl KernelShape {
    pub const ALL: [KernelShape; 4] = [
        KernelShape::Cross,
        KernelShape::Diamond,
        KernelShape::SquareDense,
        KernelShape::SquareDilated,
    ];
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelShape::Cross => "cross",
            KernelShape::Diamond => "diamond",
            KernelShape::SquareDense => "square_dense",
            KernelShape::SquareDilated => "square_dilated",
        })
    }
}

impl FromStr for KernelShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(KernelShape::Cross),
            "diamond" => Ok(KernelShape::Diamond),
            "square_dense" | "square" => Ok(KernelShape::SquareDense),
            "square_dilated" | "dilated" => Ok(KernelShape::SquareDilated),
            other => Err(Error::InvalidKernel(format!("unknown kernel shape `{other}`"))),
        }
    }
}

/// Offsets `(d_row, d_col)` of a kernel, deduplicated, in row-major order.
pub fn kernel_offsets(shape: KernelShape, size: usize) -> Result<Vec<Offset>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!(
            "kernel size must be odd and positive, got {size}"
        )));
    }
    let half = (size / 2) as i32;
    let mut offsets = Vec::new();
    for di in -half..=half {
        for dj in -half..=half {
            let keep = match shape {
                KernelShape::Cross => di == 0 || dj == 0,
                KernelShape::Diamond => di.abs() + dj.abs() <= half,
                KernelShape::SquareDense => true,
                KernelShape::SquareDilated => (di == 0 || di.abs() == half) && (dj == 0 || dj.abs() == half),
            };
            if keep {
                offsets.push((di, dj));
            }
        }
    }
    Ok(offsets)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSpec {
    shape: KernelShape,
    size: usize,
    offsets: Vec<Offset>,
}

impl KernelSpec {
    pub fn new(shape: KernelShape, size: usize) -> Result<Self> {
        Ok(Self {
            shape,
            size,
            offsets: kernel_offsets(shape, size)?,
        })
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    pub fn taps(&self) -> usize {
        self.offsets.len()
    }
}

/// Shared `K x K x n_out x n_in` kernel of a plain convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseKernel {
    size: usize,
    n_out: usize,
    n_in: usize,
    /// `[(di + K/2) * K + (dj + K/2)][out][in]`
    weights: Vec<f64>,
}

impl DenseKernel {
    pub fn new(size: usize, n_out: usize, n_in: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!("kernel size {size} is not odd")));
        }
        if weights.len() != size * size * n_out * n_in {
            return Err(Error::Dimension(format!(
                "{} weights for a {size}x{size}x{n_out}x{n_in} kernel",
                weights.len()
            )));
        }
        Ok(Self {
            size,
            n_out,
            n_in,
            weights,
        })
    }

    pub fn zeros(size: usize, n_out: usize, n_in: usize) -> Result<Self> {
        Self::new(size, n_out, n_in, vec![0.0; size * size * n_out * n_in])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn tap_mut(&mut self, di: i32, dj: i32) -> &mut [f64] {
        let start = self.tap_index(di, dj) * self.n_out * self.n_in;
        &mut self.weights[start..start + self.n_out * self.n_in]
    }

    pub fn tap(&self, di: i32, dj: i32) -> &[f64] {
        let start = self.tap_index(di, dj) * self.n_out * self.n_in;
        &self.weights[start..start + self.n_out * self.n_in]
    }

    fn tap_index(&self, di: i32, dj: i32) -> usize {
        let half = (self.size / 2) as i32;
        ((di + half) * self.size as i32 + (dj + half)) as usize
    }
}

/// Plain 2D convolution with zero padding.
pub fn conv2d(input: &FeatureMap, kernel: &DenseKernel) -> Result<FeatureMap> {
    if input.channels() != kernel.n_in {
        return Err(Error::Dimension(format!(
            "input has {} channels, kernel expects {}",
            input.channels(),
            kernel.n_in
        )));
    }
    let offsets = kernel_offsets(KernelShape::SquareDense, kernel.size)?;
    let (h, w) = (input.height(), input.width());
    let mut out = FeatureMap::zeros(h, w, kernel.n_out);
    for r in 0..h {
        for c in 0..w {
            let acc = out.pixel_mut(r, c);
            for &(di, dj) in &offsets {
                let Some(x) = input.neighbor(r, c, di, dj) else {
                    continue;
                };
                let tap = kernel.tap(di, dj);
                for (o, a) in acc.iter_mut().enumerate() {
                    let row = &tap[o * kernel.n_in..(o + 1) * kernel.n_in];
                    *a += row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>();
                }
            }
        }
    }
    Ok(out)
}

/// Kernel-generating MLP of a CLSA layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsaMlp {
    kernel: KernelSpec,
    n_in: usize,
    n_out: usize,
    mlp: Mlp,
}

impl ClsaMlp {
    /// Layer widths: `taps*5 -> hidden[0] -> hidden[1] -> taps*n_out*n_in`.
    pub fn layer_dims(kernel: &KernelSpec, n_in: usize, n_out: usize, hidden: [usize; 2]) -> Vec<usize> {
        vec![
            kernel.taps() * COORD_CHANNELS,
            hidden[0],
            hidden[1],
            kernel.taps() * n_out * n_in,
        ]
    }

    pub fn new(kernel: KernelSpec, n_in: usize, n_out: usize, mlp: Mlp) -> Result<Self> {
        let dims = mlp.dims();
        if dims.len() != 4 {
            return Err(Error::Dimension(format!(
                "CLSA needs a 3-layer MLP, got widths {dims:?}"
            )));
        }
        if dims[0] != kernel.taps() * COORD_CHANNELS || dims[3] != kernel.taps() * n_out * n_in {
            return Err(Error::Dimension(format!(
                "MLP widths {dims:?} do not fit {} taps, {n_in} in, {n_out} out",
                kernel.taps()
            )));
        }
        Ok(Self {
            kernel,
            n_in,
            n_out,
            mlp,
        })
    }

    pub fn zeros(kernel: KernelSpec, n_in: usize, n_out: usize, hidden: [usize; 2]) -> Result<Self> {
        let mlp = Mlp::zeros(&Self::layer_dims(&kernel, n_in, n_out, hidden))?;
        Self::new(kernel, n_in, n_out, mlp)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    fn relative_coords(&self, coords: &FeatureMap, r: usize, c: usize) -> Vec<f64> {
        let center = coords.pixel(r, c);
        let mut dc = Vec::with_capacity(self.kernel.taps() * COORD_CHANNELS);
        for &(di, dj) in self.kernel.offsets() {
            match coords.neighbor(r, c, di, dj) {
                Some(nb) => dc.extend(nb.iter().zip(center).map(|(a, b)| a - b)),
                None => dc.extend([0.0; COORD_CHANNELS]),
            }
        }
        dc
    }

    /// Per-location attention, softmax over taps for each `(out, in)` pair.
    fn attention_at(&self, logits: &[f64]) -> Result<Vec<f64>> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("CLSA attention logits are not finite".into()));
        }
        let taps = self.kernel.taps();
        let pairs = self.n_out * self.n_in;
        let mut att = vec![0.0; taps * pairs];
        for p in 0..pairs {
            let max = (0..taps)
                .map(|k| logits[k * pairs + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..taps {
                let e = (logits[k * pairs + p] - max).exp();
                att[k * pairs + p] = e;
                sum += e;
            }
            for k in 0..taps {
                att[k * pairs + p] /= sum;
            }
        }
        Ok(att)
    }
}

/// Spatially varying kernel: `taps x n_out x n_in` weights per location.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    height: usize,
    width: usize,
    taps: usize,
    n_out: usize,
    n_in: usize,
    data: Vec<f64>,
}

impl AttentionTensor {
    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Weight of tap `k` from input channel `j` to output channel `o` at `(r, c)`.
    pub fn get(&self, r: usize, c: usize, k: usize, o: usize, j: usize) -> f64 {
        self.data[self.base(r, c) + (k * self.n_out + o) * self.n_in + j]
    }

    pub fn at(&self, r: usize, c: usize) -> &[f64] {
        let b = self.base(r, c);
        &self.data[b..b + self.taps * self.n_out * self.n_in]
    }

    fn base(&self, r: usize, c: usize) -> usize {
        (r * self.width + c) * self.taps * self.n_out * self.n_in
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

pub fn clsa_attention(coords: &CoordFeatures, mlp: &ClsaMlp) -> Result<AttentionTensor> {
    let map = coords.map();
    let (h, w) = (map.height(), map.width());
    let per = mlp.kernel.taps() * mlp.n_out * mlp.n_in;
    let mut data = Vec::with_capacity(h * w * per);
    for r in 0..h {
        for c in 0..w {
            let logits = mlp.mlp.forward(&mlp.relative_coords(map, r, c));
            data.extend(mlp.attention_at(&logits)?);
        }
    }
    Ok(AttentionTensor {
        height: h,
        width: w,
        taps: mlp.kernel.taps(),
        n_out: mlp.n_out,
        n_in: mlp.n_in,
        data,
    })
}

fn check_inputs(input: &FeatureMap, coords: &CoordFeatures, mlp: &ClsaMlp) -> Result<()> {
    if !input.same_spatial(coords.map()) {
        return Err(Error::Dimension(format!(
            "features are {}x{}, coordinates {}x{}",
            input.height(),
            input.width(),
            coords.map().height(),
            coords.map().width()
        )));
    }
    if input.channels() != mlp.n_in {
        return Err(Error::Dimension(format!(
            "input has {} channels, CLSA layer expects {}",
            input.channels(),
            mlp.n_in
        )));
    }
    Ok(())
}

pub fn clsa_forward(input: &FeatureMap, coords: &CoordFeatures, mlp: &ClsaMlp) -> Result<FeatureMap> {
    check_inputs(input, coords, mlp)?;
    let att = clsa_attention(coords, mlp)?;
    Ok(apply_attention(input, &att, mlp.kernel.offsets()))
}

/// `x_out[u, o] = sum_k sum_j att[u, k, o, j] * x_in[u + offset_k, j]`.
pub fn apply_attention(input: &FeatureMap, att: &AttentionTensor, offsets: &[Offset]) -> FeatureMap {
    let (h, w) = (input.height(), input.width());
    let (n_out, n_in) = (att.n_out, att.n_in);
    let mut out = FeatureMap::zeros(h, w, n_out);
    for r in 0..h {
        for c in 0..w {
            let a = att.at(r, c);
            let acc = out.pixel_mut(r, c);
            for (k, &(di, dj)) in offsets.iter().enumerate() {
                let Some(x) = input.neighbor(r, c, di, dj) else {
                    continue;
                };
                for (o, slot) in acc.iter_mut().enumerate() {
                    let row = &a[(k * n_out + o) * n_in..(k * n_out + o + 1) * n_in];
                    *slot += row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>();
                }
            }
        }
    }
    out
}

/// Gradients of a scalar loss with respect to everything a CLSA layer reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsaGrads {
    pub input: FeatureMap,
    pub coords: FeatureMap,
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
}

/// Back-propagate `grad_out` (same shape as the layer output).
pub fn clsa_backward(
    input: &FeatureMap,
    coords: &CoordFeatures,
    mlp: &ClsaMlp,
    grad_out: &FeatureMap,
) -> Result<ClsaGrads> {
    check_inputs(input, coords, mlp)?;
    if !grad_out.same_spatial(input) || grad_out.channels() != mlp.n_out {
        return Err(Error::Dimension("output gradient has the wrong shape".into()));
    }
    let map = coords.map();
    let (h, w) = (input.height(), input.width());
    let (n_out, n_in) = (mlp.n_out, mlp.n_in);
    let taps = mlp.kernel.taps();
    let pairs = n_out * n_in;

    let mut g_input = FeatureMap::zeros(h, w, n_in);
    let mut g_coords = FeatureMap::zeros(h, w, COORD_CHANNELS);
    let mut g_params = vec![0.0; mlp.mlp.num_params()];

    for r in 0..h {
        for c in 0..w {
            let dc = mlp.relative_coords(map, r, c);
            let (logits, trace): (Vec<f64>, MlpTrace) = mlp.mlp.forward_cached(&dc);
            let att = mlp.attention_at(&logits)?;
            let g = grad_out.pixel(r, c);

            // d loss / d attention, and d loss / d input
            let mut g_att = vec![0.0; taps * pairs];
            for (k, &(di, dj)) in mlp.kernel.offsets().iter().enumerate() {
                let Some((nr, nc)) = offset_index(r, c, di, dj, h, w) else {
                    continue;
                };
                let x = input.pixel(nr, nc).to_vec();
                let gx = g_input.pixel_mut(nr, nc);
                for (o, &go) in g.iter().enumerate().take(n_out) {
                    for j in 0..n_in {
                        let idx = k * pairs + o * n_in + j;
                        g_att[idx] = go * x[j];
                        gx[j] += go * att[idx];
                    }
                }
            }

            // softmax over taps
            let mut g_logits = vec![0.0; taps * pairs];
            for p in 0..pairs {
                let dot: f64 = (0..taps).map(|k| att[k * pairs + p] * g_att[k * pairs + p]).sum();
                for k in 0..taps {
                    let i = k * pairs + p;
                    g_logits[i] = att[i] * (g_att[i] - dot);
                }
            }

            let g_dc = mlp.mlp.backward(&trace, &g_logits, &mut g_params);

            for (k, &(di, dj)) in mlp.kernel.offsets().iter().enumerate() {
                let Some((nr, nc)) = offset_index(r, c, di, dj, h, w) else {
                    continue;
                };
                let gk = &g_dc[k * COORD_CHANNELS..(k + 1) * COORD_CHANNELS];
                for (ch, &v) in gk.iter().enumerate() {
                    g_coords.pixel_mut(nr, nc)[ch] += v;
                    g_coords.pixel_mut(r, c)[ch] -= v;
                }
            }
        }
    }

    Ok(ClsaGrads {
        input: g_input,
        coords: g_coords,
        params: g_params,
    })
}

/// Smallest |hidden pre-activation| over all locations. Finite-difference
/// checks need this to be comfortably above the step size.
pub fn min_relu_margin(coords: &CoordFeatures, mlp: &ClsaMlp) -> f64 {
    let map = coords.map();
    let mut m = f64::INFINITY;
    for r in 0..map.height() {
        for c in 0..map.width() {
            let (_, trace) = mlp.mlp.forward_cached(&mlp.relative_coords(map, r, c));
            m = m.min(trace.min_hidden_margin());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn cross_three_matches_listed_offsets() {
        let got: BTreeSet<_> = kernel_offsets(KernelShape::Cross, 3).unwrap().into_iter().collect();
        let want: BTreeSet<_> = [(-1, 0), (0, 0), (1, 0), (0, 1), (0, -1)].into_iter().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn offsets_sizes_and_order() {
        assert_eq!(kernel_offsets(KernelShape::Cross, 1).unwrap(), vec![(0, 0)]);
        for k in [1, 3, 5, 7, 9] {
            let cross = kernel_offsets(KernelShape::Cross, k).unwrap();
            assert_eq!(cross.len(), 2 * k - 1);
            for shape in KernelShape::ALL {
                let offs = kernel_offsets(shape, k).unwrap();
                assert!(offs.contains(&(0, 0)));
                assert!(offs.windows(2).all(|p| p[0] < p[1]), "{shape} not row-major");
            }
        }
        assert_eq!(kernel_offsets(KernelShape::SquareDense, 5).unwrap().len(), 25);
        assert_eq!(kernel_offsets(KernelShape::SquareDilated, 5).unwrap().len(), 9);
        assert!(kernel_offsets(KernelShape::SquareDilated, 5)
            .unwrap()
            .contains(&(-2, 2)));
    }

    #[test]
    fn diamond_five_by_enumeration() {
        let mut want = Vec::new();
        for a in -3i32..=3 {
            for b in -3i32..=3 {
                if a.abs() + b.abs() <= 2 {
                    want.push((a, b));
                }
            }
        }
        assert_eq!(want.len(), 13);
        assert_eq!(kernel_offsets(KernelShape::Diamond, 5).unwrap(), want);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(
            kernel_offsets(KernelShape::Cross, 4),
            Err(Error::InvalidKernel(_))
        ));
        assert!(kernel_offsets(KernelShape::Cross, 0).is_err());
    }

    #[test]
    fn conv2d_identity_and_zero() {
        let input = FeatureMap::from_fn(4, 5, 2, |r, c, k| (r * 10 + c) as f64 - k as f64);
        let mut id = DenseKernel::zeros(3, 2, 2).unwrap();
        id.tap_mut(0, 0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(conv2d(&input, &id).unwrap(), input);
        let zero = DenseKernel::zeros(3, 3, 2).unwrap();
        assert!(conv2d(&input, &zero).unwrap().data().iter().all(|&v| v == 0.0));
        let wrong = DenseKernel::zeros(3, 1, 3).unwrap();
        assert!(conv2d(&input, &wrong).is_err());
    }

    #[test]
    fn zero_mlp_gives_uniform_attention() {
        let spec = KernelSpec::new(KernelShape::Diamond, 5).unwrap();
        let mlp = ClsaMlp::zeros(spec, 2, 3, [4, 4]).unwrap();
        let coords = CoordFeatures::new(FeatureMap::from_fn(3, 3, 5, |r, c, k| (r + c + k) as f64)).unwrap();
        let att = clsa_attention(&coords, &mlp).unwrap();
        assert!(att.data.iter().all(|&v| (v - 1.0 / 13.0).abs() < 1e-15));
    }

    #[test]
    fn mismatched_mlp_rejected() {
        let spec = KernelSpec::new(KernelShape::Cross, 3).unwrap();
        let mlp = Mlp::zeros(&[25, 4, 4, 5]).unwrap();
        assert!(ClsaMlp::new(spec.clone(), 1, 1, mlp).is_ok());
        let bad = Mlp::zeros(&[25, 4, 5]).unwrap();
        assert!(ClsaMlp::new(spec, 1, 1, bad).is_err());
    }

    #[test]
    fn non_finite_logits_error() {
        let spec = KernelSpec::new(KernelShape::Cross, 3).unwrap();
        let mut mlp = ClsaMlp::zeros(spec, 1, 1, [2, 2]).unwrap();
        let mut p = mlp.mlp().params();
        p.iter_mut().for_each(|v| *v = 1e300);
        mlp.mlp_mut().set_params(&p).unwrap();
        let coords = CoordFeatures::new(FeatureMap::from_fn(2, 2, 5, |r, _, _| 1e10 * r as f64)).unwrap();
        assert!(matches!(clsa_attention(&coords, &mlp), Err(Error::Numeric(_))));
    }
}

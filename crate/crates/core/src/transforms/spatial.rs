//! Resampling primitives as explicit sparse linear maps.
//!
//! Every resize and rotation with fixed geometry is a fixed sparse matrix
//! acting on each channel plane. Building the matrix once gives the forward map
//! and its exact transpose from the same taps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interpolation kernel for resize and rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Kernel::Bilinear),
            "nearest" => Ok(Kernel::Nearest),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Kernel::Bilinear => "bilinear",
            Kernel::Nearest => "nearest",
        })
    }
}

// coordinates within this distance of an integer are treated as exact
const SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Sparse linear map from an `in_h x in_w` plane to an `out_h x out_w` plane,
/// stored row-compressed by output pixel.
#[derive(Debug, Clone)]
pub(crate) struct SpatialMap {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    weights: Vec<f64>,
}

impl SpatialMap {
    fn from_rows(
        (in_h, in_w): (usize, usize),
        (out_h, out_w): (usize, usize),
        mut taps_for: impl FnMut(usize, usize, &mut Vec<(usize, f64)>),
    ) -> Self {
        let mut offsets = Vec::with_capacity(out_h * out_w + 1);
        let mut sources = Vec::new();
        let mut weights = Vec::new();
        let mut scratch = Vec::with_capacity(4);
        offsets.push(0);
        for y in 0..out_h {
            for x in 0..out_w {
                scratch.clear();
                taps_for(y, x, &mut scratch);
                for &(src, w) in &scratch {
                    if w != 0.0 {
                        sources.push(src);
                        weights.push(w);
                    }
                }
                offsets.push(sources.len());
            }
        }
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            offsets,
            sources,
            weights,
        }
    }

    pub(crate) fn resize(in_h: usize, in_w: usize, out_h: usize, out_w: usize, kernel: Kernel) -> Self {
        let rows = axis_taps(in_h, out_h, kernel);
        let cols = axis_taps(in_w, out_w, kernel);
        Self::from_rows((in_h, in_w), (out_h, out_w), |y, x, taps| {
            for &(sy, wy) in &rows[y] {
                for &(sx, wx) in &cols[x] {
                    taps.push((sy * in_w + sx, wy * wx));
                }
            }
        })
    }

    pub(crate) fn rotate(h: usize, w: usize, angle_deg: f64, kernel: Kernel) -> Self {
        let theta = angle_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        Self::from_rows((h, w), (h, w), |y, x, taps| {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = snap(cx + cos * dx + sin * dy);
            let sy = snap(cy - sin * dx + cos * dy);
            sample_taps(sy, sx, h, w, kernel, taps);
        })
    }

    fn check_input<T: Scalar>(&self, t: &Tensor<T>, rows: usize, cols: usize) -> Result<usize> {
        let (c, h, w) = t.chw()?;
        if (h, w) != (rows, cols) {
            return Err(Error::ShapeMismatch {
                left: t.shape().to_vec(),
                right: vec![c, rows, cols],
            });
        }
        Ok(c)
    }

    /// Weights in `T`, nudged so every row sums to at most 1 in `T` arithmetic.
    /// Rounding is monotone, so inputs in `[0, 1]` then map into `[0, 1]`.
    fn cast_weights<T: Scalar>(&self) -> Vec<T> {
        let mut weights: Vec<T> = self.weights.iter().map(|&w| T::cast(w)).collect();
        for o in 0..self.out_h * self.out_w {
            let row = &mut weights[self.offsets[o]..self.offsets[o + 1]];
            while row.len() > 1 && row.iter().fold(T::zero(), |a, &w| a + w) > T::one() {
                let k = (0..row.len()).fold(0, |m, k| if row[k] > row[m] { k } else { m });
                row[k] = row[k] - row[k] * T::epsilon();
            }
        }
        weights
    }

    pub(crate) fn apply<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check_input(input, self.in_h, self.in_w)?;
        let in_plane = self.in_h * self.in_w;
        let out_plane = self.out_h * self.out_w;
        let weights = self.cast_weights::<T>();
        let src = input.data();
        let mut out = vec![T::zero(); c * out_plane];
        for ch in 0..c {
            let plane = &src[ch * in_plane..(ch + 1) * in_plane];
            let dst = &mut out[ch * out_plane..(ch + 1) * out_plane];
            for (o, value) in dst.iter_mut().enumerate() {
                let range = self.offsets[o]..self.offsets[o + 1];
                let mut taps = self.sources[range.clone()].iter().zip(&weights[range]);
                if let Some((&s0, &w0)) = taps.next() {
                    let mut acc = w0 * plane[s0];
                    for (&s, &w) in taps {
                        acc = acc + w * plane[s];
                    }
                    *value = acc;
                }
            }
        }
        Tensor::new(vec![c, self.out_h, self.out_w], out)
    }

    pub(crate) fn adjoint<T: Scalar>(&self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check_input(upstream, self.out_h, self.out_w)?;
        let in_plane = self.in_h * self.in_w;
        let out_plane = self.out_h * self.out_w;
        let weights = self.cast_weights::<T>();
        let up = upstream.data();
        let mut out = vec![T::zero(); c * in_plane];
        for ch in 0..c {
            let plane = &up[ch * out_plane..(ch + 1) * out_plane];
            let dst = &mut out[ch * in_plane..(ch + 1) * in_plane];
            for (o, &g) in plane.iter().enumerate() {
                for k in self.offsets[o]..self.offsets[o + 1] {
                    dst[self.sources[k]] = dst[self.sources[k]] + weights[k] * g;
                }
            }
        }
        Tensor::new(vec![c, self.in_h, self.in_w], out)
    }
}

/// Per-output-index taps along one axis under the half-pixel-center rule.
fn axis_taps(in_len: usize, out_len: usize, kernel: Kernel) -> Vec<Vec<(usize, f64)>> {
    let ratio = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|d| {
            let s = snap(((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, max));
            match kernel {
                Kernel::Nearest => vec![(s.round() as usize, 1.0)],
                Kernel::Bilinear => {
                    let i0 = s.floor();
                    let f = s - i0;
                    let i0 = i0 as usize;
                    if f == 0.0 {
                        vec![(i0, 1.0)]
                    } else {
                        vec![(i0, 1.0 - f), (i0 + 1, f)]
                    }
                }
            }
        })
        .collect()
}

/// Taps for sampling an `h x w` plane at `(sy, sx)`; out-of-plane taps are dropped
/// (zero padding).
fn sample_taps(sy: f64, sx: f64, h: usize, w: usize, kernel: Kernel, taps: &mut Vec<(usize, f64)>) {
    let inside = |y: f64, x: f64| y >= 0.0 && x >= 0.0 && y <= (h - 1) as f64 && x <= (w - 1) as f64;
    match kernel {
        Kernel::Nearest => {
            let (y, x) = (sy.round(), sx.round());
            if inside(y, x) {
                taps.push((y as usize * w + x as usize, 1.0));
            }
        }
        Kernel::Bilinear => {
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let weight = wy * wx;
                    let (y, x) = (y0 + dy, x0 + dx);
                    if weight != 0.0 && inside(y, x) {
                        taps.push((y as usize * w + x as usize, weight));
                    }
                }
            }
        }
    }
}

fn check_size(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("resize target {out_h}x{out_w} must be at least 1x1")));
    }
    Ok(())
}

/// Resizes a `[C, h, w]` block to `[C, out_h, out_w]`.
pub fn resize<T: Scalar>(block: &Tensor<T>, out_h: usize, out_w: usize, kernel: Kernel) -> Result<Tensor<T>> {
    check_size(out_h, out_w)?;
    let (_, h, w) = block.chw()?;
    SpatialMap::resize(h, w, out_h, out_w, kernel).apply(block)
}

/// Transpose of [`resize`]: maps an upstream `[C, out_h, out_w]` gradient back
/// to `[C, in_h, in_w]`.
pub fn resize_vjp<T: Scalar>(upstream: &Tensor<T>, in_h: usize, in_w: usize, kernel: Kernel) -> Result<Tensor<T>> {
    check_size(in_h, in_w)?;
    let (_, out_h, out_w) = upstream.chw()?;
    SpatialMap::resize(in_h, in_w, out_h, out_w, kernel).adjoint(upstream)
}

/// Rotates a block about its center by `angle_deg`, filling uncovered pixels
/// with zeros. Output dims equal input dims.
pub fn rotate<T: Scalar>(block: &Tensor<T>, angle_deg: f64, kernel: Kernel) -> Result<Tensor<T>> {
    let (_, h, w) = block.chw()?;
    SpatialMap::rotate(h, w, angle_deg, kernel).apply(block)
}

pub fn rotate_vjp<T: Scalar>(upstream: &Tensor<T>, angle_deg: f64, kernel: Kernel) -> Result<Tensor<T>> {
    let (_, h, w) = upstream.chw()?;
    SpatialMap::rotate(h, w, angle_deg, kernel).adjoint(upstream)
}

/// Copies the `out_h x out_w` window at `(oy, ox)`.
pub fn crop<T: Scalar>(block: &Tensor<T>, oy: usize, ox: usize, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = block.chw()?;
    if out_h == 0 || out_w == 0 || oy + out_h > h || ox + out_w > w {
        return Err(Error::invalid(format!(
            "crop window {out_h}x{out_w} at ({oy}, {ox}) exceeds {h}x{w} block"
        )));
    }
    let src = block.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for y in 0..out_h {
            let start = ch * h * w + (oy + y) * w + ox;
            out.extend_from_slice(&src[start..start + out_w]);
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Transpose of [`crop`]: scatters `upstream` into the window of a zero
/// `[C, h, w]` tensor. Also serves as zero padding.
pub fn crop_vjp<T: Scalar>(upstream: &Tensor<T>, oy: usize, ox: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, uh, uw) = upstream.chw()?;
    if oy + uh > h || ox + uw > w {
        return Err(Error::invalid(format!(
            "crop window {uh}x{uw} at ({oy}, {ox}) exceeds {h}x{w} block"
        )));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    let dst = out.data_mut();
    let src = upstream.data();
    for ch in 0..c {
        for y in 0..uh {
            let start = ch * h * w + (oy + y) * w + ox;
            dst[start..start + uw].copy_from_slice(&src[(ch * uh + y) * uw..(ch * uh + y + 1) * uw]);
        }
    }
    Ok(out)
}

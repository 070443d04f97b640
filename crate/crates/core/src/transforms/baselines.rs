//! Baseline input transformations: diverse-input resize/pad, scale copies, and
//! block shuffle with rotation. Each is linear for a fixed trace.

use serde::{Deserialize, Serialize};

use super::grid::BlockGrid;
use super::spatial::{crop, crop_vjp, resize, resize_vjp, rotate, rotate_vjp, Kernel};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimParams {
    /// Probability of applying the transform (otherwise identity).
    pub prob: f64,
    /// Padded canvas size relative to the image.
    pub resize_rate: f64,
    pub kernel: Kernel,
}

impl Default for DimParams {
    fn default() -> Self {
        Self {
            prob: 0.5,
            resize_rate: 1.1,
            kernel: Kernel::Bilinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DimTrace {
    Identity,
    Applied {
        height: usize,
        width: usize,
        resized: (usize, usize),
        padded: (usize, usize),
        pad: (usize, usize),
    },
}

fn padded_len(len: usize, rate: f64) -> usize {
    ((len as f64 * rate - 1e-9).ceil() as usize).max(len)
}

/// Resize to a random size in `[H, ceil(rate * H)]`, zero-pad at a random
/// position to `ceil(rate * H)`, and resize back to `H x W`.
pub fn dim_sample(params: &DimParams, (height, width): (usize, usize), rng: &mut Rng) -> Result<DimTrace> {
    if !(0.0..=1.0).contains(&params.prob) || params.resize_rate < 1.0 {
        return Err(Error::invalid("DIM needs prob in [0, 1] and resize_rate >= 1"));
    }
    if rng.next_f64() >= params.prob {
        return Ok(DimTrace::Identity);
    }
    let padded = (padded_len(height, params.resize_rate), padded_len(width, params.resize_rate));
    let rh = height + rng.below(padded.0 - height + 1);
    let rw = ((rh as f64 * width as f64 / height as f64).round() as usize).clamp(width, padded.1);
    let pad = (rng.below(padded.0 - rh + 1), rng.below(padded.1 - rw + 1));
    Ok(DimTrace::Applied {
        height,
        width,
        resized: (rh, rw),
        padded,
        pad,
    })
}

fn check_dims<T: Scalar>(image: &Tensor<T>, height: usize, width: usize) -> Result<()> {
    let (_, h, w) = image.chw()?;
    if (h, w) != (height, width) {
        return Err(Error::invalid(format!(
            "trace sampled for {height}x{width} but image is {h}x{w}"
        )));
    }
    Ok(())
}

pub fn dim_forward<T: Scalar>(image: &Tensor<T>, trace: &DimTrace, kernel: Kernel) -> Result<Tensor<T>> {
    match *trace {
        DimTrace::Identity => Ok(image.clone()),
        DimTrace::Applied {
            height,
            width,
            resized,
            padded,
            pad,
        } => {
            check_dims(image, height, width)?;
            let r = resize(image, resized.0, resized.1, kernel)?;
            let p = crop_vjp(&r, pad.0, pad.1, padded.0, padded.1)?;
            resize(&p, height, width, kernel)
        }
    }
}

pub fn dim_vjp<T: Scalar>(upstream: &Tensor<T>, trace: &DimTrace, kernel: Kernel) -> Result<Tensor<T>> {
    match *trace {
        DimTrace::Identity => Ok(upstream.clone()),
        DimTrace::Applied {
            height,
            width,
            resized,
            padded,
            pad,
        } => {
            check_dims(upstream, height, width)?;
            let g = resize_vjp(upstream, padded.0, padded.1, kernel)?;
            let g = crop(&g, pad.0, pad.1, resized.0, resized.1)?;
            resize_vjp(&g, height, width, kernel)
        }
    }
}

/// Scale copies `x / 2^i` for `i = 0..m`.
pub fn sim_copies<T: Scalar>(image: &Tensor<T>, m: usize) -> Result<Vec<Tensor<T>>> {
    if m < 1 {
        return Err(Error::invalid("SIM needs at least one copy"));
    }
    Ok((0..m).map(|i| sim_forward(image, i)).collect())
}

pub fn sim_forward<T: Scalar>(image: &Tensor<T>, exponent: usize) -> Tensor<T> {
    image.scale(T::cast(0.5f64.powi(exponent as i32)))
}

/// The scaling is self-adjoint.
pub fn sim_vjp<T: Scalar>(upstream: &Tensor<T>, exponent: usize) -> Tensor<T> {
    sim_forward(upstream, exponent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsrParams {
    pub blocks: usize,
    pub max_angle_deg: f64,
    pub kernel: Kernel,
}

impl Default for BsrParams {
    fn default() -> Self {
        Self {
            blocks: 2,
            max_angle_deg: 24.0,
            kernel: Kernel::Bilinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsrTrace {
    pub height: usize,
    pub width: usize,
    pub blocks: usize,
    /// `source[j]` is the block that lands in cell `j`.
    pub source: Vec<usize>,
    /// Rotation applied to the block placed in cell `j`.
    pub angles: Vec<f64>,
}

/// Shuffles blocks among cells of identical size (all cells when `n` divides
/// both sides) and draws an independent angle per cell.
pub fn bsr_sample(params: &BsrParams, (height, width): (usize, usize), rng: &mut Rng) -> Result<BsrTrace> {
    if params.max_angle_deg < 0.0 {
        return Err(Error::invalid("BSR max angle must be non-negative"));
    }
    let grid = BlockGrid::new(height, width, params.blocks)?;
    let mut groups: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    for (i, cell) in grid.cells().enumerate() {
        let key = (cell.height, cell.width);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let mut source = vec![0; grid.len()];
    for (_, members) in &groups {
        let mut shuffled = members.clone();
        rng.shuffle(&mut shuffled);
        for (&dest, &src) in members.iter().zip(&shuffled) {
            source[dest] = src;
        }
    }
    let angles = (0..grid.len())
        .map(|_| rng.uniform(-params.max_angle_deg, params.max_angle_deg))
        .collect::<Result<Vec<_>>>()?;
    Ok(BsrTrace {
        height,
        width,
        blocks: params.blocks,
        source,
        angles,
    })
}

pub fn bsr_forward<T: Scalar>(image: &Tensor<T>, trace: &BsrTrace, kernel: Kernel) -> Result<Tensor<T>> {
    check_dims(image, trace.height, trace.width)?;
    let grid = BlockGrid::new(trace.height, trace.width, trace.blocks)?;
    let mut out = Tensor::zeros(image.shape());
    for dest in 0..grid.len() {
        let block = grid.extract(image, trace.source[dest])?;
        grid.place(&mut out, dest, &rotate(&block, trace.angles[dest], kernel)?)?;
    }
    Ok(out)
}

pub fn bsr_vjp<T: Scalar>(upstream: &Tensor<T>, trace: &BsrTrace, kernel: Kernel) -> Result<Tensor<T>> {
    check_dims(upstream, trace.height, trace.width)?;
    let grid = BlockGrid::new(trace.height, trace.width, trace.blocks)?;
    let mut out = Tensor::zeros(upstream.shape());
    for dest in 0..grid.len() {
        let g = grid.extract(upstream, dest)?;
        grid.place(&mut out, trace.source[dest], &rotate_vjp(&g, trace.angles[dest], kernel)?)?;
    }
    Ok(out)
}

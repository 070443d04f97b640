//! Component-wise transformation.
//!
//! Each of the `n x n` blocks is independently shrunk by a random factor `s`
//! (pre-interpolation), enlarged by the same factor, optionally rotated with
//! zero fill, and randomly cropped back to its original size. The blocks are
//! then reassembled in their original cells. For a fixed [`CwtTrace`] the
//! whole map is linear in the image, so [`cwt_vjp`] is its exact transpose.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::grid::BlockGrid;
use super::spatial::{crop, crop_vjp, Kernel, SpatialMap};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwtParams {
    /// Blocks per side; the grid is `blocks x blocks`.
    pub blocks: usize,
    /// Transformed copies averaged per gradient evaluation.
    pub copies: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_angle_deg: f64,
    /// Number of blocks rotated per copy.
    pub rotated_blocks: usize,
    pub kernel: Kernel,
    pub pre_interpolation: bool,
}

impl Default for CwtParams {
    /// 2x2 blocks, 20 copies, scales in [1.0, 1.3], two blocks rotated by up to 26 degrees.
    fn default() -> Self {
        Self {
            blocks: 2,
            copies: 20,
            scale_min: 1.0,
            scale_max: 1.3,
            max_angle_deg: 26.0,
            rotated_blocks: 2,
            kernel: Kernel::Bilinear,
            pre_interpolation: true,
        }
    }
}

impl CwtParams {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::invalid("blocks must be at least 1"));
        }
        if self.copies < 1 {
            return Err(Error::invalid("copies must be at least 1"));
        }
        if !(1.0 <= self.scale_min && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::invalid(format!(
                "scale bounds must satisfy 1 <= min <= max, got [{}, {}]",
                self.scale_min, self.scale_max
            )));
        }
        if !(self.max_angle_deg >= 0.0 && self.max_angle_deg.is_finite()) {
            return Err(Error::invalid("max rotation angle must be finite and non-negative"));
        }
        if self.rotated_blocks > self.blocks * self.blocks {
            return Err(Error::invalid(format!(
                "cannot rotate {} of {} blocks",
                self.rotated_blocks,
                self.blocks * self.blocks
            )));
        }
        Ok(())
    }
}

/// Sampled randomness for one block of one copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub scale: f64,
    /// `(floor(h / s), floor(w / s))`, at least 1.
    pub shrunk: (usize, usize),
    /// `(floor(h * s), floor(w * s))`.
    pub enlarged: (usize, usize),
    pub angle_deg: Option<f64>,
    /// Crop window origin inside the enlarged block.
    pub offset: (usize, usize),
}

/// Everything needed to replay one transformed copy, forward or adjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwtTrace {
    pub height: usize,
    pub width: usize,
    pub blocks: usize,
    pub cells: Vec<BlockTrace>,
}

impl CwtTrace {
    /// Indices of rotated blocks, ascending.
    pub fn rotated(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.angle_deg.map(|_| i))
            .collect()
    }

    /// Diagnostic dump, one `key=value` per line.
    pub fn to_kv(&self) -> String {
        let mut out = format!("height={}\nwidth={}\nblocks={}\n", self.height, self.width, self.blocks);
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(out, "block.{i}.scale={}", c.scale);
            let _ = writeln!(out, "block.{i}.shrunk={}x{}", c.shrunk.0, c.shrunk.1);
            let _ = writeln!(out, "block.{i}.enlarged={}x{}", c.enlarged.0, c.enlarged.1);
            if let Some(a) = c.angle_deg {
                let _ = writeln!(out, "block.{i}.angle={a}");
            }
            let _ = writeln!(out, "block.{i}.offset={},{}", c.offset.0, c.offset.1);
        }
        out
    }
}

fn scaled_dims(h: usize, w: usize, s: f64) -> ((usize, usize), (usize, usize)) {
    let down = |v: usize| ((v as f64 / s).floor() as usize).max(1);
    let up = |v: usize| ((v as f64 * s).floor() as usize).max(v);
    ((down(h), down(w)), (up(h), up(w)))
}

/// Samples one copy. Draw order: per-block scales, rotated set, angles
/// (ascending block index), per-block crop offsets.
pub fn sample_copy(params: &CwtParams, (height, width): (usize, usize), rng: &mut Rng) -> Result<CwtTrace> {
    params.validate()?;
    let grid = BlockGrid::new(height, width, params.blocks)?;
    let scales = (0..grid.len())
        .map(|_| rng.uniform(params.scale_min, params.scale_max))
        .collect::<Result<Vec<_>>>()?;
    let rotated = rng.sample_without_replacement(grid.len(), params.rotated_blocks)?;
    let mut angles = vec![None; grid.len()];
    for &i in &rotated {
        angles[i] = Some(rng.uniform(-params.max_angle_deg, params.max_angle_deg)?);
    }
    let cells = grid
        .cells()
        .enumerate()
        .map(|(i, cell)| {
            let (shrunk, enlarged) = scaled_dims(cell.height, cell.width, scales[i]);
            let oy = rng.below(enlarged.0 - cell.height + 1);
            let ox = rng.below(enlarged.1 - cell.width + 1);
            BlockTrace {
                scale: scales[i],
                shrunk,
                enlarged,
                angle_deg: angles[i],
                offset: (oy, ox),
            }
        })
        .collect();
    Ok(CwtTrace {
        height,
        width,
        blocks: params.blocks,
        cells,
    })
}

/// Samples `params.copies` independent copies; copy `i` draws from `rng.split(i)`.
pub fn cwt_sample(params: &CwtParams, dims: (usize, usize), rng: &Rng) -> Result<Vec<CwtTrace>> {
    (0..params.copies)
        .map(|i| sample_copy(params, dims, &mut rng.split(i as u64)))
        .collect()
}

struct BlockPlan {
    stages: Vec<SpatialMap>,
    enlarged: (usize, usize),
    offset: (usize, usize),
    size: (usize, usize),
}

fn compile(trace: &CwtTrace, params: &CwtParams, image: (usize, usize)) -> Result<(BlockGrid, Vec<BlockPlan>)> {
    if (trace.height, trace.width) != image {
        return Err(Error::invalid(format!(
            "trace sampled for {}x{} but image is {}x{}",
            trace.height, trace.width, image.0, image.1
        )));
    }
    if trace.blocks != params.blocks {
        return Err(Error::invalid(format!(
            "trace has {} blocks per side, params say {}",
            trace.blocks, params.blocks
        )));
    }
    let grid = BlockGrid::new(trace.height, trace.width, trace.blocks)?;
    if trace.cells.len() != grid.len() {
        return Err(Error::invalid("trace cell count does not match the grid"));
    }
    if trace.rotated().len() != params.rotated_blocks {
        return Err(Error::invalid(format!(
            "trace rotates {} blocks, params say {}",
            trace.rotated().len(),
            params.rotated_blocks
        )));
    }
    let plans = grid
        .cells()
        .zip(&trace.cells)
        .enumerate()
        .map(|(i, (cell, bt))| {
            let (h, w) = (cell.height, cell.width);
            let (eh, ew) = bt.enlarged;
            if eh < h || ew < w || bt.offset.0 + h > eh || bt.offset.1 + w > ew {
                return Err(Error::Block {
                    index: i,
                    message: "trace geometry does not fit the block".into(),
                });
            }
            let mut stages = Vec::with_capacity(3);
            if params.pre_interpolation {
                let (sh, sw) = bt.shrunk;
                stages.push(SpatialMap::resize(h, w, sh, sw, params.kernel));
                stages.push(SpatialMap::resize(sh, sw, eh, ew, params.kernel));
            } else {
                stages.push(SpatialMap::resize(h, w, eh, ew, params.kernel));
            }
            if let Some(angle) = bt.angle_deg {
                stages.push(SpatialMap::rotate(eh, ew, angle, params.kernel));
            }
            Ok(BlockPlan {
                stages,
                enlarged: (eh, ew),
                offset: bt.offset,
                size: (h, w),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, plans))
}

/// Applies one sampled copy to a `[C, H, W]` image.
pub fn cwt_forward<T: Scalar>(image: &Tensor<T>, trace: &CwtTrace, params: &CwtParams) -> Result<Tensor<T>> {
    let (c, h, w) = image.chw()?;
    let (grid, plans) = compile(trace, params, (h, w))?;
    let mut out = Tensor::zeros(&[c, h, w]);
    for (i, plan) in plans.iter().enumerate() {
        let mut block = grid.extract(image, i)?;
        for stage in &plan.stages {
            block = stage.apply(&block)?;
        }
        let block = crop(&block, plan.offset.0, plan.offset.1, plan.size.0, plan.size.1)?;
        grid.place(&mut out, i, &block)?;
    }
    Ok(out)
}

/// Transpose of [`cwt_forward`] for the same trace.
pub fn cwt_vjp<T: Scalar>(upstream: &Tensor<T>, trace: &CwtTrace, params: &CwtParams) -> Result<Tensor<T>> {
    let (c, h, w) = upstream.chw()?;
    let (grid, plans) = compile(trace, params, (h, w))?;
    let mut out = Tensor::zeros(&[c, h, w]);
    for (i, plan) in plans.iter().enumerate() {
        let g = grid.extract(upstream, i)?;
        let mut g = crop_vjp(&g, plan.offset.0, plan.offset.1, plan.enlarged.0, plan.enlarged.1)?;
        for stage in plan.stages.iter().rev() {
            g = stage.adjoint(&g)?;
        }
        grid.place(&mut out, i, &g)?;
    }
    Ok(out)
}

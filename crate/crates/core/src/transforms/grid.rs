//! Partitioning an image into an `n x n` grid of blocks and reassembling it.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One grid cell: row/column offset and extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Non-overlapping `n x n` tiling of an `H x W` image. Each block gets
/// `H / n` rows (rounded down); the last block row absorbs the remainder.
/// Columns follow the same rule. Blocks are indexed row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    n: usize,
    height: usize,
    width: usize,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

fn split_axis(len: usize, n: usize) -> Vec<(usize, usize)> {
    let base = len / n;
    (0..n)
        .map(|i| {
            let size = if i + 1 == n { len - base * (n - 1) } else { base };
            (i * base, size)
        })
        .collect()
}

impl BlockGrid {
    pub fn new(height: usize, width: usize, n: usize) -> Result<Self> {
        if n == 0 || n > height.min(width) {
            return Err(Error::invalid(format!(
                "cannot split a {height}x{width} image into {n}x{n} blocks"
            )));
        }
        Ok(Self {
            n,
            height,
            width,
            rows: split_axis(height, n),
            cols: split_axis(width, n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell(&self, index: usize) -> Cell {
        let (top, height) = self.rows[index / self.n];
        let (left, width) = self.cols[index % self.n];
        Cell {
            top,
            left,
            height,
            width,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell(i))
    }

    pub(crate) fn extract<T: Scalar>(&self, image: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
        let (c, h, w) = image.chw()?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::ShapeMismatch {
                left: image.shape().to_vec(),
                right: vec![c, self.height, self.width],
            });
        }
        let cell = self.cell(index);
        let src = image.data();
        let mut out = Vec::with_capacity(c * cell.height * cell.width);
        for ch in 0..c {
            for y in 0..cell.height {
                let start = ch * h * w + (cell.top + y) * w + cell.left;
                out.extend_from_slice(&src[start..start + cell.width]);
            }
        }
        Tensor::new(vec![c, cell.height, cell.width], out)
    }

    /// Writes `block` into its cell of `dest`.
    pub(crate) fn place<T: Scalar>(&self, dest: &mut Tensor<T>, index: usize, block: &Tensor<T>) -> Result<()> {
        let cell = self.cell(index);
        let (c, h, w) = dest.chw()?;
        let (bc, bh, bw) = block.chw()?;
        if (bc, bh, bw) != (c, cell.height, cell.width) {
            return Err(Error::Block {
                index,
                message: format!(
                    "block shape {:?} does not fit cell {}x{} with {c} channels",
                    block.shape(),
                    cell.height,
                    cell.width
                ),
            });
        }
        let src = block.data();
        let dst = dest.data_mut();
        for ch in 0..c {
            for y in 0..bh {
                let start = ch * h * w + (cell.top + y) * w + cell.left;
                dst[start..start + bw].copy_from_slice(&src[(ch * bh + y) * bw..(ch * bh + y + 1) * bw]);
            }
        }
        Ok(())
    }
}

/// Splits `[C, H, W]` into `n x n` blocks.
pub fn partition<T: Scalar>(image: &Tensor<T>, n: usize) -> Result<(BlockGrid, Vec<Tensor<T>>)> {
    let (_, h, w) = image.chw()?;
    let grid = BlockGrid::new(h, w, n)?;
    let blocks = (0..grid.len())
        .map(|i| grid.extract(image, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, blocks))
}

/// Inverse of [`partition`].
pub fn reassemble<T: Scalar>(grid: &BlockGrid, blocks: &[Tensor<T>]) -> Result<Tensor<T>> {
    if blocks.len() != grid.len() {
        return Err(Error::invalid(format!(
            "expected {} blocks, got {}",
            grid.len(),
            blocks.len()
        )));
    }
    let (c, _, _) = blocks[0].chw()?;
    let mut image = Tensor::zeros(&[c, grid.height, grid.width]);
    for (i, block) in blocks.iter().enumerate() {
        grid.place(&mut image, i, block)?;
    }
    Ok(image)
}

//! Differentiable image transformations.
//!
//! Every transform here splits into a *sample* step that draws all randomness
//! into a trace, and deterministic forward/adjoint maps of `(image, trace)`.
//! With the trace fixed each map is linear, so the adjoint is exact.

mod baselines;
mod cwt;
mod grid;
mod spatial;

pub use baselines::{
    bsr_forward, bsr_sample, bsr_vjp, dim_forward, dim_sample, dim_vjp, sim_copies, sim_forward, sim_vjp,
    BsrParams, BsrTrace, DimParams, DimTrace,
};
pub use cwt::{cwt_forward, cwt_sample, cwt_vjp, sample_copy, BlockTrace, CwtParams, CwtTrace};
pub use grid::{partition, reassemble, BlockGrid, Cell};
pub use spatial::{crop, crop_vjp, resize, resize_vjp, rotate, rotate_vjp, Kernel};

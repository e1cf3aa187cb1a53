//! Differentiable Gaussian splatting on the CPU with pluggable camera models.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cameras;
pub mod model;
pub mod oracle;
pub mod gradients;
pub mod splatting;
pub mod optimize;
pub mod io;
pub mod cli;

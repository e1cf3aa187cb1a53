//! Independent validation: finite differences, a brute-force reference
//! renderer and an end-to-end gradient checker.
//!
//! The reference renderer has its own quaternion, projection and Jacobian
//! code (the latter via dual numbers) and blends every splat at every pixel
//! in depth order. It shares only the numeric constants of the fast path.

mod bruteforce;
pub mod dual;
mod fd;
mod gradcheck;

pub use bruteforce::{
    bruteforce_render, bruteforce_render_limited, count_tile_overlaps, project_scene, OracleRender, OracleSplat,
    DEFAULT_MAX_GAUSSIANS,
};
pub use fd::{fd_jacobian, relative_error, relative_error_max_norm, FDConfig};
pub use gradcheck::{gradcheck, gradcheck_camera, gradcheck_scene, GradcheckConfig, GradcheckReport, GroupReport, LossSpec, GROUPS};

use crate::splatting::RenderError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("scene has {count} gaussians, the reference renderer is limited to {limit}")]
    TooManyGaussians { count: usize, limit: usize },
    #[error("non-finite function value when perturbing coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("gaussian {0} has a degenerate rotation")]
    DegenerateGaussian(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[cfg(test)]
mod tests;

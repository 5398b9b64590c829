//! Incremental 3D reconstruction from intermediate denoised views.

pub mod checkpoint;
pub mod fit;
pub mod grid;
pub mod state;

pub use fit::{FitRenderOptions, LossReport};
pub use grid::{AdamState, GridParams};
pub use state::{
    fit_feedforward_quads, fit_incremental, reconstruct_and_render, switch_to_mesh, FitConfig,
    FitTargets, Phase, ReconState,
};

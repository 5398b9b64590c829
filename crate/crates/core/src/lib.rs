//! Desk-scale laboratory for multi-view diffusion sampling with
//! reconstruction in the loop.
//!
//! The crate wires exact analytic denoisers over a synthetic multi-view
//! world to a small CPU 3D renderer and an incremental volume/mesh fitter,
//! and compares three sampling architectures end to end: two-stage
//! generation, I/O sync, and feedback-augmented denoising.

pub mod diffusion;
pub mod error;
pub mod losses;
pub mod num;
pub mod presets;
pub mod recon;
pub mod rng;
pub mod sched;
pub mod render;
pub mod pipeline;
pub mod score1d;
pub mod stats;
pub mod stack;
pub mod world;
pub mod worldfile;

pub use error::{Error, Result};
pub use sched::{NoiseSchedule, ScheduleKind};
pub use stack::{StackShape, ViewStack};

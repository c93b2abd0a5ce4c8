//! Non-pixel-aligned 3D reconstruction from unposed images.
//!
//! The crate is organised the same way the pipeline runs:
//!
//! * [`geometry`] and [`synthdata`] build complete and visible point clouds
//!   from procedurally generated scenes,
//! * [`flowmatch`], [`stage1`] and [`stage2`] hold the flow-matching point
//!   autoencoder and the image-to-scene-token transformer that conditions it,
//! * [`metrics`] and [`align`] evaluate predictions against ground truth,
//! * [`cli`] wires everything into the `npa3d` command-line tool.
//!
//! Everything numeric runs in `f64` on the CPU through the small reverse-mode
//! autodiff engine in [`nn`].

pub mod align;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod flowmatch;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod stage1;
pub mod stage2;
pub mod synthdata;
pub mod util;

pub use error::{Error, Result};
pub use geometry::{CameraView, PointCloud};

//! Differentiable Gaussian splatting for 4D scenes whose only temporal
//! dynamics is opacity change, as in time-resolved angiography.
//!
//! Each Gaussian carries a small table of opacity offsets at uniform time
//! knots; rendering at time `t` interpolates the table and adds it to the
//! base opacity. The crate provides the forward and backward tile
//! rasterizer, the training losses and metrics, Adam with density control,
//! a training loop, a synthetic vessel phantom and a frame server.

pub mod camera;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod imageio;
pub mod loss;
pub mod math;
pub mod model;
pub mod optim;
pub mod phantom;
pub mod raster;
pub mod report;
pub mod serve;
pub mod synthetic;
pub mod train;

pub use camera::{Camera, Orbit, ProjectedGaussian};
pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{Gaussian, GaussianCloud, ParamGroup, Params};
pub use raster::{render, GradientBuffer, Image, RenderSettings};

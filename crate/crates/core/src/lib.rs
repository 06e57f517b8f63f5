// Validation is written `!(a < b)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod centerline;
pub mod config;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod priors;
pub mod scalar;
pub mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision volume.
pub type Volume = volume::Volume3D<f64>;
pub type Volume32 = volume::Volume3D<f32>;
pub type Slice = volume::Slice2D<f64>;
pub type Slice32 = volume::Slice2D<f32>;
pub type Mesh = mesh::TriMesh<f64>;
pub type Mesh32 = mesh::TriMesh<f32>;
pub type Net = unet::UNet<f64>;
/// Single-precision network; the usual choice for training.
pub type Net32 = unet::UNet<f32>;
pub type Tensor = loss::SliceTensor<f64>;
pub type Tensor32 = loss::SliceTensor<f32>;

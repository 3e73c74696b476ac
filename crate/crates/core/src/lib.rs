//! Uncertainty estimation for radiance fields and Gaussian splatting on synthetic scenes.

mod error;

pub mod adfield;
pub mod geom;
pub mod gsplat;
pub mod image;
pub mod metrics;
mod scalar;
pub mod scenegen;
pub mod seed;
pub mod umethods;
pub mod volrend;

pub use error::{Error, Result};
pub use image::Image;
pub use scalar::Scalar;

pub type CameraPose64 = scenegen::CameraPose<f64>;
pub type CameraPose32 = scenegen::CameraPose<f32>;
pub type ViewDataset64 = scenegen::ViewDataset<f64>;
pub type ViewDataset32 = scenegen::ViewDataset<f32>;
pub type MlpField64 = adfield::MlpField<f64>;
pub type MlpField32 = adfield::MlpField<f32>;
pub type GaussianCloud64 = gsplat::GaussianCloud<f64>;
pub type GaussianCloud32 = gsplat::GaussianCloud<f32>;

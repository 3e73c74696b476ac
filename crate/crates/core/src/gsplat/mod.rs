//! 3-D Gaussian splatting with per-Gaussian uncertainty: projection, depth-sorted
//! rasterization and its reverse pass, density control.

mod density;
mod gaussian;
mod raster;

pub use density::{densify_and_prune, DensifyConfig};
pub use gaussian::{
    project_gaussian, splat_alpha, Gaussian3D, GaussianCloud, ProjectedGaussian, ALPHA_MAX, CLOUD_FORMAT, CLOUD_VERSION,
    COV_EPS, Z_MIN,
};
pub use raster::{rasterize, rasterize_backward, CloudGradients, Raster, RasterConfig};

//! Image quality (PSNR, SSIM, depth RMSE) and uncertainty quality (NLL, AUSE, AUCE).

mod calibration;
mod quality;

use serde::{Deserialize, Serialize};

pub use calibration::{auce, ause, gaussian_nll, probit, CoverageCurve, SparsificationCurve, DEPTH_BETA_MIN, RGB_BETA_MIN};
pub use quality::{depth_rmse, mse, psnr, ssim, ssim_with_grad, SSIM_SIGMA, SSIM_WINDOW};

/// Metrics of one prediction against ground truth. LPIPS is not computed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub nll: f64,
    pub ause: f64,
    pub auce: f64,
    pub depth_rmse: Option<f64>,
    pub depth_nll: Option<f64>,
}

use radunc_core::metrics::{auce, ause, depth_rmse, gaussian_nll, psnr, ssim, DEPTH_BETA_MIN, RGB_BETA_MIN};
use radunc_core::scenegen::View;
use radunc_core::umethods::UncertainPrediction;
use radunc_core::{Image, Scalar};

use crate::config::EvalSettings;
use crate::Result;

/// Metrics of one prediction against one ground-truth view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewScores {
    pub psnr: f64,
    pub ssim: f64,
    pub nll: f64,
    pub ause: f64,
    pub auce: f64,
    /// Colour variance averaged over pixels and channels.
    pub mean_variance: f64,
    pub depth_rmse: Option<f64>,
    pub depth_nll: Option<f64>,
}

pub fn evaluate_view<T: Scalar>(pred: &UncertainPrediction<T>, view: &View<T>, settings: &EvalSettings) -> Result<ViewScores> {
    let gt = &view.rgb;
    let mean = &pred.mean;
    let errors: Vec<f64> = mean
        .data()
        .chunks(3)
        .zip(gt.data().chunks(3))
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / 3.0)
        .collect();
    let (_, ause_value) = ause(&errors, &pred.pixel_variance(), settings.ause_steps)?;
    let flat = |img: &Image<T>| img.data().iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let std: Vec<f64> = pred.variance.data().iter().map(|v| v.as_f64().max(0.0).sqrt()).collect();
    let (_, auce_value) = auce(&flat(mean), &std, &flat(gt), settings.auce_levels)?;

    let (depth_rmse_value, depth_nll_value) = match (&view.depth, &view.depth_mask) {
        (Some(depth), Some(mask)) if mask.iter().any(|&m| m) => {
            let rmse = depth_rmse(&pred.depth, depth, mask)?;
            let pick = |img: &Image<T>| -> Result<Image<T>> {
                let v: Vec<T> = img.data().iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
                Ok(Image::from_vec(v.len(), 1, 1, v)?)
            };
            let nll = gaussian_nll(&pick(&pred.depth)?, &pick(&pred.depth_variance)?, &pick(depth)?, DEPTH_BETA_MIN)?;
            (Some(rmse), Some(nll))
        }
        _ => (None, None),
    };
    Ok(ViewScores {
        psnr: psnr(mean, gt)?,
        ssim: ssim(mean, gt)?,
        nll: gaussian_nll(mean, &pred.variance, gt, RGB_BETA_MIN)?,
        ause: ause_value,
        auce: auce_value,
        mean_variance: pred.mean_variance(),
        depth_rmse: depth_rmse_value,
        depth_nll: depth_nll_value,
    })
}

/// Average over views; depth metrics only when every view has them.
pub fn mean_scores(scores: &[ViewScores]) -> ViewScores {
    let n = scores.len().max(1) as f64;
    let avg = |f: &dyn Fn(&ViewScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&ViewScores) -> Option<f64>| {
        let v: Option<Vec<f64>> = scores.iter().map(f).collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / n)
    };
    ViewScores {
        psnr: avg(&|s| s.psnr),
        ssim: avg(&|s| s.ssim),
        nll: avg(&|s| s.nll),
        ause: avg(&|s| s.ause),
        auce: avg(&|s| s.auce),
        mean_variance: avg(&|s| s.mean_variance),
        depth_rmse: avg_opt(&|s| s.depth_rmse),
        depth_nll: avg_opt(&|s| s.depth_nll),
    }
}

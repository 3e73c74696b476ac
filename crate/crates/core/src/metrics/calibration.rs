use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::{Error, Image, Result, Scalar};

pub const RGB_BETA_MIN: f64 = 0.03;
pub const DEPTH_BETA_MIN: f64 = 2.0;

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn probit(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Mean Gaussian negative log-likelihood with the standard deviation clamped at `beta_min`.
/// `variance` has either the same channels as `mean` or one channel shared by all.
pub fn gaussian_nll<T: Scalar>(mean: &Image<T>, variance: &Image<T>, gt: &Image<T>, beta_min: f64) -> Result<f64> {
    mean.check_same_shape(gt, "nll target")?;
    let nc = mean.channels();
    if variance.width() != mean.width()
        || variance.height() != mean.height()
        || (variance.channels() != nc && variance.channels() != 1)
    {
        return Err(Error::ShapeMismatch("variance image does not match the mean".into()));
    }
    let vc = variance.channels();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut sum = 0.0;
    for (i, (m, y)) in mean.data().iter().zip(gt.data()).enumerate() {
        let var = variance.data()[(i / nc) * vc + if vc == 1 { 0 } else { i % nc }].as_f64();
        if var < 0.0 || var.is_nan() {
            return Err(Error::InvalidArgument(format!("negative variance {var}")));
        }
        let sd = var.sqrt().max(beta_min);
        let r = y.as_f64() - m.as_f64();
        sum += half_log_2pi + sd.ln() + r * r / (2.0 * sd * sd);
    }
    Ok(sum / mean.data().len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsificationCurve {
    pub fractions: Vec<f64>,
    pub by_uncertainty: Vec<f64>,
    pub by_oracle: Vec<f64>,
}

/// Remaining-mean-error curve when removing pixels in descending `key` order (index tie-break).
fn sparsify(errors: &[f64], key: &[f64], fractions: &[f64], norm: f64) -> Vec<f64> {
    let n = errors.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));
    // suffix sums: mean error of order[k..]
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + errors[order[k]];
    }
    fractions
        .iter()
        .map(|&f| {
            let removed = (f * n as f64).floor() as usize;
            suffix[removed] / (n - removed) as f64 / norm
        })
        .collect()
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Area between the uncertainty-ordered and error-ordered sparsification curves on the grid
/// `j/steps`, `j = 0..steps`, both normalized by the full-set mean error.
pub fn ause(errors: &[f64], uncertainties: &[f64], steps: usize) -> Result<(SparsificationCurve, f64)> {
    if errors.len() != uncertainties.len() {
        return Err(Error::ShapeMismatch(format!("{} errors, {} uncertainties", errors.len(), uncertainties.len())));
    }
    if errors.len() < 2 || steps < 1 {
        return Err(Error::InvalidArgument("ause needs at least two pixels and one step".into()));
    }
    let fractions: Vec<f64> = (0..steps).map(|j| j as f64 / steps as f64).collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    if mean == 0.0 {
        let zeros = vec![0.0; steps];
        return Ok((
            SparsificationCurve {
                fractions,
                by_uncertainty: zeros.clone(),
                by_oracle: zeros,
            },
            0.0,
        ));
    }
    let by_uncertainty = sparsify(errors, uncertainties, &fractions, mean);
    let by_oracle = sparsify(errors, errors, &fractions, mean);
    let gap: Vec<f64> = by_uncertainty.iter().zip(&by_oracle).map(|(u, o)| u - o).collect();
    let area = trapezoid(&fractions, &gap);
    Ok((
        SparsificationCurve {
            fractions,
            by_uncertainty,
            by_oracle,
        },
        area,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
}

/// Coverage of `mean ± Φ⁻¹((p+1)/2)·std` at `p = k/(n_levels+1)`, and the area under
/// `|p̂ − p|` over `[0, 1]` (trapezoid, with the one-sided limits at both ends).
pub fn auce(mean: &[f64], std: &[f64], gt: &[f64], n_levels: usize) -> Result<(CoverageCurve, f64)> {
    if mean.len() != std.len() || mean.len() != gt.len() {
        return Err(Error::ShapeMismatch("auce inputs differ in length".into()));
    }
    if mean.is_empty() || n_levels == 0 {
        return Err(Error::InvalidArgument("auce needs pixels and levels".into()));
    }
    if let Some(s) = std.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative standard deviation {s}")));
    }
    let n = mean.len() as f64;
    let levels: Vec<f64> = (1..=n_levels).map(|k| k as f64 / (n_levels + 1) as f64).collect();
    let coverage: Vec<f64> = levels
        .iter()
        .map(|&p| {
            let z = probit(0.5 * (p + 1.0));
            let inside = (0..mean.len()).filter(|&i| (gt[i] - mean[i]).abs() <= z * std[i]).count();
            inside as f64 / n
        })
        .collect();
    // p → 0⁺: zero-width interval unless std is infinite; p → 1⁻: unbounded unless std is zero
    let at0 = (0..mean.len()).filter(|&i| gt[i] == mean[i] || std[i] == f64::INFINITY).count() as f64 / n;
    let at1 = (0..mean.len()).filter(|&i| gt[i] == mean[i] || std[i] > 0.0).count() as f64 / n;
    let mut xs = vec![0.0];
    xs.extend(&levels);
    xs.push(1.0);
    let mut gap = vec![at0];
    gap.extend(levels.iter().zip(&coverage).map(|(p, c)| (c - p).abs()));
    gap.push((at1 - 1.0).abs());
    let area = trapezoid(&xs, &gap);
    Ok((CoverageCurve { levels, coverage }, area))
}

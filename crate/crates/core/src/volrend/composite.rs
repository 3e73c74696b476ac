use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// How per-sample variances are weighted when composited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceWeighting {
    /// `Σ (T_i α_i)² β_i`, the field default.
    #[default]
    Squared,
    /// `Σ T_i α_i β_i`, the splat default.
    Linear,
}

/// Composited quantities for one pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RenderedPixel<T> {
    pub color: [T; 3],
    pub color_variance: [T; 3],
    pub depth: T,
    pub depth_variance: T,
    /// `Σ T_i α_i`.
    pub accumulation: T,
}

/// Upstream gradient with respect to a [`RenderedPixel`]. Composited variances are the same
/// for all channels, so a single scalar covers them (sum the per-channel gradients).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelGrad<T> {
    pub color: [T; 3],
    pub color_variance: T,
    pub depth: T,
    pub depth_variance: T,
}

/// Per-sample gradients written by [`composite_backward`].
pub struct SampleGradsMut<'a, T> {
    pub alpha: &'a mut [T],
    /// Flat `3N`, same layout as the colour input.
    pub color: &'a mut [T],
    pub beta: Option<&'a mut [T]>,
    pub t: Option<&'a mut [T]>,
}

/// `α_i = 1 − exp(−σ_i δ_i)` and the transmittance `T_i = Π_{j<i} (1 − α_j)`.
pub fn composite_weights<T: Scalar>(sigma: &[T], delta: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if sigma.len() != delta.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} densities vs {} spacings",
            sigma.len(),
            delta.len()
        )));
    }
    let alpha: Vec<T> = sigma.iter().zip(delta).map(|(&s, &d)| alpha_from_density(s, d)).collect();
    let mut trans = Vec::with_capacity(alpha.len());
    let mut t = T::one();
    for &a in &alpha {
        trans.push(t);
        t *= T::one() - a;
    }
    Ok((trans, alpha))
}

#[inline]
pub fn alpha_from_density<T: Scalar>(sigma: T, delta: T) -> T {
    -(-sigma * delta).exp_m1()
}

/// Composites one ray of samples: `alpha` (N), `color` (flat 3N), `beta` (N, optional), `t` (N).
pub fn composite_forward<T: Scalar>(
    alpha: &[T],
    color: &[T],
    beta: Option<&[T]>,
    t: &[T],
    background: [T; 3],
    weighting: VarianceWeighting,
) -> RenderedPixel<T> {
    let n = alpha.len();
    debug_assert!(color.len() == 3 * n && t.len() == n);
    let mut trans = T::one();
    let mut px = RenderedPixel::default();
    let mut var = T::zero();
    for i in 0..n {
        let w = trans * alpha[i];
        for c in 0..3 {
            px.color[c] += w * color[3 * i + c];
        }
        if let Some(b) = beta {
            var += match weighting {
                VarianceWeighting::Squared => w * w * b[i],
                VarianceWeighting::Linear => w * b[i],
            };
        }
        px.depth += w * t[i];
        px.accumulation += w;
        trans *= T::one() - alpha[i];
    }
    for c in 0..3 {
        px.color[c] += trans * background[c];
    }
    px.color_variance = [var; 3];
    // second pass for Σ w (t − d)²; the expanded form cancels badly
    let mut tr = T::one();
    for i in 0..n {
        let r = t[i] - px.depth;
        px.depth_variance += tr * alpha[i] * r * r;
        tr *= T::one() - alpha[i];
    }
    px
}

#[cfg(test)]
fn weight_at<T: Scalar>(alpha: &[T], i: usize) -> T {
    alpha[..i].iter().fold(T::one(), |acc, &a| acc * (T::one() - a)) * alpha[i]
}

/// Reverse pass of [`composite_forward`]; `pixel` must be its output for the same inputs.
#[allow(clippy::too_many_arguments)]
pub fn composite_backward<T: Scalar>(
    alpha: &[T],
    color: &[T],
    beta: Option<&[T]>,
    t: &[T],
    background: [T; 3],
    weighting: VarianceWeighting,
    pixel: &RenderedPixel<T>,
    grad: &PixelGrad<T>,
    out: SampleGradsMut<'_, T>,
) {
    let n = alpha.len();
    let two = T::lit(2.0);
    let d = pixel.depth;
    let residual = T::one() - pixel.accumulation;
    let SampleGradsMut {
        alpha: g_alpha,
        color: g_color,
        beta: mut g_beta,
        t: mut g_t,
    } = out;

    // forward transmittances, then dL/dw_i, then the back-to-front recursion
    // dL/dα_k = T_k (g_k − Q_k),  Q_k = g_{k+1} α_{k+1} + (1 − α_{k+1}) Q_{k+1}
    let mut trans = Vec::with_capacity(n);
    let mut tr = T::one();
    for &a in alpha {
        trans.push(tr);
        tr *= T::one() - a;
    }
    let mut g_w = vec![T::zero(); n];
    for i in 0..n {
        let w = trans[i] * alpha[i];
        let mut g = T::zero();
        for c in 0..3 {
            g += grad.color[c] * (color[3 * i + c] - background[c]);
            g_color[3 * i + c] = grad.color[c] * w;
        }
        if let Some(b) = beta {
            let (gw, gb) = match weighting {
                VarianceWeighting::Squared => (two * w * b[i], w * w),
                VarianceWeighting::Linear => (b[i], w),
            };
            g += grad.color_variance * gw;
            if let Some(out_b) = g_beta.as_deref_mut() {
                out_b[i] = grad.color_variance * gb;
            }
        }
        let r = t[i] - d;
        g += grad.depth * t[i] + grad.depth_variance * (r * r - two * d * residual * t[i]);
        if let Some(out_t) = g_t.as_deref_mut() {
            out_t[i] = grad.depth * w + grad.depth_variance * two * w * (r - d * residual);
        }
        g_w[i] = g;
    }
    let mut q = T::zero();
    for k in (0..n).rev() {
        g_alpha[k] = trans[k] * (g_w[k] - q);
        q = g_w[k] * alpha[k] + (T::one() - alpha[k]) * q;
    }
}

/// Composites one ray from densities, with squared-weight colour variance.
/// `color` is flat `3N`; `beta` may be empty for a field without an uncertainty head.
pub fn composite_pixel<T: Scalar>(
    sigma: &[T],
    color: &[T],
    beta: &[T],
    t: &[T],
    delta: &[T],
    background: [T; 3],
) -> Result<RenderedPixel<T>> {
    let n = sigma.len();
    if color.len() != 3 * n || t.len() != n || !(beta.is_empty() || beta.len() == n) {
        return Err(Error::ShapeMismatch(format!("inconsistent sample arrays for {n} samples")));
    }
    let (_, alpha) = composite_weights(sigma, delta)?;
    let beta = (!beta.is_empty()).then_some(beta);
    Ok(composite_forward(&alpha, color, beta, t, background, VarianceWeighting::Squared))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WHITE: [f64; 3] = [1.0; 3];

    #[test]
    fn vacuum() {
        let (tr, a) = composite_weights(&[0.0f64; 4], &[0.1; 4]).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
        assert!(tr.iter().all(|&x| x == 1.0));
        assert!(composite_weights(&[0.0f64; 3], &[0.1; 4]).is_err());
    }

    #[test]
    fn ln2_gives_half() {
        let (_, a) = composite_weights(&[2f64.ln()], &[1.0]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15);
        let (tr, _) = composite_weights(&[2f64.ln(); 3], &[1.0; 3]).unwrap();
        for (x, e) in tr.iter().zip([1.0, 0.5, 0.25]) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_pixel() {
        // α = (0.5, 1.0): weights (0.5, 0.5)
        let alpha = [0.5, 1.0];
        let color = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let px = composite_forward(&alpha, &color, Some(&[0.04, 0.02]), &[1.0, 2.0], WHITE, VarianceWeighting::Squared);
        assert_eq!(px.color, [0.5, 0.5, 0.0]);
        assert!((px.color_variance[0] - 0.015).abs() < 1e-15);
        assert_eq!(px.depth, 1.5);
        assert_eq!(px.depth_variance, 0.25);
        assert_eq!(px.accumulation, 1.0);
        let lin = composite_forward(&alpha, &color, Some(&[0.04, 0.02]), &[1.0, 2.0], WHITE, VarianceWeighting::Linear);
        assert!((lin.color_variance[2] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn background_fills_residual() {
        let px = composite_forward(&[0.25], &[0.0, 0.0, 0.0], None, &[1.0], [0.2, 0.4, 1.0], VarianceWeighting::Squared);
        for (c, e) in px.color.iter().zip([0.15f64, 0.3, 0.75]) {
            assert!((c - e).abs() < 1e-15);
        }
        assert_eq!(px.color_variance, [0.0; 3]);
    }

    #[test]
    fn composite_pixel_checks_lengths() {
        assert!(composite_pixel(&[1.0f64], &[0.0; 2], &[], &[1.0], &[0.1], WHITE).is_err());
        let px = composite_pixel(&[0.0f64; 2], &[0.3; 6], &[], &[1.0, 2.0], &[0.1, 0.1], WHITE).unwrap();
        assert_eq!(px.color, WHITE);
        assert_eq!(px.accumulation, 0.0);
    }

    fn loss(alpha: &[f64], color: &[f64], beta: &[f64], t: &[f64], g: &PixelGrad<f64>, w: VarianceWeighting) -> f64 {
        let bg = [0.3, 0.6, 0.9];
        let px = composite_forward(alpha, color, Some(beta), t, bg, w);
        (0..3).map(|c| g.color[c] * px.color[c]).sum::<f64>()
            + g.color_variance * px.color_variance[0]
            + g.depth * px.depth
            + g.depth_variance * px.depth_variance
    }

    #[test]
    fn backward_matches_finite_differences() {
        let alpha = [0.2, 0.7, 0.35, 0.9];
        let color = [0.1, 0.5, 0.9, 0.3, 0.3, 0.2, 0.8, 0.1, 0.6, 0.4, 0.9, 0.0];
        let beta = [0.05, 0.2, 0.01, 0.3];
        let t = [1.0, 1.3, 2.1, 2.2];
        let g = PixelGrad {
            color: [0.7, -0.4, 1.1],
            color_variance: -0.8,
            depth: 0.6,
            depth_variance: 1.3,
        };
        let bg = [0.3, 0.6, 0.9];
        for weighting in [VarianceWeighting::Squared, VarianceWeighting::Linear] {
            let px = composite_forward(&alpha, &color, Some(&beta), &t, bg, weighting);
            let (mut ga, mut gc, mut gb, mut gt) = ([0.0; 4], [0.0; 12], [0.0; 4], [0.0; 4]);
            composite_backward(
                &alpha,
                &color,
                Some(&beta),
                &t,
                bg,
                weighting,
                &px,
                &g,
                SampleGradsMut {
                    alpha: &mut ga,
                    color: &mut gc,
                    beta: Some(&mut gb),
                    t: Some(&mut gt),
                },
            );
            let h = 1e-6;
            let check = |analytic: f64, f: &dyn Fn(f64) -> f64| {
                let fd = (f(h) - f(-h)) / (2.0 * h);
                assert!((fd - analytic).abs() < 1e-7, "{fd} vs {analytic}");
            };
            for i in 0..4 {
                check(ga[i], &|e| {
                    let mut a = alpha;
                    a[i] += e;
                    loss(&a, &color, &beta, &t, &g, weighting)
                });
                check(gb[i], &|e| {
                    let mut b = beta;
                    b[i] += e;
                    loss(&alpha, &color, &b, &t, &g, weighting)
                });
                check(gt[i], &|e| {
                    let mut tt = t;
                    tt[i] += e;
                    loss(&alpha, &color, &beta, &tt, &g, weighting)
                });
            }
            for j in 0..12 {
                check(gc[j], &|e| {
                    let mut c = color;
                    c[j] += e;
                    loss(&alpha, &c, &beta, &t, &g, weighting)
                });
            }
        }
    }

    proptest! {
        #[test]
        fn weights_partition_unity(sig in prop::collection::vec(0.0f64..20.0, 1..12), dt in 0.01f64..0.5) {
            let delta = vec![dt; sig.len()];
            let (tr, a) = composite_weights(&sig, &delta).unwrap();
            let mut sum = 0.0;
            for i in 0..sig.len() {
                prop_assert!(a[i] >= 0.0 && a[i] < 1.0 || a[i] == 1.0 && sig[i] * dt > 36.0);
                if i > 0 { prop_assert!(tr[i] <= tr[i - 1]); }
                sum += tr[i] * a[i];
            }
            let residual = tr[sig.len() - 1] * (1.0 - a[sig.len() - 1]);
            prop_assert!((sum + residual - 1.0).abs() < 1e-12);
        }

        #[test]
        fn depth_variance_properties(
            alpha in prop::collection::vec(0.0f64..1.0, 1..8),
            t0 in 0.5f64..2.0,
            perm_seed in 0u64..100,
        ) {
            let n = alpha.len();
            let t: Vec<f64> = (0..n).map(|i| t0 + 0.3 * i as f64).collect();
            let color = vec![0.5; 3 * n];
            let px = composite_forward(&alpha, &color, None, &t, WHITE, VarianceWeighting::Squared);
            prop_assert!(px.depth_variance >= 0.0);
            // relabelling: Σ w (t − d)² depends only on the multiset of (w_i, t_i)
            let w: Vec<f64> = (0..n).map(|i| weight_at(&alpha, i)).collect();
            let mut idx: Vec<usize> = (0..n).collect();
            let k = (perm_seed as usize) % n;
            idx.rotate_left(k);
            let d: f64 = idx.iter().map(|&i| w[i] * t[i]).sum();
            let dv: f64 = idx.iter().map(|&i| w[i] * (t[i] - d).powi(2)).sum();
            prop_assert!((dv - px.depth_variance).abs() < 1e-12);
        }
    }

    #[test]
    fn single_weighted_sample_has_zero_depth_variance() {
        let px = composite_forward(&[0.0, 1.0, 0.4], &[0.5; 9], None, &[1.0, 2.0, 3.0], WHITE, VarianceWeighting::Squared);
        assert_eq!(px.depth, 2.0);
        assert_eq!(px.depth_variance, 0.0);
        // a saturated sample with partial mass elsewhere has positive variance
        let px = composite_forward(&[0.5, 1.0], &[0.5; 6], None, &[1.0, 2.0], WHITE, VarianceWeighting::Squared);
        assert!(px.depth_variance > 0.0);
    }
}

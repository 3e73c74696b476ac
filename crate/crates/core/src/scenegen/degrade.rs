use rand_distr::{Distribution, Normal};

use crate::image::Image;
use crate::{seed, Error, Result, Scalar};

/// Adds i.i.d. `N(0, ν²)` noise to every pixel and channel, then clamps to `[0, 1]`.
pub fn apply_gaussian_noise<T: Scalar>(image: &Image<T>, nu: T, seed_value: u64) -> Result<Image<T>> {
    if !(nu >= T::zero()) {
        return Err(Error::InvalidArgument(format!("noise scale must be non-negative, got {nu}")));
    }
    if nu == T::zero() {
        return Ok(image.clone());
    }
    let mut rng = seed::rng(seed_value);
    let normal = Normal::new(0.0, nu.as_f64()).expect("positive std");
    Ok(image.map(|x| {
        let e = T::lit(normal.sample(&mut rng));
        (x + e).max(T::zero()).min(T::one())
    }))
}

/// Normalized 1-D Gaussian kernel of odd width `k` with σ = k/4.
pub fn gaussian_kernel<T: Scalar>(k: usize) -> Result<Vec<T>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "blur kernel size must be odd and positive, got {k}"
        )));
    }
    let sigma = k as f64 / 4.0;
    let r = (k / 2) as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| T::lit(w / total)).collect())
}

/// Separable Gaussian blur with kernel width `k` (odd) and clamp-to-edge borders.
pub fn apply_gaussian_blur<T: Scalar>(image: &Image<T>, k: usize) -> Result<Image<T>> {
    let kernel = gaussian_kernel::<T>(k)?;
    if k == 1 {
        return Ok(image.clone());
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let r = (k / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;

    let mut horiz = Image::zeros(w, h, ch);
    for v in 0..h {
        for u in 0..w {
            for c in 0..ch {
                let mut acc = T::zero();
                for (j, &kw) in kernel.iter().enumerate() {
                    let uu = clamp(u as i64 + j as i64 - r, w);
                    acc += kw * image.get(uu, v, c);
                }
                horiz.set(u, v, c, acc);
            }
        }
    }
    let mut out = Image::zeros(w, h, ch);
    for v in 0..h {
        for u in 0..w {
            for c in 0..ch {
                let mut acc = T::zero();
                for (j, &kw) in kernel.iter().enumerate() {
                    let vv = clamp(v as i64 + j as i64 - r, h);
                    acc += kw * horiz.get(u, vv, c);
                }
                out.set(u, v, c, acc);
            }
        }
    }
    Ok(out)
}

use crate::{Error, Image, Result, Scalar};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `10·log10(1/MSE)` for images in `[0, 1]`; `+∞` for identical images.
pub fn psnr<T: Scalar>(pred: &Image<T>, gt: &Image<T>) -> Result<f64> {
    pred.check_same_shape(gt, "psnr")?;
    let mse = mse(pred, gt);
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub fn mse<T: Scalar>(pred: &Image<T>, gt: &Image<T>) -> f64 {
    let n = pred.data().len().max(1) as f64;
    pred.data().iter().zip(gt.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n
}

/// Root mean squared error over the pixels where `mask` is set.
pub fn depth_rmse<T: Scalar>(pred: &Image<T>, gt: &Image<T>, mask: &[bool]) -> Result<f64> {
    pred.check_same_shape(gt, "depth")?;
    if mask.len() != pred.num_pixels() {
        return Err(Error::ShapeMismatch(format!("mask of {} for {} pixels", mask.len(), pred.num_pixels())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sum += (pred.data()[i].as_f64() - gt.data()[i].as_f64()).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("depth mask selects no pixels".into()));
    }
    Ok((sum / n as f64).sqrt())
}

fn window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= s);
    g
}

/// One channel as a row-major plane.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn of<T: Scalar>(img: &Image<T>, c: usize) -> Plane {
        let (w, h) = (img.width(), img.height());
        let data = (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).map(|(u, v)| img.get(u, v, c).as_f64()).collect();
        Plane { w, h, data }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Valid-region separable correlation with the Gaussian window.
    fn filter(&self, g: &[f64; SSIM_WINDOW]) -> Plane {
        let k = SSIM_WINDOW;
        let (ow, oh) = (self.w + 1 - k, self.h + 1 - k);
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                tmp[y * ow + x] = (0..k).map(|i| g[i] * self.data[y * self.w + x + i]).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    /// Adjoint of [`Plane::filter`] back onto a `w × h` plane.
    fn filter_adjoint(&self, g: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
        let k = SSIM_WINDOW;
        let (ow, oh) = (self.w, self.h);
        let mut tmp = vec![0.0; ow * h];
        for y in 0..oh {
            for x in 0..ow {
                let v = self.data[y * ow + x];
                for i in 0..k {
                    tmp[(y + i) * ow + x] += g[i] * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..ow {
                let v = tmp[y * ow + x];
                for i in 0..k {
                    out[y * w + x + i] += g[i] * v;
                }
            }
        }
        Plane { w, h, data: out }
    }
}

fn check_ssim_shape<T: Scalar>(pred: &Image<T>, gt: &Image<T>) -> Result<()> {
    pred.check_same_shape(gt, "ssim")?;
    if pred.width() < SSIM_WINDOW || pred.height() < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            pred.width(),
            pred.height()
        )));
    }
    Ok(())
}

/// Mean structural similarity (Gaussian window 11, σ 1.5, valid region), averaged over channels.
pub fn ssim<T: Scalar>(pred: &Image<T>, gt: &Image<T>) -> Result<f64> {
    Ok(ssim_impl(pred, gt, false)?.0)
}

/// SSIM and its gradient with respect to `pred`.
pub fn ssim_with_grad<T: Scalar>(pred: &Image<T>, gt: &Image<T>) -> Result<(f64, Image<T>)> {
    let (s, g) = ssim_impl(pred, gt, true)?;
    Ok((s, g.expect("requested")))
}

fn ssim_impl<T: Scalar>(pred: &Image<T>, gt: &Image<T>, want_grad: bool) -> Result<(f64, Option<Image<T>>)> {
    check_ssim_shape(pred, gt)?;
    let g = window();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let (w, h, nc) = (pred.width(), pred.height(), pred.channels());
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::<T>::zeros(w, h, nc));
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * nc) as f64;
    for c in 0..nc {
        let x = Plane::of(pred, c);
        let y = Plane::of(gt, c);
        let mx = x.filter(&g);
        let my = y.filter(&g);
        let mxx = x.zip(&x, |a, _| a * a).filter(&g);
        let myy = y.zip(&y, |a, _| a * a).filter(&g);
        let mxy = x.zip(&y, |a, b| a * b).filter(&g);
        let n = mx.data.len();
        let (mut d_mu, mut d_xx, mut d_xy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ux, uy) = (mx.data[i], my.data[i]);
            let sxx = mxx.data[i] - ux * ux;
            let syy = myy.data[i] - uy * uy;
            let sxy = mxy.data[i] - ux * uy;
            let a1 = 2.0 * ux * uy + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                // through μx directly and via σx² = mxx − μx², σxy = mxy − μx μy
                d_mu[i] = (2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2) - s * (2.0 * ux / b1 - 2.0 * ux / b2);
                d_xx[i] = -s / b2;
                d_xy[i] = 2.0 * a1 / (b1 * b2);
            }
        }
        if let Some(gimg) = grad.as_mut() {
            let plane = |d: Vec<f64>| Plane { w: mx.w, h: mx.h, data: d }.filter_adjoint(&g, w, h);
            let (gm, gxx, gxy) = (plane(d_mu), plane(d_xx), plane(d_xy));
            for v in 0..h {
                for u in 0..w {
                    let i = v * w + u;
                    let val = gm.data[i] + 2.0 * x.data[i] * gxx.data[i] + y.data[i] * gxy.data[i];
                    gimg.set(u, v, c, T::lit(val / count));
                }
            }
        }
    }
    Ok((total / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random(w: usize, h: usize, s: u64) -> Image<f64> {
        let mut rng = seed::rng(s);
        Image::from_fn(w, h, 3, |_, _, px| px.iter_mut().for_each(|x| *x = rng.random::<f64>()))
    }

    #[test]
    fn psnr_cases() {
        let a = Image::filled(4, 4, 3, 0.5f64);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|x| x + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::filled(3, 4, 3, 0.5)).is_err());
    }

    #[test]
    fn rmse_cases() {
        let a = Image::from_vec(2, 1, 1, vec![3.0f64, 4.0]).unwrap();
        let z = Image::zeros(2, 1, 1);
        assert!((depth_rmse(&a, &z, &[true, true]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(depth_rmse(&a, &a, &[true, false]).unwrap(), 0.0);
        assert!(depth_rmse(&a, &z, &[false, false]).is_err());
    }

    #[test]
    fn ssim_identity_symmetry_and_closed_form() {
        let a = random(16, 13, 1);
        let b = random(16, 13, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let c = Image::filled(12, 12, 3, 0.3f64);
        let d = c.map(|x| x + 0.1);
        let (c1, _) = (K1 * K1, K2 * K2);
        let expect = (2.0 * 0.3 * 0.4 + c1) / (0.09 + 0.16 + c1);
        assert!((ssim(&c, &d).unwrap() - expect).abs() < 1e-12);
        assert!(ssim(&Image::filled(10, 12, 3, 0.0f64), &Image::filled(10, 12, 3, 0.0)).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random(13, 12, 3);
        let b = random(13, 12, 4);
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        for &(u, v, c) in &[(0, 0, 0), (6, 5, 1), (12, 11, 2), (3, 9, 0), (10, 2, 1)] {
            let mut p = a.clone();
            p.set(u, v, c, a.get(u, v, c) + h);
            let mut m = a.clone();
            m.set(u, v, c, a.get(u, v, c) - h);
            let num = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            assert!((num - g.get(u, v, c)).abs() < 1e-7 * (1.0 + num.abs()), "{num} vs {}", g.get(u, v, c));
        }
    }
}

use rand::Rng;

use super::adam::{exp_decay, Adam};
use super::config::TrainConfig;
use super::train_field::{ray_loss, Objective, TrainReport};
use crate::geom;
use crate::gsplat::{densify_and_prune, rasterize, rasterize_backward, DensifyConfig, Gaussian3D, GaussianCloud, RasterConfig};
use crate::metrics::ssim_with_grad;
use crate::scenegen::{View, ViewDataset};
use crate::volrend::{PixelGrad, VarianceWeighting};
use crate::{seed, Error, Result, Scalar};

/// Radius of the train camera centres around their mean.
pub fn scene_extent<T: Scalar>(dataset: &ViewDataset<T>) -> f64 {
    let centers: Vec<[f64; 3]> = dataset.train_views().map(|v| v.camera.center().map(|x| x.as_f64())).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let n = centers.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|k| centers.iter().map(|c| c[k]).sum::<f64>() / n);
    let r = centers.iter().map(|c| geom::norm(geom::sub(*c, mean))).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

pub(crate) fn raster_config(cfg: &TrainConfig) -> RasterConfig {
    RasterConfig {
        background: cfg.render.background,
        weighting: VarianceWeighting::Linear,
        ..RasterConfig::default()
    }
}

/// Loss and per-pixel upstream gradients of one rendered train view.
fn view_loss<T: Scalar>(
    objective: Objective,
    cfg: &TrainConfig,
    raster: &crate::gsplat::Raster<T>,
    view: &View<T>,
) -> Result<(f64, Vec<PixelGrad<T>>)> {
    let out = &raster.output;
    let n = raster.pixels.len();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let lambda = T::lit(cfg.lambda_ssim);
    let w_photo = T::one() - lambda;
    let floor = T::lit(cfg.variance_floor);
    let mut loss = T::zero();
    let mut grads: Vec<PixelGrad<T>> = Vec::with_capacity(n);
    for (i, px) in raster.pixels.iter().enumerate() {
        let y = &view.rgb.data()[3 * i..3 * i + 3];
        let y = [y[0], y[1], y[2]];
        match objective {
            Objective::Vanilla => {
                let mut g = PixelGrad::default();
                for c in 0..3 {
                    let r = px.color[c] - y[c];
                    loss += w_photo * r.abs() * inv_n / T::lit(3.0);
                    g.color[c] = w_photo * r.signum() * inv_n / T::lit(3.0);
                    if r == T::zero() {
                        g.color[c] = T::zero();
                    }
                }
                grads.push(g);
            }
            Objective::Active => {
                let (l, mut g) = ray_loss(objective, px.color, px.color_variance[0], y, floor);
                loss += w_photo * l * inv_n;
                g.color = g.color.map(|x| x * w_photo * inv_n);
                g.color_variance *= w_photo * inv_n;
                grads.push(g);
            }
        }
    }
    if cfg.lambda_ssim > 0.0 {
        let (s, gs) = ssim_with_grad(&out.color, &view.rgb)?;
        loss += lambda * T::lit((1.0 - s) / 2.0);
        for (i, g) in grads.iter_mut().enumerate() {
            for c in 0..3 {
                g.color[c] -= lambda * T::lit(0.5) * gs.data()[3 * i + c];
            }
        }
    }
    Ok((loss.as_f64(), grads))
}

fn group_lr(k: usize, lrs: &[f64; 6]) -> f64 {
    match k {
        0..=2 => lrs[0],
        3..=5 => lrs[1],
        6..=9 => lrs[2],
        10 => lrs[3],
        11..=13 => lrs[4],
        _ => lrs[5],
    }
}

/// Trains a Gaussian cloud initialized from the train views' depth maps.
pub fn train_cloud<T: Scalar>(dataset: &ViewDataset<T>, cfg: &TrainConfig, objective: Objective) -> Result<(GaussianCloud<T>, TrainReport)> {
    cfg.validate()?;
    let cc = &cfg.cloud;
    let mut cloud = GaussianCloud::init_from_views(
        dataset,
        cc.init_points,
        T::lit(cc.init_opacity),
        T::lit(cc.beta_init),
        T::lit(cc.beta_floor),
        seed::derive_str(cfg.seed, "cloud-init"),
    )?;
    let report = fit_cloud(&mut cloud, dataset, cfg, objective)?;
    Ok((cloud, report))
}

/// Continues optimizing `cloud` for `cfg.steps` steps, one train view per step.
pub fn fit_cloud<T: Scalar>(
    cloud: &mut GaussianCloud<T>,
    dataset: &ViewDataset<T>,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<TrainReport> {
    cfg.validate()?;
    let views: Vec<&View<T>> = dataset.train_views().collect();
    if views.is_empty() {
        return Err(Error::EmptySplit("no train views".into()));
    }
    let cc = &cfg.cloud;
    let extent = scene_extent(dataset);
    let dcfg = cc.densify.clone().unwrap_or_else(|| DensifyConfig::for_extent(extent));
    let rcfg = raster_config(cfg);
    let mut rng = seed::rng(seed::derive_str(cfg.seed, "cloud-train"));
    let mut opt = Adam::new(1e-15);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut params: Vec<T> = Vec::new();
    let mut flat_grads: Vec<T> = Vec::new();

    for step in 0..cfg.steps {
        let view = views[rng.random_range(0..views.len())];
        let raster = rasterize(cloud, &view.camera, &rcfg)?;
        let (mut loss, upstream) = view_loss(objective, cfg, &raster, view)?;
        let mut grads = rasterize_backward(cloud, &view.camera, &rcfg, &raster, &upstream)?;
        if objective == Objective::Active && cfg.lambda_opacity > 0.0 {
            let w = cfg.lambda_opacity / cloud.len() as f64;
            for (g, gg) in cloud.gaussians.iter().zip(grads.gaussians.iter_mut()) {
                let o = g.opacity();
                loss += w * o.as_f64();
                gg.opacity_raw += T::lit(w) * o * (T::one() - o);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        if step < cc.densify_until {
            cloud.accumulate_stats(&grads.mean2d_ndc_norm, &grads.visible);
        }

        params.clear();
        flat_grads.clear();
        for (g, gg) in cloud.gaussians.iter().zip(&grads.gaussians) {
            params.extend_from_slice(&g.param_array());
            flat_grads.extend_from_slice(&gg.param_array());
        }
        let mean_lr = exp_decay(cc.lr_mean, cc.lr_mean_final, step, cfg.steps) * extent;
        let lrs = [mean_lr, cc.lr_scale, cc.lr_rotation, cc.lr_opacity, cc.lr_color, cc.lr_beta];
        opt.begin();
        opt.update(0, &mut params, &flat_grads, |i| group_lr(i % 15, &lrs));
        for (i, g) in cloud.gaussians.iter_mut().enumerate() {
            let p: &[T; 15] = params[15 * i..15 * i + 15].try_into().expect("15 parameters");
            *g = Gaussian3D::from_param_array(p);
            g.color = g.color.map(|c| c.max(T::zero()).min(T::one()));
        }

        let done = step + 1;
        if cc.densify_every > 0
            && done >= cc.densify_from
            && done < cc.densify_until
            && done % cc.densify_every == 0
        {
            let mut next = densify_and_prune(cloud, &dcfg, seed::derive(cfg.seed, done as u64))?;
            if next.len() > cc.max_gaussians {
                // over budget: keep the previous set, only drop what pruning would drop
                let mut kept = cloud.clone();
                kept.gaussians.retain(|g| g.opacity() >= T::lit(dcfg.min_opacity));
                if kept.is_empty() {
                    return Err(Error::EmptyCloud);
                }
                kept.reset_stats();
                next = kept;
            }
            *cloud = next;
            opt.reset();
        }
    }
    Ok(TrainReport { losses })
}

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gaussian::{Gaussian3D, GaussianCloud};
use crate::geom;
use crate::{seed, Error, Result, Scalar};

/// Thresholds for cloning, splitting and pruning. Scales are absolute world units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Mean screen-space gradient norm (NDC) above which a Gaussian is densified.
    pub grad_threshold: f64,
    /// Gaussians whose largest scale is at most this are cloned, larger ones are split.
    pub clone_max_scale: f64,
    pub min_opacity: f64,
    pub max_scale: f64,
    pub split_factor: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig::for_extent(1.0)
    }
}

impl DensifyConfig {
    /// Thresholds relative to the scene extent (camera-centre radius).
    pub fn for_extent(extent: f64) -> Self {
        DensifyConfig {
            grad_threshold: 2e-4,
            clone_max_scale: 0.01 * extent,
            min_opacity: 0.005,
            max_scale: 0.5 * extent,
            split_factor: 1.6,
        }
    }
}

/// Applies one round of density control and returns the new cloud with statistics reset.
pub fn densify_and_prune<T: Scalar>(cloud: &GaussianCloud<T>, cfg: &DensifyConfig, seed_value: u64) -> Result<GaussianCloud<T>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = seed::rng(seed_value);
    let threshold = T::lit(cfg.grad_threshold);
    let clone_max = T::lit(cfg.clone_max_scale);
    let min_opacity = T::lit(cfg.min_opacity);
    let max_scale = T::lit(cfg.max_scale);
    let shrink = T::lit(cfg.split_factor).ln();

    let mut out = Vec::with_capacity(cloud.len());
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let count = cloud.grad_count.get(i).copied().unwrap_or(0);
        let mean_grad = if count > 0 {
            cloud.grad_accum[i] / T::from_usize_lossy(count as usize)
        } else {
            T::zero()
        };
        if mean_grad > threshold {
            if g.max_scale() <= clone_max {
                out.push(g.clone());
                out.push(g.clone());
            } else {
                let r = geom::quat_to_mat(g.rotation);
                let s = g.scale();
                for _ in 0..2 {
                    let e: [T; 3] = std::array::from_fn(|k| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        T::lit(n) * s[k]
                    });
                    let mut child = g.clone();
                    child.mean = geom::add(g.mean, geom::mat_vec(&r, e));
                    child.log_scale = g.log_scale.map(|l| l - shrink);
                    out.push(child);
                }
            }
        } else {
            out.push(g.clone());
        }
    }
    out.retain(|g: &Gaussian3D<T>| g.opacity() >= min_opacity && g.max_scale() <= max_scale);
    if out.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(GaussianCloud::new(out, cloud.beta_floor))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(scale: f64, opacity: f64) -> Gaussian3D<f64> {
        Gaussian3D::isotropic([0.0, 0.0, 0.0], scale, opacity, [0.5; 3], 0.0)
    }

    #[test]
    fn no_triggers_leaves_cloud_unchanged() {
        let cloud = GaussianCloud::new(vec![g(0.1, 0.5), g(0.02, 0.9)], 1e-3);
        let out = densify_and_prune(&cloud, &DensifyConfig::default(), 0).unwrap();
        assert_eq!(out.gaussians, cloud.gaussians);
    }

    #[test]
    fn transparent_is_pruned() {
        let cloud = GaussianCloud::new(vec![g(0.1, 0.5), g(0.1, 0.0)], 1e-3);
        let out = densify_and_prune(&cloud, &DensifyConfig::default(), 0).unwrap();
        assert_eq!(out.len(), 1);
        let only = GaussianCloud::new(vec![g(0.1, 0.0)], 1e-3);
        assert!(matches!(densify_and_prune(&only, &DensifyConfig::default(), 0), Err(Error::EmptyCloud)));
    }

    #[test]
    fn large_gaussian_splits_small_clones() {
        let mut cloud = GaussianCloud::new(vec![g(0.2, 0.5), g(0.005, 0.5)], 1e-3);
        cloud.accumulate_stats(&[1e-3, 1e-3], &[true, true]);
        let out = densify_and_prune(&cloud, &DensifyConfig::default(), 3).unwrap();
        assert_eq!(out.len(), 4);
        for child in &out.gaussians[..2] {
            assert!((child.max_scale() - 0.2 / 1.6).abs() < 1e-12);
            assert_ne!(child.mean, [0.0; 3]);
        }
        assert_eq!(out.gaussians[2], cloud.gaussians[1]);
        assert_eq!(out.gaussians[3], cloud.gaussians[1]);
        assert!(out.grad_count.iter().all(|&c| c == 0));
    }

    #[test]
    fn oversized_is_pruned() {
        let cloud = GaussianCloud::new(vec![g(0.6, 0.5), g(0.1, 0.5)], 1e-3);
        assert_eq!(densify_and_prune(&cloud, &DensifyConfig::default(), 0).unwrap().len(), 1);
    }
}

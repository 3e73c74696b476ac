use radunc_core::scenegen::{load_transforms_dataset, split_views, SceneModel, SplitMode, SplitTag, ViewDataset};
use radunc_core::{seed, Scalar};

use crate::config::ExperimentConfig;
use crate::Result;

/// The full, untagged dataset of an experiment, plus its scene when it is procedural.
pub fn base_dataset<T: Scalar>(cfg: &ExperimentConfig) -> Result<(ViewDataset<T>, Option<SceneModel<T>>)> {
    if let Some(path) = &cfg.dataset {
        let ds = load_transforms_dataset(path)?;
        ds.validate()?;
        return Ok((ds, None));
    }
    let scene = cfg.scene.build::<T>()?;
    let cams = cfg.rig.cameras::<T>()?;
    Ok((ViewDataset::from_scene(&scene, &cams), Some(scene)))
}

/// Seed of the default train/test split, shared by every protocol.
pub(crate) fn split_seed(cfg: &ExperimentConfig) -> u64 {
    seed::derive_str(cfg.seed, "split")
}

/// Tags the base dataset with the default split: every 10th view is test, all others train.
/// Datasets loaded with their own test frames keep their tags.
pub fn clean_dataset<T: Scalar>(cfg: &ExperimentConfig, base: &ViewDataset<T>) -> Result<ViewDataset<T>> {
    if cfg.dataset.is_some() && base.views.iter().any(|v| v.split == SplitTag::Test) {
        return Ok(base.clone());
    }
    let split = split_views(base, SplitMode::Fraction { fraction: 1.0 }, split_seed(cfg))?;
    Ok(base.apply_split(&split))
}

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::camera::CameraPose;
use super::scene::{trace_ground_truth, Primitive, SceneModel, Shape};
use crate::geom;
use crate::image::Image;
use crate::{seed, Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View<T> {
    pub camera: CameraPose<T>,
    pub rgb: Image<T>,
    /// Ray distance to the surface; 0 where `depth_mask` is false.
    pub depth: Option<Image<T>>,
    pub depth_mask: Option<Vec<bool>>,
    pub split: SplitTag,
    /// Pixels altered by injected distractors, when clutter was added to this view.
    pub distractor_mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewDataset<T> {
    pub views: Vec<View<T>>,
}

/// Train/test view indices into a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Every 10th view (from index 0) is test; a random `fraction` of the rest is train.
    Fraction { fraction: f64 },
    /// Train on cameras whose centre has positive x, test on the rest.
    OodPositiveX,
    /// Train on the `n` views nearest in azimuth to view 0, test on the next `n`.
    FewView { n: usize },
}

impl<T: Scalar> View<T> {
    pub fn is_train(&self) -> bool {
        self.split == SplitTag::Train
    }
}

impl<T: Scalar> ViewDataset<T> {
    /// Traces every camera; all views start tagged as train.
    pub fn from_scene(scene: &SceneModel<T>, cameras: &[CameraPose<T>]) -> Self {
        let views = cameras
            .iter()
            .map(|cam| {
                let gt = trace_ground_truth(scene, cam);
                View {
                    camera: cam.clone(),
                    rgb: gt.rgb,
                    depth: Some(gt.depth),
                    depth_mask: Some(gt.mask),
                    split: SplitTag::Train,
                    distractor_mask: None,
                }
            })
            .collect();
        ViewDataset { views }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View<T>> {
        self.views.iter().filter(|v| v.is_train())
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View<T>> {
        self.views.iter().filter(|v| !v.is_train())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate()?;
            if v.rgb.width() != v.camera.width || v.rgb.height() != v.camera.height || v.rgb.channels() != 3 {
                return Err(Error::ShapeMismatch(format!("view {i}: image does not match camera resolution")));
            }
            if v.rgb.data().iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
                return Err(Error::InvalidArgument(format!("view {i}: pixel values outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Keeps the split's views (train first, then test) and tags them accordingly.
    pub fn apply_split(&self, split: &ViewSplit) -> ViewDataset<T> {
        let tagged = |i: usize, tag: SplitTag| {
            let mut v = self.views[i].clone();
            v.split = tag;
            v
        };
        let views = split
            .train
            .iter()
            .map(|&i| tagged(i, SplitTag::Train))
            .chain(split.test.iter().map(|&i| tagged(i, SplitTag::Test)))
            .collect();
        ViewDataset { views }
    }

    /// Applies `f` to every train image.
    pub fn map_train_images(&self, mut f: impl FnMut(usize, &Image<T>) -> Result<Image<T>>) -> Result<Self> {
        let mut out = self.clone();
        for (i, v) in out.views.iter_mut().enumerate() {
            if v.is_train() {
                v.rgb = f(i, &v.rgb)?;
            }
        }
        Ok(out)
    }
}

fn azimuth<T: Scalar>(cam: &CameraPose<T>) -> f64 {
    let c = cam.center();
    c[1].as_f64().atan2(c[0].as_f64())
}

fn angular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
    d.min(2.0 * std::f64::consts::PI - d)
}

/// Partitions views into train and test sets according to `mode`.
pub fn split_views<T: Scalar>(dataset: &ViewDataset<T>, mode: SplitMode, seed_value: u64) -> Result<ViewSplit> {
    let n = dataset.len();
    let split = match mode {
        SplitMode::Fraction { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!("train fraction must be in (0, 1], got {fraction}")));
            }
            let test: Vec<usize> = (0..n).step_by(10).collect();
            let mut rest: Vec<usize> = (0..n).filter(|i| i % 10 != 0).collect();
            let take = ((fraction * rest.len() as f64) - 1e-9).ceil().max(0.0) as usize;
            rest.shuffle(&mut seed::rng(seed_value));
            let mut train: Vec<usize> = rest.into_iter().take(take).collect();
            train.sort_unstable();
            ViewSplit { train, test }
        }
        SplitMode::OodPositiveX => {
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| dataset.views[i].camera.center()[0] > T::zero());
            ViewSplit { train, test }
        }
        SplitMode::FewView { n: k } => {
            if k == 0 {
                return Err(Error::InvalidArgument("few-view split needs n >= 1".into()));
            }
            if n == 0 {
                return Err(Error::EmptySplit("dataset has no views".into()));
            }
            let reference = azimuth(&dataset.views[0].camera);
            let mut order: Vec<usize> = (0..n).collect();
            // gaps quantized to 1e-9 rad so rounding noise does not break index tie-breaks
            let gap = |i: usize| (angular_gap(azimuth(&dataset.views[i].camera), reference) * 1e9).round() as i64;
            order.sort_by_key(|&i| (gap(i), i));
            let mut train: Vec<usize> = order.iter().take(k).copied().collect();
            let mut test: Vec<usize> = order.iter().skip(k).take(k).copied().collect();
            train.sort_unstable();
            test.sort_unstable();
            ViewSplit { train, test }
        }
    };
    if split.train.is_empty() {
        return Err(Error::EmptySplit("no train views".into()));
    }
    if split.test.is_empty() {
        return Err(Error::EmptySplit("no test views".into()));
    }
    Ok(split)
}

fn saturated_color<T: Scalar>(hue: f64) -> [T; 3] {
    // HSV with s = v = 1
    let h = hue.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [T::lit(r), T::lit(g), T::lit(b)]
}

/// Adds 1–3 random distractor spheres to `⌈proportion · |train|⌉` randomly chosen train views.
///
/// Distractors sit in front of the scene within the central part of the view frustum and
/// only exist in the view they were drawn for; test views are untouched.
pub fn inject_clutter<T: Scalar>(
    dataset: &ViewDataset<T>,
    scene: &SceneModel<T>,
    proportion: f64,
    seed_value: u64,
) -> Result<ViewDataset<T>> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::InvalidArgument(format!("clutter proportion must be in [0, 1], got {proportion}")));
    }
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.views[i].is_train()).collect();
    if train.is_empty() {
        return Err(Error::EmptySplit("clutter needs train views".into()));
    }
    let count = ((proportion * train.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = seed::rng(seed_value);
    let mut chosen = train.clone();
    chosen.shuffle(&mut rng);
    chosen.truncate(count);
    chosen.sort_unstable();

    let mut out = dataset.clone();
    for &i in &chosen {
        let view = &mut out.views[i];
        let cam = view.camera.clone();
        let clean = trace_ground_truth(scene, &cam);
        let n_distractors = rng.random_range(1..=3);
        let mut cluttered = scene.clone();
        for _ in 0..n_distractors {
            let u = rng.random_range(0.2..0.8) * cam.width as f64;
            let v = rng.random_range(0.2..0.8) * cam.height as f64;
            let ray = cam.pixel_ray(
                (u as usize).min(cam.width - 1),
                (v as usize).min(cam.height - 1),
                T::lit(1e-9),
                T::infinity(),
            );
            let surface = scene
                .nearest_hit(&ray)
                .map(|(t, _)| t)
                .unwrap_or_else(|| geom::norm(cam.center()));
            let dist = surface * T::lit(rng.random_range(0.35..0.65));
            let radius = dist * T::lit(rng.random_range(0.06..0.12));
            cluttered.primitives.push(Primitive {
                shape: Shape::Sphere { radius },
                center: ray.at(dist),
                albedo: saturated_color(rng.random_range(0.0..1.0)),
            });
        }
        let gt = trace_ground_truth(&cluttered, &cam);
        let mask: Vec<bool> = (0..cam.width * cam.height)
            .map(|p| clean.rgb.data()[p * 3..p * 3 + 3] != gt.rgb.data()[p * 3..p * 3 + 3])
            .collect();
        view.rgb = gt.rgb;
        view.depth = Some(gt.depth);
        view.depth_mask = Some(gt.mask);
        view.distractor_mask = Some(mask);
    }
    Ok(out)
}

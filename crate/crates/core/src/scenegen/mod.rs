//! Procedural ground-truth scenes, camera rigs, degraded datasets and view splits.

mod camera;
mod dataset;
mod degrade;
mod scene;
mod transforms;

pub use camera::{make_pose_ring, perturb_pose_z, CameraPose, Intrinsics, Ray};
pub use dataset::{inject_clutter, split_views, SplitMode, SplitTag, View, ViewDataset, ViewSplit};
pub use degrade::{apply_gaussian_blur, apply_gaussian_noise, gaussian_kernel};
pub use scene::{distance_to_z_depth, trace_ground_truth, GroundTruth, Primitive, SceneModel, Shape};
pub use transforms::{load_transforms_dataset, save_transforms_dataset, MANIFEST_NAME};

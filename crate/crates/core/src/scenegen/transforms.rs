//! Reading and writing the `transforms.json` + PNG dataset layout.
//!
//! The manifest stores one camera→world 4×4 matrix per frame in the OpenGL convention
//! (x right, y up, looking down −z), which is also the camera frame used here, so the
//! conversion is a transpose of the rotation block plus `t = −R c`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::camera::CameraPose;
use super::dataset::{SplitTag, View, ViewDataset};
use crate::geom::{self, Mat3};
use crate::image::Image;
use crate::{Error, Result, Scalar};

pub const MANIFEST_NAME: &str = "transforms.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
    frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitTag>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

fn resolve_image(base: &Path, file_path: &str) -> PathBuf {
    let p = base.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Loads a dataset from a directory holding `transforms.json` (or from the manifest itself).
///
/// Frames without a `split` entry are tagged as train.
pub fn load_transforms_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<ViewDataset<T>> {
    let manifest_file = manifest_path(path.as_ref());
    let text = fs::read_to_string(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::malformed(&manifest_file, e.to_string()))?;
    if manifest.frames.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no frames", manifest_file.display())));
    }
    let base = manifest_file.parent().unwrap_or(Path::new("."));

    let mut views = Vec::with_capacity(manifest.frames.len());
    for (i, frame) in manifest.frames.iter().enumerate() {
        let rgb = Image::<T>::load_png_rgb(resolve_image(base, &frame.file_path))?;
        let (w, h) = (manifest.w.unwrap_or(rgb.width()), manifest.h.unwrap_or(rgb.height()));
        if (w, h) != (rgb.width(), rgb.height()) {
            return Err(Error::malformed(
                &manifest_file,
                format!("frame {i}: image is {}x{}, manifest says {w}x{h}", rgb.width(), rgb.height()),
            ));
        }
        let focal = match (manifest.fl_x, manifest.camera_angle_x) {
            (Some(f), _) => f,
            (None, Some(angle)) => 0.5 * w as f64 / (0.5 * angle).tan(),
            (None, None) => {
                return Err(Error::malformed(&manifest_file, "needs fl_x or camera_angle_x"));
            }
        };
        // file principal points are measured from the top row; ours from the bottom
        let cx = manifest.cx.unwrap_or(0.5 * w as f64);
        let cy = h as f64 - manifest.cy.unwrap_or(0.5 * h as f64);

        let m = &frame.transform_matrix;
        let block: Mat3<T> = std::array::from_fn(|r| std::array::from_fn(|c| T::lit(m[r][c])));
        if geom::det(&block).abs() < T::lit(1e-9) {
            return Err(Error::NonInvertibleMatrix { frame: i });
        }
        let mut rotation = geom::transpose(&block);
        if geom::orthonormality_error(&rotation) > T::lit(1e-9) {
            rotation = geom::orthonormalize_rows(&rotation);
        }
        let center = [T::lit(m[0][3]), T::lit(m[1][3]), T::lit(m[2][3])];
        let translation = geom::scale(geom::mat_vec(&rotation, center), -T::one());
        let camera = CameraPose::new(rotation, translation, T::lit(focal), [T::lit(cx), T::lit(cy)], w, h)?;
        views.push(View {
            camera,
            rgb,
            depth: None,
            depth_mask: None,
            split: frame.split.unwrap_or(SplitTag::Train),
            distractor_mask: None,
        });
    }
    Ok(ViewDataset { views })
}

/// Writes `transforms.json` plus one PNG per view under `dir/images/`.
///
/// All views must share intrinsics; the split tag of each view is stored per frame.
pub fn save_transforms_dataset<T: Scalar>(dataset: &ViewDataset<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let first = dataset
        .views
        .first()
        .ok_or_else(|| Error::EmptyDataset("nothing to save".into()))?;
    let cam0 = &first.camera;
    for v in &dataset.views {
        let c = &v.camera;
        if c.focal != cam0.focal || c.principal_point != cam0.principal_point || c.width != cam0.width || c.height != cam0.height {
            return Err(Error::Unsupported("per-frame intrinsics in transforms.json".into()));
        }
    }
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let mut frames = Vec::with_capacity(dataset.len());
    for (i, v) in dataset.views.iter().enumerate() {
        let name = format!("images/frame_{i:04}.png");
        v.rgb.save_png(dir.join(&name))?;
        let c2w = v.camera.camera_to_world();
        frames.push(Frame {
            file_path: name,
            transform_matrix: c2w.map(|row| row.map(|x| x.as_f64())),
            split: Some(v.split),
        });
    }
    let manifest = Manifest {
        camera_angle_x: Some(2.0 * (0.5 * cam0.width as f64 / cam0.focal.as_f64()).atan()),
        fl_x: Some(cam0.focal.as_f64()),
        fl_y: Some(cam0.focal.as_f64()),
        cx: Some(cam0.principal_point[0].as_f64()),
        cy: Some(cam0.height as f64 - cam0.principal_point[1].as_f64()),
        w: Some(cam0.width),
        h: Some(cam0.height),
        frames,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

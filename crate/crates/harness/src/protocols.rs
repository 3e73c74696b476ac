use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;
use radunc_core::scenegen::{
    apply_gaussian_blur, apply_gaussian_noise, inject_clutter, perturb_pose_z, split_views, SplitMode, View, ViewDataset,
};
use radunc_core::volrend::{gradient_norm_difference, pose_gradient_map, GradientNorm, Model, RenderConfig};
use radunc_core::{seed, Image, Scalar};

use crate::config::{ExperimentConfig, MethodName, Precision, ProtocolSpec, ViewsSplit};
use crate::data::{base_dataset, clean_dataset, split_seed};
use crate::eval::{evaluate_view, mean_scores};
use crate::methods::{fit_method, FittedMethod};
use crate::report::{Artifact, ResultRow, ResultsTable};
use crate::{HarnessError, Result};

/// One protocol point: the dataset trained on and how it is labelled in the table.
struct Point<T> {
    factor: String,
    level: f64,
    /// Points with equal keys share one training run.
    key: String,
    dataset: ViewDataset<T>,
}

/// Runs the protocol named in the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    run_protocol(cfg, &cfg.protocol)
}

pub fn run_protocol(cfg: &ExperimentConfig, protocol: &ProtocolSpec) -> Result<ResultsTable> {
    let cfg = ExperimentConfig {
        protocol: protocol.clone(),
        ..cfg.clone()
    };
    cfg.validate()?;
    match (&cfg.protocol, cfg.precision) {
        (ProtocolSpec::Pose { .. }, _) => pose::<f64>(&cfg),
        (_, Precision::F32) => grid::<f32>(&cfg),
        (_, Precision::F64) => grid::<f64>(&cfg),
    }
}

fn with_protocol(cfg: &ExperimentConfig, protocol: ProtocolSpec) -> Result<ResultsTable> {
    let p = if cfg.protocol.name() == protocol.name() { cfg.protocol.clone() } else { protocol };
    run_protocol(cfg, &p)
}

/// Noise and blur levels (defaults when the config holds another protocol).
pub fn run_protocol_aleatoric(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    with_protocol(
        cfg,
        ProtocolSpec::Aleatoric {
            noise: vec![0.0, 0.1, 0.2],
            blur: vec![1, 7, 15],
        },
    )
}

pub fn run_protocol_views(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    with_protocol(
        cfg,
        ProtocolSpec::Views {
            split: ViewsSplit::Fractions {
                fractions: vec![0.1, 0.25, 0.5, 1.0],
            },
        },
    )
}

pub fn run_protocol_clutter(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    with_protocol(
        cfg,
        ProtocolSpec::Clutter {
            proportions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        },
    )
}

pub fn run_protocol_pose(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    with_protocol(
        cfg,
        ProtocolSpec::Pose {
            shifts: vec![0.0, 1e-6, 1e-4],
            percentile: 95.0,
            view: 0,
        },
    )
}

fn fmt_level(x: f64) -> String {
    format!("{x}")
}

fn points<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<Point<T>>> {
    let (full, scene) = base_dataset::<T>(cfg)?;
    let clean = clean_dataset(cfg, &full)?;
    let point = |factor: &str, level: f64, key: String, dataset: ViewDataset<T>| Point {
        factor: factor.into(),
        level,
        key,
        dataset,
    };
    let split = |mode: SplitMode| -> Result<ViewDataset<T>> { Ok(full.apply_split(&split_views(&full, mode, split_seed(cfg))?)) };
    let mut out = Vec::new();
    match &cfg.protocol {
        ProtocolSpec::Clean => out.push(point("none", 0.0, "clean".into(), clean)),
        ProtocolSpec::Aleatoric { noise, blur } => {
            let noise_seed = seed::derive_str(cfg.seed, "noise");
            for &nu in noise {
                if nu == 0.0 {
                    out.push(point("noise", nu, "clean".into(), clean.clone()));
                    continue;
                }
                let ds = clean.map_train_images(|i, img| apply_gaussian_noise(img, T::lit(nu), seed::derive(noise_seed, i as u64)))?;
                out.push(point("noise", nu, format!("noise={}", fmt_level(nu)), ds));
            }
            for &k in blur {
                if k == 1 {
                    out.push(point("blur", 1.0, "clean".into(), clean.clone()));
                    continue;
                }
                let ds = clean.map_train_images(|_, img| apply_gaussian_blur(img, k))?;
                out.push(point("blur", k as f64, format!("blur={k}"), ds));
            }
        }
        ProtocolSpec::Views { split: s } => match s {
            ViewsSplit::Fractions { fractions } => {
                for &f in fractions {
                    out.push(point("fraction", f, format!("fraction={}", fmt_level(f)), split(SplitMode::Fraction { fraction: f })?));
                }
            }
            ViewsSplit::Ood => out.push(point("ood", 0.0, "ood".into(), split(SplitMode::OodPositiveX)?)),
            ViewsSplit::FewView { n } => {
                out.push(point("few_view", *n as f64, format!("few_view={n}"), split(SplitMode::FewView { n: *n })?))
            }
        },
        ProtocolSpec::Clutter { proportions } => {
            let scene = scene.ok_or_else(|| HarnessError::Config("the clutter protocol needs a procedural scene".into()))?;
            let clutter_seed = seed::derive_str(cfg.seed, "clutter");
            for &p in proportions {
                let ds = inject_clutter(&clean, &scene, p, clutter_seed)?;
                out.push(point("proportion", p, format!("proportion={}", fmt_level(p)), ds));
            }
        }
        ProtocolSpec::Pose { .. } => unreachable!("pose runs separately"),
    }
    Ok(out)
}

fn eval_render(cfg: &ExperimentConfig) -> RenderConfig {
    RenderConfig {
        stratified: false,
        ..cfg.train.render.clone()
    }
}

fn to_f64<T: Scalar>(img: &Image<T>) -> Image<f64> {
    img.convert()
}

/// Per-pixel standard deviation from the channel-mean variance.
pub(crate) fn std_map<T: Scalar>(variance: &Image<T>) -> Image<f64> {
    let v: Vec<f64> = variance
        .data()
        .chunks(variance.channels())
        .map(|c| (c.iter().map(|x| x.as_f64()).sum::<f64>() / c.len() as f64).max(0.0).sqrt())
        .collect();
    Image::from_vec(variance.width(), variance.height(), 1, v).expect("sized")
}

/// Mean predicted standard deviation on distractor pixels and on the remaining pixels of the
/// cluttered train views.
fn clutter_stds<T: Scalar>(fitted: &FittedMethod<T>, views: &[&View<T>], render: &RenderConfig) -> Result<Option<(f64, f64)>> {
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for view in views {
        let Some(mask) = &view.distractor_mask else { continue };
        let pred = fitted.predict(&view.camera, render)?;
        for (s, &m) in std_map(&pred.variance).data().iter().zip(mask) {
            if m {
                on += s;
                n_on += 1;
            } else {
                off += s;
                n_off += 1;
            }
        }
    }
    Ok((n_on > 0 && n_off > 0).then(|| (on / n_on as f64, off / n_off as f64)))
}

fn run_point<T: Scalar>(cfg: &ExperimentConfig, point: &Point<T>) -> ResultsTable {
    let protocol = cfg.protocol.name();
    let render = eval_render(cfg);
    let tests: Vec<&View<T>> = point.dataset.test_views().collect();
    let cluttered: Vec<&View<T>> = point.dataset.train_views().filter(|v| v.distractor_mask.is_some()).collect();
    let mut table = ResultsTable::default();
    for &method in &cfg.methods {
        let mut row = ResultRow::new(protocol, &point.factor, point.level, method.as_str());
        row.train_views = point.dataset.train_views().count();
        row.test_views = tests.len();
        let outcome = (|| -> Result<(ResultRow, Vec<Artifact>)> {
            let (fitted, _) = fit_method(method, &point.dataset, cfg)?;
            let mut scores = Vec::with_capacity(tests.len());
            let mut artifacts = Vec::new();
            let dir = PathBuf::from("images").join(protocol).join(&point.key).join(method.as_str());
            for (k, view) in tests.iter().enumerate() {
                let pred = fitted.predict(&view.camera, &render)?;
                scores.push(evaluate_view(&pred, view, &cfg.eval)?);
                if cfg.eval.images {
                    artifacts.push(Artifact::Rgb {
                        path: dir.join(format!("view{k:02}_render.png")),
                        image: to_f64(&pred.mean),
                    });
                    artifacts.push(Artifact::Heatmap {
                        path: dir.join(format!("view{k:02}_std.png")),
                        map: std_map(&pred.variance),
                        max: cfg.eval.heatmap_max_std,
                    });
                    artifacts.push(Artifact::Heatmap {
                        path: dir.join(format!("view{k:02}_depth.png")),
                        map: to_f64(&pred.depth),
                        max: render.far,
                    });
                }
            }
            let mut row = row.clone().with_scores(&mean_scores(&scores));
            if let Some((d, c)) = clutter_stds(&fitted, &cluttered, &render)? {
                row.distractor_std = Some(d);
                row.clean_std = Some(c);
            }
            Ok((row, artifacts))
        })();
        match outcome {
            Ok((row, artifacts)) => {
                table.push(row);
                table.artifacts.extend(artifacts);
            }
            Err(e) => table.push(row.failed(e)),
        }
    }
    table
}

fn grid<T: Scalar>(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let points = points::<T>(cfg)?;
    let mut first: HashMap<&str, usize> = HashMap::new();
    let unique: Vec<usize> = (0..points.len())
        .filter(|&i| {
            let fresh = !first.contains_key(points[i].key.as_str());
            first.entry(points[i].key.as_str()).or_insert(i);
            fresh
        })
        .collect();
    let tables: Vec<ResultsTable> = unique.par_iter().map(|&i| run_point(cfg, &points[i])).collect();
    let by_key: HashMap<&str, &ResultsTable> = unique.iter().map(|&i| points[i].key.as_str()).zip(&tables).collect();

    let mut out = ResultsTable::default();
    for (i, p) in points.iter().enumerate() {
        let t = by_key[p.key.as_str()];
        for r in &t.rows {
            out.push(ResultRow {
                factor: p.factor.clone(),
                level: p.level,
                ..r.clone()
            });
        }
        if first[p.key.as_str()] == i {
            out.artifacts.extend(t.artifacts.iter().cloned());
        }
    }
    Ok(out)
}

fn pose<T: Scalar>(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let ProtocolSpec::Pose { shifts, percentile, view } = &cfg.protocol else {
        unreachable!("called for the pose protocol")
    };
    let (full, _) = base_dataset::<T>(cfg)?;
    let clean = clean_dataset(cfg, &full)?;
    let tests: Vec<&View<T>> = clean.test_views().collect();
    let target = tests
        .get(*view)
        .ok_or_else(|| HarnessError::Config(format!("pose view {view} out of range ({} test views)", tests.len())))?;
    let render = eval_render(cfg);
    let mut table = ResultsTable::default();
    for &method in &cfg.methods {
        let base_row = ResultRow {
            train_views: clean.train_views().count(),
            test_views: tests.len(),
            ..ResultRow::new("pose", "shift", 0.0, method.as_str())
        };
        let fitted = match fit_method(method, &clean, cfg) {
            Ok((f, _)) => f,
            Err(e) => {
                for &d in shifts {
                    table.push(ResultRow { level: d, ..base_row.clone() }.failed(&e));
                }
                continue;
            }
        };
        let outcome = pose_rows(cfg, method, &fitted, &tests, target, &render, shifts, *percentile, &base_row);
        match outcome {
            Ok(t) => table.extend(t),
            Err(e) => {
                for &d in shifts {
                    table.push(ResultRow { level: d, ..base_row.clone() }.failed(&e));
                }
            }
        }
    }
    Ok(table)
}

#[allow(clippy::too_many_arguments)]
fn pose_rows<T: Scalar>(
    cfg: &ExperimentConfig,
    method: MethodName,
    fitted: &FittedMethod<T>,
    tests: &[&View<T>],
    target: &View<T>,
    render: &RenderConfig,
    shifts: &[f64],
    percentile: f64,
    base_row: &ResultRow,
) -> Result<ResultsTable> {
    let field = fitted
        .field()
        .ok_or_else(|| HarnessError::Config(format!("{} has no field to differentiate", method.as_str())))?;
    let scores = tests
        .iter()
        .map(|v| evaluate_view(&fitted.predict(&v.camera, render)?, v, &cfg.eval))
        .collect::<Result<Vec<_>>>()?;
    let row = base_row.clone().with_scores(&mean_scores(&scores));
    let dir = PathBuf::from("images").join("pose").join(method.as_str());
    let map0 = pose_gradient_map(Model::Field(field), &target.camera, render, GradientNorm::Stacked)?;
    let vmax = map0.data().iter().fold(0.0f64, |m, x| m.max(x.as_f64())).max(f64::MIN_POSITIVE);
    let mut table = ResultsTable::default();
    for &delta in shifts {
        let cam = perturb_pose_z(&target.camera, T::lit(delta));
        let map = pose_gradient_map(Model::Field(field), &cam, render, GradientNorm::Stacked)?;
        let thresholded = gradient_norm_difference(&map0, &map, percentile)?;
        let raw = gradient_norm_difference(&map0, &map, 0.0)?;
        let mean_abs = raw.data().iter().map(|x| x.as_f64()).sum::<f64>() / raw.data().len() as f64;
        let nonzero = thresholded.data().iter().filter(|&&x| x != T::zero()).count();
        let label = format!("shift={}", fmt_level(delta));
        if cfg.eval.images {
            let pred = fitted.predict(&cam, render)?;
            let dmax = raw.data().iter().fold(0.0f64, |m, x| m.max(x.as_f64())).max(f64::MIN_POSITIVE);
            table.artifacts.push(Artifact::Rgb {
                path: dir.join(format!("{label}_render.png")),
                image: to_f64(&pred.mean),
            });
            table.artifacts.push(Artifact::Heatmap {
                path: dir.join(format!("{label}_gradient.png")),
                map: to_f64(&map),
                max: vmax,
            });
            table.artifacts.push(Artifact::Heatmap {
                path: dir.join(format!("{label}_difference.png")),
                map: to_f64(&thresholded),
                max: dmax,
            });
        }
        table.push(ResultRow {
            level: delta,
            grad_diff_mean: Some(mean_abs),
            grad_diff_nonzero: Some(nonzero),
            ..row.clone()
        });
    }
    Ok(table)
}

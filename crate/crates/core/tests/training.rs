use radunc_core::adfield::{FieldConfig, MlpField};
use radunc_core::metrics::mse;
use radunc_core::scenegen::{make_pose_ring, Intrinsics, SceneModel, ViewDataset};
use radunc_core::umethods::{
    fit_laplace, laplace_mode, predict_laplace, predict_mc_dropout, predict_model, predict_ensemble, render_model,
    train, train_ensemble, train_vanilla, LaplaceConfig, LaplacePosterior, Objective, Representation, TrainConfig,
    TrainedModel,
};
use radunc_core::volrend::RenderConfig;

fn dataset(scene: &SceneModel<f64>, n: usize, px: usize) -> ViewDataset<f64> {
    let cams = make_pose_ring(n, 3.0, 0.35, [0.0; 3], Intrinsics::from_fov(0.7, px, px)).unwrap();
    ViewDataset::from_scene(scene, &cams)
}

fn small_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        rays_per_batch: 128,
        lr: 5e-3,
        lr_final: 5e-3,
        field: FieldConfig {
            hidden: 24,
            feature: 16,
            density_layers: 2,
            color_layers: 2,
            l_pos: 4,
            l_dir: 1,
            ..FieldConfig::default()
        },
        render: RenderConfig {
            samples: 16,
            near: 1.5,
            far: 4.5,
            stratified: true,
            background: [0.0; 3],
            ..RenderConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn field_fits_a_constant_colour_dataset() {
    let target = [0.3, 0.6, 0.2];
    let scene = SceneModel::new(vec![], target).unwrap();
    let data = dataset(&scene, 6, 8);
    let cfg = small_cfg(400);
    let (model, report) = train_vanilla(&data, &cfg, Representation::Field).unwrap();
    assert_eq!(report.losses.len(), 400);
    let mut worst: f64 = 0.0;
    for view in data.train_views() {
        let out = render_model(&model, &view.camera, &cfg.render).unwrap();
        worst = worst.max(mse(&out.color, &view.rgb));
    }
    assert!(worst < 1e-3, "train MSE {worst}");
}

#[test]
fn zero_steps_returns_the_initialisation_and_runs_are_deterministic() {
    let scene = SceneModel::single_sphere(0.7, [0.8, 0.3, 0.2], [1.0; 3]);
    let data = dataset(&scene, 4, 6);
    let cfg = small_cfg(0);
    let (model, report) = train_vanilla(&data, &cfg, Representation::Field).unwrap();
    assert!(report.losses.is_empty());
    let mut fc = cfg.field.clone();
    fc.beta_head = false;
    let init = MlpField::new(fc, radunc_core::seed::derive_str(cfg.seed, "field-init")).unwrap();
    assert_eq!(model, TrainedModel::Field(init));

    let cfg = small_cfg(20);
    for objective in [Objective::Vanilla, Objective::Active] {
        let a = train(&data, &cfg, Representation::Field, objective).unwrap();
        let b = train(&data, &cfg, Representation::Field, objective).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn mc_dropout_without_dropout_has_zero_variance() {
    let scene = SceneModel::single_sphere(0.7, [0.8, 0.3, 0.2], [1.0; 3]);
    let data = dataset(&scene, 4, 6);
    let cfg = small_cfg(30);
    let (TrainedModel::Field(f), _) = train_vanilla(&data, &cfg, Representation::Field).unwrap() else {
        unreachable!()
    };
    let cam = &data.views[1].camera;
    let p0 = predict_mc_dropout(&f, cam, &cfg.render, 4, 0.0, 9).unwrap();
    assert!(p0.variance.data().iter().all(|&v| v == 0.0));
    assert!(p0.depth_variance.data().iter().all(|&v| v == 0.0));
    let base = predict_model(&TrainedModel::Field(f.clone()), cam, &cfg.render, false).unwrap();
    assert_eq!(p0.mean, base.mean);

    let a = predict_mc_dropout(&f, cam, &cfg.render, 4, 0.2, 9).unwrap();
    let b = predict_mc_dropout(&f, cam, &cfg.render, 4, 0.2, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.mean_variance() > 0.0);
    assert!(a.variance.data().iter().all(|&v| v >= 0.0));
    assert!(predict_mc_dropout(&f, cam, &cfg.render, 1, 0.2, 9).is_err());
}

#[test]
fn point_laplace_posterior_reproduces_the_deterministic_render() {
    let scene = SceneModel::single_sphere(0.7, [0.8, 0.3, 0.2], [1.0; 3]);
    let data = dataset(&scene, 4, 6);
    let cfg = small_cfg(30);
    let (TrainedModel::Field(f), _) = train_vanilla(&data, &cfg, Representation::Field).unwrap() else {
        unreachable!()
    };
    let lc = LaplaceConfig {
        n_batches: 3,
        rays_per_batch: 64,
        samples: 4,
        density_samples: 3,
        ..LaplaceConfig::default()
    };
    let post = fit_laplace(&f, &data, &cfg.render, &lc).unwrap();
    assert!(post.ggn.iter().all(|&g| g >= 0.0));
    assert!(post.ggn.iter().any(|&g| g > 0.0));

    // an enormous precision stands in for a point posterior
    let point = LaplacePosterior::from_ggn(post.density_hidden, post.color_hidden, laplace_mode(&f), vec![0.0; post.ggn.len()], 1e300)
        .unwrap();
    let cam = &data.views[2].camera;
    let p = predict_laplace(&f, &point, cam, &cfg.render, &lc).unwrap();
    let det = render_model(&TrainedModel::Field(f.clone()), cam, &cfg.render).unwrap();
    for (a, b) in p.mean.data().iter().zip(det.color.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in p.depth.data().iter().zip(det.depth.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!(p.variance.data().iter().all(|&v| v.abs() < 1e-20));

    let q1 = predict_laplace(&f, &post, cam, &cfg.render, &lc).unwrap();
    let q2 = predict_laplace(&f, &post, cam, &cfg.render, &lc).unwrap();
    assert_eq!(q1, q2);
    assert!(q1.mean_variance() > 0.0);
    assert!(fit_laplace(&f, &data, &cfg.render, &LaplaceConfig { prior_precision: 0.0, ..lc.clone() }).is_err());
}

#[test]
fn ensemble_of_identical_members_has_zero_variance() {
    let scene = SceneModel::single_sphere(0.7, [0.8, 0.3, 0.2], [1.0; 3]);
    let data = dataset(&scene, 4, 6);
    let cfg = small_cfg(15);
    let (ens, reports) = train_ensemble(&data, &cfg, Representation::Field, 2).unwrap();
    assert_eq!(reports.len(), 2);
    assert_ne!(ens.members[0], ens.members[1]);
    let cam = &data.views[0].camera;
    let p = predict_ensemble(&ens, cam, &cfg.render).unwrap();
    assert!(p.mean_variance() > 0.0);

    let mut same = ens.clone();
    same.members[1] = same.members[0].clone();
    let p = predict_ensemble(&same, cam, &cfg.render).unwrap();
    assert!(p.variance.data().iter().all(|&v| v == 0.0));
    assert!(train_ensemble(&data, &cfg, Representation::Field, 1).is_err());
}

#[test]
fn cloud_training_reduces_the_loss_and_is_deterministic() {
    let scene = SceneModel::single_sphere(0.7, [0.8, 0.3, 0.2], [1.0; 3]);
    let data = dataset(&scene, 6, 16);
    let mut cfg = small_cfg(60);
    cfg.render.background = [1.0; 3];
    cfg.cloud.init_points = 200;
    cfg.cloud.densify_from = 20;
    cfg.cloud.densify_every = 20;
    cfg.cloud.densify_until = 50;
    for objective in [Objective::Vanilla, Objective::Active] {
        let (a, ra) = train(&data, &cfg, Representation::Cloud, objective).unwrap();
        let (b, _) = train(&data, &cfg, Representation::Cloud, objective).unwrap();
        assert_eq!(a, b);
        let head: f64 = ra.losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = ra.losses[ra.losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{objective:?}: {head} -> {tail}");
        let p = predict_model(&a, &data.views[0].camera, &cfg.render, objective == Objective::Active).unwrap();
        assert!(p.mean.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
        assert!(p.variance.data().iter().all(|&v| v >= 0.0));
    }
}

use radunc_core::adfield::{FieldConfig, MlpField};
use radunc_core::scenegen::{CameraPose, Intrinsics, Ray};
use radunc_core::volrend::{render_field_rays, render_field_rays_backward, FieldRays, PixelGrad, VarianceWeighting};

fn field(seed: u64) -> MlpField<f64> {
    let cfg = FieldConfig {
        hidden: 12,
        density_layers: 2,
        color_layers: 2,
        feature: 8,
        l_pos: 3,
        l_dir: 2,
        beta_head: true,
        ..FieldConfig::default()
    };
    MlpField::new(cfg, seed).unwrap()
}

fn rays() -> Vec<Ray<f64>> {
    let cam = CameraPose::look_at(
        [2.2, -1.4, 0.9],
        [0.0; 3],
        [0.0, 0.0, 1.0],
        Intrinsics::from_fov(0.7, 4, 3),
    )
    .unwrap();
    [(0, 0), (2, 1), (3, 2)]
        .iter()
        .map(|&(u, v)| cam.pixel_ray(u, v, 1.0, 4.5))
        .collect()
}

fn upstream(n: usize) -> Vec<PixelGrad<f64>> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            PixelGrad {
                color: [0.8 - 0.3 * t, (t * 1.1).sin(), 0.4],
                color_variance: 1.5 - 0.7 * t,
                depth: 0.3,
                depth_variance: -0.2 + 0.1 * t,
            }
        })
        .collect()
}

fn loss(f: &MlpField<f64>, batch: &FieldRays<f64>, w: VarianceWeighting, up: &[PixelGrad<f64>]) -> f64 {
    let r = render_field_rays(f, batch, [0.2, 0.5, 0.9], w, None).unwrap();
    r.pixels
        .iter()
        .zip(up)
        .map(|(p, g)| {
            (0..3).map(|c| p.color[c] * g.color[c]).sum::<f64>()
                + p.color_variance[0] * g.color_variance
                + p.depth * g.depth
                + p.depth_variance * g.depth_variance
        })
        .sum()
}

#[test]
fn parameter_gradients_through_the_renderer_match_finite_differences() {
    let batch = FieldRays::new(&rays(), 12, None);
    let up = upstream(3);
    for weighting in [VarianceWeighting::Squared, VarianceWeighting::Linear] {
        for seed in [1u64, 2] {
            let f = field(seed);
            let r = render_field_rays(&f, &batch, [0.2, 0.5, 0.9], weighting, None).unwrap();
            let g = render_field_rays_backward(&f, &batch, &r, &up, None, true).unwrap().params.unwrap();
            let analytic: Vec<f64> = g.param_slices().concat();
            let h = 1e-5;
            let mut idx = 0;
            for block in 0..f.param_slices().len() {
                for j in 0..f.param_slices()[block].len() {
                    let eval = |d: f64| {
                        let mut p = f.clone();
                        p.param_slices_mut()[block][j] += d;
                        loss(&p, &batch, weighting, &up)
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let a = analytic[idx];
                    assert!(
                        (fd - a).abs() <= 1e-4 * fd.abs().max(a.abs()).max(1e-4),
                        "block {block} entry {j}: {a} vs {fd}"
                    );
                    idx += 1;
                }
            }
        }
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    let f = field(3);
    let up = upstream(3);
    let base = rays();
    let batch = FieldRays::new(&base, 10, None);
    let r = render_field_rays(&f, &batch, [0.2, 0.5, 0.9], VarianceWeighting::Squared, None).unwrap();
    let g = render_field_rays_backward(&f, &batch, &r, &up, None, false).unwrap();
    assert!(g.params.is_none());
    let h = 1e-5;
    // moving a ray origin moves all of its sample points
    for ray in 0..batch.len() {
        for a in 0..3 {
            let eval = |d: f64| {
                let mut b = batch.clone();
                b.origins[ray][a] += d;
                loss(&f, &b, VarianceWeighting::Squared, &up)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic: f64 = (ray * batch.samples..(ray + 1) * batch.samples).map(|q| g.x[[q, a]]).sum();
            assert!((fd - analytic).abs() <= 1e-4 * fd.abs().max(analytic.abs()).max(1e-4), "{analytic} vs {fd}");
        }
    }
}

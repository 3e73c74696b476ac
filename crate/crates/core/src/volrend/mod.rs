//! Compositing of colour, variance and depth along rays; whole-image rendering; camera-pose
//! sensitivity maps.

mod composite;
mod render;

pub use composite::{
    alpha_from_density, composite_backward, composite_forward, composite_pixel, composite_weights, PixelGrad,
    RenderedPixel, SampleGradsMut, VarianceWeighting,
};
pub use render::{
    field_rays_output_grad, gradient_norm_difference, jet, pose_gradient_map, pose_jacobians, render_field_image,
    render_field_rays, render_field_rays_backward, render_image, save_heatmap_png, DropoutSpec, FieldRays,
    FieldRender, GradientNorm, Model, RenderConfig, RenderOutput,
};

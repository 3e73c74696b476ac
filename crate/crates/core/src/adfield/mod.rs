//! MLP radiance field with frequency encoding, batched reverse-mode gradients (including
//! through ray generation, for pose gradients) and ray sampling.

mod encoding;
mod field;
mod mlp;
mod ray;

pub use encoding::{encode_batch, encode_batch_backward, encoded_width, positional_encode};
pub use field::{
    field_backward, field_forward, DropoutMask, FieldConfig, FieldGradients, FieldOutput, FieldOutputGrad,
    FieldTape, MlpField, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use mlp::{Linear, Mlp, MlpTape};
pub use ray::{generate_ray, sample_depths, sample_ray, RayJacobian, RaySamples};

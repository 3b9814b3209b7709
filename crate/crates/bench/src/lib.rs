//! Deterministic fixtures shared by the criterion benches.

use seisinv_core::models::ModelConfig;
use seisinv_core::Tensor;

/// Smooth pseudo-random fill in [-1, 1] so benches need no rng.
pub fn filled(shape: &[usize], salt: f32) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |i| ((i as f32 * 0.7548777 + salt) * 12.9898).sin())
}

/// Patch and target batch shaped for `model` at depth `depth`.
pub fn batch(model: &ModelConfig, batch: usize, depth: usize) -> (Tensor<f32>, Tensor<f32>) {
    (
        filled(&[batch, 1, depth, model.patch_width], 0.3),
        filled(&[batch, depth], 0.9),
    )
}

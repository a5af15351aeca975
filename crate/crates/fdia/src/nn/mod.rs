//! From-scratch neural engine: Chebyshev graph-convolution layers, a dense
//! sigmoid head, binary cross-entropy, reverse-mode gradients, Adam, and
//! mini-batch training with early stopping. Includes a plain fully-connected
//! baseline operating on the flattened feature vector.

mod adam;
mod checkpoint;
mod model;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_model, save_model, CheckpointHeader};
pub use model::{
    bce_from_logits, bce_loss, sigmoid, CgcnArch, CgcnModel, ChebConvLayer, DenseHead, FcnArch,
    FcnModel, Model,
};
pub use train::{train, StopReason, TrainConfig, TrainHistory};

use crate::dataset::Scaler;
use crate::{FdiaError, Result};

/// Standardize a sample's features and run the forward pass.
pub fn predict(model: &Model, scaler: &Scaler, features: &[f64]) -> Result<f64> {
    if features.len() != model.input_width() {
        return Err(FdiaError::Dimension(format!(
            "sample has {} features, model expects {}",
            features.len(),
            model.input_width()
        )));
    }
    let x = scaler.apply(features);
    Ok(sigmoid(model.forward_logit(&x)))
}

/// Batch prediction; same math as element-wise [`predict`].
pub fn predict_batch(model: &Model, scaler: &Scaler, batch: &[&[f64]]) -> Result<Vec<f64>> {
    batch.iter().map(|f| predict(model, scaler, f)).collect()
}

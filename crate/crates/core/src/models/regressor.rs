//! Lead-distance regressor.
//!
//! Same conv trunk as the detector, then two dense layers to one scalar.
//! The head works in normalized units (distance / 80); training targets
//! are normalized the same way and the public forward denormalizes back
//! to meters.

use crate::error::{ArwError, Result};
use crate::scenegen::{DISTANCE_RANGE, IMAGE_SIZE};
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

use super::detector::conv_trunk;
use super::{BoundParams, ModelBundle, ModelKind};

/// Denormalization factor: normalized output × 80 = meters.
pub const DISTANCE_SCALE: f32 = DISTANCE_RANGE.1;

/// Tape-level forward pass to the normalized (d/80) output.
pub fn regressor_norm_output(tape: &Tape, bound: &BoundParams, image: Val) -> Result<Val> {
    let shape = tape.shape(image);
    if shape != [IMAGE_SIZE, IMAGE_SIZE, 3] {
        return Err(ArwError::dimension(format!(
            "expected {IMAGE_SIZE}x{IMAGE_SIZE}x3 image, got {shape:?}"
        )));
    }
    let feat = conv_trunk(tape, bound, image)?;
    let h = tape.dense(feat, bound.get("fc1.w"), bound.get("fc1.b"))?;
    let h = tape.relu(h);
    tape.dense(h, bound.get("fc2.w"), bound.get("fc2.b"))
}

/// Tape-level forward pass in meters.
pub fn regressor_meters(tape: &Tape, bound: &BoundParams, image: Val) -> Result<Val> {
    let norm = regressor_norm_output(tape, bound, image)?;
    Ok(tape.scale(norm, DISTANCE_SCALE))
}

/// Predicted lead distance in meters.
pub fn regressor_forward(model: &ModelBundle, image: &Tensor) -> Result<f32> {
    if model.kind != ModelKind::DistanceRegressor {
        return Err(ArwError::contract(format!(
            "regressor_forward on a {} bundle",
            model.kind.as_str()
        )));
    }
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let img = tape.leaf(image);
    let out = regressor_meters(&tape, &bound, img)?;
    let v = tape.scalar_value(out)?;
    if !v.is_finite() {
        return Err(ArwError::contract("regressor produced non-finite output"));
    }
    Ok(v)
}

/// Training loss: squared error in normalized units.
pub fn regressor_loss(
    tape: &Tape,
    bound: &BoundParams,
    image: Val,
    distance_m: f32,
) -> Result<Val> {
    let norm = regressor_norm_output(tape, bound, image)?;
    let target = tape.leaf(&Tensor::scalar(distance_m / DISTANCE_SCALE));
    tape.mse(norm, target)
}

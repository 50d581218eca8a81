//! Residual convolutional denoiser used by the restoration defense.
//!
//! Three replication-padded 3×3 convolutions predict a residual that is
//! added back to the input, so an untrained (zero) denoiser is the
//! identity.

use crate::error::{ArwError, Result};
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

use super::{BoundParams, ModelBundle, ModelKind};

/// Tape-level forward: input plus predicted residual (unclamped).
pub fn denoiser_output(tape: &Tape, bound: &BoundParams, image: Val) -> Result<Val> {
    let p1 = tape.pad_replicate(image, 1)?;
    let c1 = tape.conv2d(p1, bound.get("conv1.w"), 1)?;
    let c1 = tape.bias_channels(c1, bound.get("conv1.b"))?;
    let c1 = tape.relu(c1);
    let p2 = tape.pad_replicate(c1, 1)?;
    let c2 = tape.conv2d(p2, bound.get("conv2.w"), 1)?;
    let c2 = tape.bias_channels(c2, bound.get("conv2.b"))?;
    let c2 = tape.relu(c2);
    let p3 = tape.pad_replicate(c2, 1)?;
    let c3 = tape.conv2d(p3, bound.get("conv3.w"), 1)?;
    let res = tape.bias_channels(c3, bound.get("conv3.b"))?;
    tape.add(image, res)
}

/// Denoises an image, clamping the result to [0,1].
pub fn denoise(model: &ModelBundle, image: &Tensor) -> Result<Tensor> {
    if model.kind != ModelKind::Denoiser {
        return Err(ArwError::contract(format!(
            "denoise on a {} bundle",
            model.kind.as_str()
        )));
    }
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let img = tape.leaf(image);
    let out = denoiser_output(&tape, &bound, img)?;
    let raw = tape.value(out);
    let data = raw.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::from_vec(raw.shape(), data)
}

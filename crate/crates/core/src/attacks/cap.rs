//! Runtime patch against the distance regressor.
//!
//! Per frame: the gradient of the predicted distance is taken over the
//! lead vehicle's box, a gradient-times-input attribution selects the
//! most sensitive half of the box pixels, and the patch takes one signed
//! step there toward a larger predicted distance. An L-inf shrink
//! weighted by lambda then a clip to epsilon keep the patch stealthy.
//! The next frame inherits the patch resampled onto the new box.

use crate::error::{ArwError, Result};
use crate::models::{regressor_meters, ModelBundle, ModelKind};
use crate::scenegen::RoadScene;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::warp::remap_patch;
use super::{sign_zero, AttackResult, Budget, PatchState};

/// Fraction of box pixels the attribution step keeps.
const ATTRIBUTION_KEEP: f64 = 0.5;

pub fn cap_run(
    model: &ModelBundle,
    frames: &[RoadScene],
    budget: &Budget,
    lambda: f32,
) -> Result<Vec<(PatchState, AttackResult)>> {
    budget.validate()?;
    if model.kind != ModelKind::DistanceRegressor {
        return Err(ArwError::contract("cap_run attacks the distance regressor"));
    }
    if frames.is_empty() {
        return Err(ArwError::contract("cap_run needs at least one frame"));
    }
    let eps = budget.epsilon;
    let alpha = budget.alpha;
    let shrink = lambda * alpha;

    let shape = frames[0].image.shape().to_vec();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut delta = Tensor::zeros(&shape);
    let mut prev_bbox = frames[0].lead_box;
    let mut out = Vec::with_capacity(frames.len());

    for (t, frame) in frames.iter().enumerate() {
        let bbox = frame.lead_box;
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(ArwError::contract(format!(
                "frame {t} carries a degenerate lead box"
            )));
        }
        if t > 0 {
            delta = remap_patch(&delta, &prev_bbox, &bbox);
        }

        // box support in integer pixel coordinates
        let (bx0, by0, bx1, by1) = bbox.corners();
        let x_lo = bx0.floor().max(0.0) as usize;
        let y_lo = by0.floor().max(0.0) as usize;
        let x_hi = (bx1.ceil() as usize).min(w);
        let y_hi = (by1.ceil() as usize).min(h);

        let x_pert = frame.image.add_clamped(&delta, 0.0, 1.0)?;
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let leaf = tape.leaf(&x_pert);
        let pred = regressor_meters(&tape, &bound, leaf)?;
        let clean_tape = Tape::new();
        let clean_bound = model.bind(&clean_tape);
        let clean_leaf = clean_tape.leaf(&frame.image);
        let clean_pred =
            clean_tape.scalar_value(regressor_meters(&clean_tape, &clean_bound, clean_leaf)?)?;
        tape.backward(pred)?;
        let grad = tape.grad(leaf)?;

        // attribution |grad * input| summed over channels, box pixels only
        let mut scored: Vec<(f64, usize, usize)> = Vec::new();
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let mut a = 0.0f64;
                for ch in 0..c {
                    let k = (y * w + x) * c + ch;
                    a += (grad.data()[k] as f64 * x_pert.data()[k] as f64).abs();
                }
                scored.push((a, y, x));
            }
        }
        scored.sort_by(|l, r| {
            r.0.partial_cmp(&l.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(l.1.cmp(&r.1))
                .then(l.2.cmp(&r.2))
        });
        let keep = ((scored.len() as f64) * ATTRIBUTION_KEEP).ceil() as usize;

        // signed step toward larger predicted distance on selected pixels,
        // then shrink and clip; support stays inside the box
        let mut next = delta.data().to_vec();
        for &(_, y, x) in scored.iter().take(keep) {
            for ch in 0..c {
                let k = (y * w + x) * c + ch;
                next[k] += alpha * sign_zero(grad.data()[k]);
            }
        }
        for (k, v) in next.iter_mut().enumerate() {
            let y = (k / c) / w;
            let x = (k / c) % w;
            let inside = y >= y_lo && y < y_hi && x >= x_lo && x < x_hi;
            if !inside {
                *v = 0.0;
                continue;
            }
            let shrunk = sign_zero(*v) * (v.abs() - shrink).max(0.0);
            *v = shrunk.clamp(-eps, eps);
        }
        delta = Tensor::from_vec(&shape, next)?;

        let x_adv = frame.image.add_clamped(&delta, 0.0, 1.0)?;
        let adv_tape = Tape::new();
        let adv_bound = model.bind(&adv_tape);
        let adv_leaf = adv_tape.leaf(&x_adv);
        let adv_pred =
            adv_tape.scalar_value(regressor_meters(&adv_tape, &adv_bound, adv_leaf)?)?;

        out.push((
            PatchState {
                delta: delta.clone(),
                bbox,
                frame_index: t,
            },
            AttackResult {
                x_adv,
                delta: delta.clone(),
                loss_trace: vec![clean_pred, adv_pred],
                queries_used: 0,
                success: adv_pred > clean_pred,
            },
        ));
        prev_bbox = bbox;
    }
    Ok(out)
}

//! Robust physical perturbation: a masked, printable sign patch
//! optimized over a distribution of viewpoint transforms.
//!
//! Minimizes lambda * ||M . delta||_2 + NPS + E_T[ J(f(x_T + T(M . delta)), y*) ]
//! by gradient descent on delta; the expectation is estimated with eight
//! fresh transform samples per iteration. The non-printability score is
//! averaged over patch pixels so its scale is commensurate with the
//! detection loss at this image size.

use std::rc::Rc;

use crate::error::{ArwError, Result};
use crate::geometry::Box2;
use crate::models::{detector_loss, ModelBundle, ModelKind};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::warp::affine_warp_map;
use super::{PatchState, TransformSampler};

/// Transform samples per iteration for the expectation term.
const TRANSFORM_SAMPLES: usize = 8;
/// Gradient-descent step on the patch.
const RP2_STEP: f32 = 0.6;

/// Printable palette: a 2x4x4 lattice over the RGB cube (32 colors).
pub fn default_palette() -> Rc<Vec<[f32; 3]>> {
    let mut colors = Vec::with_capacity(32);
    for r in 0..2 {
        for g in 0..4 {
            for b in 0..4 {
                colors.push([
                    0.25 + 0.5 * r as f32,
                    0.125 + 0.25 * g as f32,
                    0.125 + 0.25 * b as f32,
                ]);
            }
        }
    }
    Rc::new(colors)
}

/// Patch mask for a sign scene: the octagon interior shrunk to 80%.
pub fn sign_mask(gt_box: &Box2) -> Tensor {
    crate::scenegen::octagon_mask(gt_box, 0.8)
}

/// Applies a patch: clip(x + delta, 0, 1).
pub fn apply_patch(x: &Tensor, patch: &PatchState) -> Result<Tensor> {
    x.add_clamped(&patch.delta, 0.0, 1.0)
}

fn mask_bbox(mask: &Tensor) -> Option<Box2> {
    let shape = mask.shape();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            let on = (0..c).any(|ch| mask.data()[(y * w + x) * c + ch] != 0.0);
            if on {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    any.then(|| Box2::from_corners(x0 as f32, y0 as f32, x1 as f32, y1 as f32))
}

/// Optimizes a printable patch confined to `mask`. `target_box` selects
/// the goal: `None` suppresses detection (the evaluated use); `Some(b)`
/// optimizes toward detecting a sign at `b`.
pub fn rp2(
    model: &ModelBundle,
    x: &Tensor,
    mask: &Tensor,
    target_box: Option<Box2>,
    sampler: &TransformSampler,
    lambda: f32,
    iters: usize,
) -> Result<PatchState> {
    if model.kind != ModelKind::SignDetector {
        return Err(ArwError::contract("rp2 attacks the sign detector"));
    }
    if mask.shape() != x.shape() {
        return Err(ArwError::dimension("mask shape must match the image"));
    }
    let bbox = mask_bbox(mask)
        .ok_or_else(|| ArwError::contract("rp2 mask is all zero"))?;
    let palette = default_palette();

    // interleaved RGB indices of masked pixels, for the printability term
    let shape = x.shape().to_vec();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut patch_indices = Vec::new();
    for y in 0..h {
        for xx in 0..w {
            if mask.data()[(y * w + xx) * c] != 0.0 {
                for ch in 0..c {
                    patch_indices.push((y * w + xx) * c + ch);
                }
            }
        }
    }
    let n_patch_px = (patch_indices.len() / 3).max(1);

    let mut delta = Tensor::zeros(&shape);
    let root = Rng::new(sampler.seed);

    for iter in 0..iters {
        let mut rng = root.derive(iter as u64);
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let x_leaf = tape.leaf(x);
        let delta_leaf = tape.leaf(&delta);
        let mask_leaf = tape.leaf(mask);
        let masked = tape.mul(delta_leaf, mask_leaf)?;

        // expectation over sampled transforms of the target loss
        let mut expectation = None;
        for _ in 0..TRANSFORM_SAMPLES {
            let t = sampler.sample(&mut rng);
            let map = affine_warp_map(h, w, c, (bbox.cx, bbox.cy), &t);
            let warped = tape.sparse_linear(masked, Rc::new(map))?;
            let lit = tape.add_const(x_leaf, t.brightness);
            let composed = tape.add(lit, warped)?;
            let j = detector_loss(
                &tape,
                &bound,
                composed,
                target_box.is_some(),
                target_box.as_ref(),
            )?;
            expectation = Some(match expectation {
                None => j,
                Some(acc) => tape.add(acc, j)?,
            });
        }
        let expectation = tape.scale(expectation.expect("samples > 0"), 1.0 / TRANSFORM_SAMPLES as f32);

        // lambda * ||masked delta||_2 (epsilon inside the sqrt keeps the
        // gradient defined at zero)
        let sq = tape.mul(masked, masked)?;
        let sum_sq = tape.sum(sq);
        let sum_eps = tape.add_const(sum_sq, 1e-12);
        let l2 = tape.sqrt(sum_eps)?;
        let reg = tape.scale(l2, lambda);

        // mean non-printability of the patched pixels
        let patched = tape.add(x_leaf, masked)?;
        let patch_px = tape.gather(patched, patch_indices.clone())?;
        let nps = tape.nps(patch_px, palette.clone())?;
        let nps_term = tape.scale(nps, 1.0 / n_patch_px as f32);

        let partial = tape.add(reg, nps_term)?;
        let total = tape.add(partial, expectation)?;
        tape.backward(total)?;

        let grad = tape.grad(delta_leaf)?;
        let next: Vec<f32> = delta
            .data()
            .iter()
            .zip(grad.data())
            .zip(mask.data())
            .map(|((&d, &g), &m)| (d - RP2_STEP * g) * m)
            .collect();
        delta = Tensor::from_vec(&shape, next)?;
    }

    Ok(PatchState {
        delta,
        bbox,
        frame_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_sign_dataset, SceneLabel};

    fn positive_scene() -> (Tensor, Box2) {
        let set = generate_sign_dataset(1, 33).unwrap();
        let SceneLabel::Sign {
            bbox: Some(b),
            ..
        } = set.entries[0].label
        else {
            panic!("expected positive scene")
        };
        (set.load_image(0).unwrap(), b)
    }

    #[test]
    fn zero_mask_is_contract_error() {
        let model = ModelBundle::new(ModelKind::SignDetector, 1);
        let (img, _) = positive_scene();
        let mask = Tensor::zeros(&[64, 64, 3]);
        let err = rp2(&model, &img, &mask, None, &TransformSampler::default(), 0.05, 1);
        assert!(err.is_err());
    }

    #[test]
    fn delta_confined_to_mask() {
        let model = ModelBundle::new(ModelKind::SignDetector, 1);
        let (img, gt) = positive_scene();
        let mask = sign_mask(&gt);
        let patch = rp2(
            &model,
            &img,
            &mask,
            None,
            &TransformSampler::default(),
            0.05,
            3,
        )
        .unwrap();
        for (d, m) in patch.delta.data().iter().zip(mask.data()) {
            if *m == 0.0 {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn nps_zero_when_palette_contains_patch_colors() {
        // patched pixels that sit exactly on palette colors score zero
        let tape = Tape::new();
        let palette = default_palette();
        let px = tape.leaf(
            &Tensor::from_vec(&[6], vec![0.25, 0.125, 0.375, 0.75, 0.875, 0.625]).unwrap(),
        );
        let nps = tape.nps(px, palette).unwrap();
        assert_eq!(tape.scalar_value(nps).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let model = ModelBundle::new(ModelKind::SignDetector, 2);
        let (img, gt) = positive_scene();
        let mask = sign_mask(&gt);
        let sampler = TransformSampler {
            seed: 5,
            ..Default::default()
        };
        let a = rp2(&model, &img, &mask, None, &sampler, 0.05, 2).unwrap();
        let b = rp2(&model, &img, &mask, None, &sampler, 0.05, 2).unwrap();
        assert_eq!(a.delta.data(), b.delta.data());
    }

    #[test]
    fn zero_iters_is_identity_patch() {
        let model = ModelBundle::new(ModelKind::SignDetector, 2);
        let (img, gt) = positive_scene();
        let mask = sign_mask(&gt);
        let patch = rp2(
            &model,
            &img,
            &mask,
            None,
            &TransformSampler::default(),
            0.05,
            0,
        )
        .unwrap();
        assert!(patch.delta.data().iter().all(|&v| v == 0.0));
        let applied = apply_patch(&img, &patch).unwrap();
        assert_eq!(applied.data(), img.data());
    }
}

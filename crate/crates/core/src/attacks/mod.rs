//! Perturbation attacks against the perception models.
//!
//! Six generators, all operating on [0,1] images under explicit budgets:
//! Gaussian noise, single-step FGSM, iterative projected gradient with an
//! adaptive step (auto-PGD), the SimBA black-box coordinate search, a
//! printable masked sign patch optimized over viewpoint transforms (RP2),
//! and a runtime frame-to-frame patch against the distance regressor
//! (CAP). The CAP objective is interpreted as "increase the predicted
//! relative distance"; its per-frame patch is confined to the lead
//! vehicle's box and inherited across frames.

mod auto_pgd;
mod cap;
mod fgsm;
mod gaussian;
mod region;
mod rp2;
mod simba;
pub(crate) mod warp;

pub use auto_pgd::auto_pgd;
pub use cap::cap_run;
pub use fgsm::fgsm;
pub use gaussian::gaussian_noise;
pub use region::{
    auto_pgd_in_region, fgsm_in_region, gaussian_noise_in_region, region_mask, simba_in_region,
};
pub use rp2::{apply_patch, default_palette, rp2, sign_mask};
pub use simba::{simba, SimbaBasis};

use crate::error::{ArwError, Result};
use crate::geometry::Box2;
use crate::models::{
    detector_loss, regressor_norm_output, GridPrediction, ModelBundle, ModelKind,
};
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

/// Norm family a budget constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Linf,
    L2,
}

/// Perturbation budget shared by the attacks.
#[derive(Debug, Clone)]
pub struct Budget {
    pub norm: NormKind,
    pub epsilon: f32,
    pub alpha: f32,
    pub max_iters: usize,
    pub max_queries: usize,
    pub seed: u64,
}

impl Budget {
    pub fn linf(epsilon: f32, alpha: f32, max_iters: usize, seed: u64) -> Budget {
        Budget {
            norm: NormKind::Linf,
            epsilon,
            alpha,
            max_iters,
            max_queries: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(ArwError::contract(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(ArwError::contract(format!(
                "alpha must be finite and > 0, got {}",
                self.alpha
            )));
        }
        if self.max_iters < 1 {
            return Err(ArwError::contract("max_iters must be >= 1"));
        }
        Ok(())
    }
}

/// Output of one attack on one image.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub x_adv: Tensor,
    pub delta: Tensor,
    pub loss_trace: Vec<f32>,
    pub queries_used: usize,
    pub success: bool,
}

impl AttackResult {
    /// x_adv = clip(x + delta); delta is kept pre-clip so norm audits see
    /// the raw perturbation.
    pub(crate) fn assemble(
        x: &Tensor,
        delta: Tensor,
        loss_trace: Vec<f32>,
        queries_used: usize,
        success: bool,
    ) -> Result<AttackResult> {
        let x_adv = x.add_clamped(&delta, 0.0, 1.0)?;
        Ok(AttackResult {
            x_adv,
            delta,
            loss_trace,
            queries_used,
            success,
        })
    }
}

/// A patch perturbation tied to a bounding box.
#[derive(Debug, Clone)]
pub struct PatchState {
    /// Full-image perturbation, exactly zero outside `bbox`.
    pub delta: Tensor,
    pub bbox: Box2,
    pub frame_index: usize,
}

/// Viewpoint-variation sampler for patch robustness training.
#[derive(Debug, Clone)]
pub struct TransformSampler {
    /// Rotation range in degrees.
    pub rotation_deg: f32,
    pub scale_lo: f32,
    pub scale_hi: f32,
    /// Translation range in pixels.
    pub translate_px: f32,
    pub brightness: f32,
    pub seed: u64,
}

impl Default for TransformSampler {
    fn default() -> Self {
        TransformSampler {
            rotation_deg: 15.0,
            scale_lo: 0.8,
            scale_hi: 1.2,
            translate_px: 4.0,
            brightness: 0.1,
            seed: 0,
        }
    }
}

/// One sampled transform.
#[derive(Debug, Clone, Copy)]
pub struct TransformParams {
    pub rotation: f32,
    pub scale: f32,
    pub dx: f32,
    pub dy: f32,
    pub brightness: f32,
}

impl TransformSampler {
    pub fn sample(&self, rng: &mut crate::rng::Rng) -> TransformParams {
        TransformParams {
            rotation: rng.range(-self.rotation_deg, self.rotation_deg).to_radians(),
            scale: rng.range(self.scale_lo, self.scale_hi),
            dx: rng.range(-self.translate_px, self.translate_px),
            dy: rng.range(-self.translate_px, self.translate_px),
            brightness: rng.range(-self.brightness, self.brightness),
        }
    }
}

/// White-box loss an attack maximizes, expressed on a tape so gradients
/// flow to the image.
pub trait AttackObjective {
    fn loss_on_tape(&self, tape: &Tape, image: Val) -> Result<Val>;

    fn loss_at(&self, image: &Tensor) -> Result<f32> {
        let tape = Tape::new();
        let leaf = tape.leaf(image);
        let loss = self.loss_on_tape(&tape, leaf)?;
        tape.scalar_value(loss)
    }

    /// Loss value and its gradient w.r.t. the image.
    fn loss_and_grad(&self, image: &Tensor) -> Result<(f32, Tensor)> {
        let tape = Tape::new();
        let leaf = tape.leaf(image);
        let loss = self.loss_on_tape(&tape, leaf)?;
        let value = tape.scalar_value(loss)?;
        tape.backward(loss)?;
        Ok((value, tape.grad(leaf)?))
    }
}

/// Detector objective: the grid-head training loss against the scene's
/// ground truth (maximizing it degrades detection).
pub struct DetectorObjective<'a> {
    pub model: &'a ModelBundle,
    pub present: bool,
    pub gt_box: Option<Box2>,
}

impl AttackObjective for DetectorObjective<'_> {
    fn loss_on_tape(&self, tape: &Tape, image: Val) -> Result<Val> {
        let bound = self.model.bind(tape);
        detector_loss(tape, &bound, image, self.present, self.gt_box.as_ref())
    }
}

/// Regressor objective: squared deviation of the normalized prediction
/// from the clean prediction, per the clean-vs-attacked protocol.
pub struct RegressorObjective<'a> {
    pub model: &'a ModelBundle,
    /// Clean prediction in meters.
    pub clean_pred: f32,
}

impl AttackObjective for RegressorObjective<'_> {
    fn loss_on_tape(&self, tape: &Tape, image: Val) -> Result<Val> {
        let bound = self.model.bind(tape);
        let norm = regressor_norm_output(tape, &bound, image)?;
        let clean = tape.leaf(&Tensor::scalar(
            self.clean_pred / crate::models::regressor::DISTANCE_SCALE,
        ));
        let d = tape.sub(norm, clean)?;
        tape.mul(d, d)
    }
}

/// Black-box score an attack tries to REDUCE, one model query per call.
pub trait BlackBoxScore {
    fn score(&self, image: &Tensor) -> Result<f32>;
}

/// Sign-present probability (max objectness over cells).
pub struct DetectorScore<'a> {
    pub model: &'a ModelBundle,
}

impl BlackBoxScore for DetectorScore<'_> {
    fn score(&self, image: &Tensor) -> Result<f32> {
        let pred: GridPrediction = crate::models::detector_forward(self.model, image)?;
        Ok(pred.max_objectness())
    }
}

/// Negative absolute deviation from the clean prediction; reducing it
/// drives the prediction away from the clean value.
pub struct RegressorScore<'a> {
    pub model: &'a ModelBundle,
    pub clean_pred: f32,
}

impl BlackBoxScore for RegressorScore<'_> {
    fn score(&self, image: &Tensor) -> Result<f32> {
        if self.model.kind != ModelKind::DistanceRegressor {
            return Err(ArwError::contract("RegressorScore needs a regressor"));
        }
        let pred = crate::models::regressor_forward(self.model, image)?;
        Ok(-(pred - self.clean_pred).abs())
    }
}

/// sign with sign(0) = 0.
pub(crate) fn sign_zero(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_validation() {
        assert!(Budget::linf(0.03, 0.01, 10, 1).validate().is_ok());
        assert!(Budget::linf(-0.1, 0.01, 10, 1).validate().is_err());
        assert!(Budget::linf(0.1, 0.0, 10, 1).validate().is_err());
        assert!(Budget::linf(0.1, 0.01, 0, 1).validate().is_err());
    }

    #[test]
    fn sign_zero_convention() {
        assert_eq!(sign_zero(3.5), 1.0);
        assert_eq!(sign_zero(-0.2), -1.0);
        assert_eq!(sign_zero(0.0), 0.0);
    }
}

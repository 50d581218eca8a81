//! Defense families: input processing, min-max adversarial training,
//! contrastive representation training, and diffusion-style restoration.

mod advtrain;
mod contrastive;
mod diffpir;
mod preprocess;

pub use advtrain::{adversarial_train, build_mixed_set, craft_inner_example, InnerAttack};
pub use contrastive::{contrastive_train, embed, infonce_loss, infonce_on_tape, ProjectionHead};
pub use diffpir::{
    default_denoiser, diffpir_restore, proximal_step, psnr, train_denoiser, DiffusionSchedule,
};
pub use preprocess::{bit_depth_reduce, median_blur, randomize};

use crate::attacks::Budget;
use crate::error::{ArwError, Result};

/// Which defense a benchmark cell applies, with its parameters.
#[derive(Debug, Clone)]
pub enum DefenseConfig {
    None,
    MedianBlur { k: usize },
    BitDepth { bits: u8 },
    Randomize { seed: u64 },
    AdvTrain { inner: InnerAttack, budget: Budget, epochs: usize, lr: f32, seed: u64 },
    Contrastive { tau: f32, epochs: usize, lr: f32, seed: u64 },
    DiffPir { schedule: DiffusionSchedule, denoiser_sigma: f32, seed: u64 },
}

impl DefenseConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseConfig::None => "none",
            DefenseConfig::MedianBlur { .. } => "medianblur",
            DefenseConfig::BitDepth { .. } => "bitdepth",
            DefenseConfig::Randomize { .. } => "randomize",
            DefenseConfig::AdvTrain { .. } => "advtrain",
            DefenseConfig::Contrastive { .. } => "contrastive",
            DefenseConfig::DiffPir { .. } => "diffpir",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DefenseConfig::MedianBlur { k } => {
                if k % 2 == 0 || *k < 3 {
                    return Err(ArwError::contract(format!("kernel {k} must be odd >= 3")));
                }
            }
            DefenseConfig::BitDepth { bits } => {
                if !(1..=8).contains(bits) {
                    return Err(ArwError::contract(format!("bits {bits} outside 1..=8")));
                }
            }
            DefenseConfig::Contrastive { tau, .. } => {
                if *tau <= 0.0 {
                    return Err(ArwError::contract("tau must be > 0"));
                }
            }
            DefenseConfig::AdvTrain { budget, .. } => budget.validate()?,
            DefenseConfig::DiffPir { schedule, .. } => schedule.validate()?,
            _ => {}
        }
        Ok(())
    }

    /// True when the defense transforms inputs (vs retraining the model).
    pub fn is_input_defense(&self) -> bool {
        matches!(
            self,
            DefenseConfig::MedianBlur { .. }
                | DefenseConfig::BitDepth { .. }
                | DefenseConfig::Randomize { .. }
                | DefenseConfig::DiffPir { .. }
        )
    }
}

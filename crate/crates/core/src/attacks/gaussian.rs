//! Additive Gaussian noise: x_adv = clip(x + e), e ~ N(0, sigma^2).

use crate::error::{ArwError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::AttackResult;

pub fn gaussian_noise(x: &Tensor, sigma: f32, seed: u64) -> Result<AttackResult> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(ArwError::contract(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut rng = Rng::new(seed);
    let delta = Tensor::from_vec(
        x.shape(),
        (0..x.numel()).map(|_| sigma * rng.normal()).collect(),
    )?;
    let moved = delta.max_abs() > 0.0;
    AttackResult::assemble(x, delta, vec![], 0, moved)
}

//! Diffusion-style restoration with a plug-in denoiser.
//!
//! The sampling loop alternates, per step t: (1) the denoiser predicts a
//! clean image x0 from the current iterate; (2) a proximal data step
//! x = (y + rho_t * x0) / (1 + rho_t), the closed-form minimizer of
//! ||y - x||^2 + rho_t ||x - x0||^2 for identity degradation; (3)
//! re-noising that mixes the denoiser-implied residual
//! (x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t) with fresh Gaussian noise
//! at weights sqrt(1-zeta), sqrt(zeta). No pre-trained diffusion prior
//! exists at this scale, so the default denoiser composes a median blur
//! with a small trained residual conv net.

use crate::error::{ArwError, Result};
use crate::models::denoiser::{denoise, denoiser_output};
use crate::models::train::{apply_weight_decay, clip_grad_norm, epoch_lr};
use crate::models::{sgd_step, ModelBundle, ModelKind, TrainReport};
use crate::rng::Rng;
use crate::scenegen::DatasetManifest;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::preprocess::median_blur;

/// Reverse-diffusion schedule for the restoration loop.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    /// Cumulative signal fractions, strictly decreasing, alpha_bar[0] ~ 1.
    pub alpha_bar: Vec<f32>,
    /// Mix weight between fresh noise (zeta) and the implied residual.
    pub zeta: f32,
    /// Proximal data weights per step.
    pub rho: Vec<f32>,
}

impl DiffusionSchedule {
    /// Artifact defaults: 10 steps, alpha_bar linear 0.999 -> 0.5,
    /// zeta = 0.3, rho_t = 0.5 (1 - abar_t) / abar_t.
    pub fn default_schedule() -> DiffusionSchedule {
        let t_steps = 10;
        let alpha_bar: Vec<f32> = (0..t_steps)
            .map(|t| 0.999 - (0.999 - 0.5) * t as f32 / (t_steps - 1) as f32)
            .collect();
        let rho = alpha_bar
            .iter()
            .map(|&ab| 0.5 * (1.0 - ab) / ab)
            .collect();
        DiffusionSchedule {
            alpha_bar,
            zeta: 0.3,
            rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_bar.is_empty() || self.alpha_bar.len() != self.rho.len() {
            return Err(ArwError::contract(
                "schedule needs matching non-empty alpha_bar and rho",
            ));
        }
        if !(0.9..=1.0).contains(&self.alpha_bar[0]) {
            return Err(ArwError::contract("alpha_bar[0] must be near 1"));
        }
        for w in self.alpha_bar.windows(2) {
            if w[1] >= w[0] {
                return Err(ArwError::contract("alpha_bar must strictly decrease"));
            }
        }
        if self.alpha_bar.iter().any(|&a| a <= 0.0 || a > 1.0) {
            return Err(ArwError::contract("alpha_bar values must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(ArwError::contract("zeta must lie in [0, 1]"));
        }
        if self.rho.iter().any(|&r| r <= 0.0) {
            return Err(ArwError::contract("rho values must be positive"));
        }
        Ok(())
    }
}

/// Closed-form proximal data step for identity degradation.
pub fn proximal_step(y: &Tensor, x0: &Tensor, rho: f32) -> Result<Tensor> {
    if y.shape() != x0.shape() {
        return Err(ArwError::dimension("proximal_step shapes differ"));
    }
    let data = y
        .data()
        .iter()
        .zip(x0.data())
        .map(|(&yv, &xv)| (yv + rho * xv) / (1.0 + rho))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// Trains the residual conv denoiser on Gaussian-corrupted copies of the
/// dataset's images.
pub fn train_denoiser(
    data: &DatasetManifest,
    sigma: f32,
    epochs: usize,
    lr: f32,
    seed: u64,
) -> Result<(ModelBundle, TrainReport)> {
    if data.is_empty() {
        return Err(ArwError::contract("train_denoiser: dataset is empty"));
    }
    let images: Vec<Tensor> = (0..data.len())
        .map(|i| data.load_image(i))
        .collect::<Result<Vec<_>>>()?;
    let mut model = ModelBundle::new(ModelKind::Denoiser, seed);
    let root = Rng::new(seed ^ 0xDE4015E);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..epochs {
        let mut rng = root.derive(epoch as u64);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(8) {
            for &i in batch {
                let mut nrng = root.derive(0x0157_0000 ^ ((epoch as u64) << 32 | i as u64));
                let noisy = Tensor::from_vec(
                    images[i].shape(),
                    images[i]
                        .data()
                        .iter()
                        .map(|&v| (v + sigma * nrng.normal()).clamp(0.0, 1.0))
                        .collect(),
                )?;
                let tape = Tape::new();
                let bound = model.bind(&tape);
                let noisy_val = tape.leaf(&noisy);
                let out = denoiser_output(&tape, &bound, noisy_val)?;
                let clean = tape.leaf(&images[i]);
                let loss = tape.mse(out, clean)?;
                epoch_loss += tape.scalar_value(loss)? as f64;
                tape.backward(loss)?;
                model.absorb_grads(&tape, &bound)?;
            }
            model.scale_grads(1.0 / batch.len() as f32);
            apply_weight_decay(&mut model)?;
            clip_grad_norm(&mut model);
            sgd_step(&mut model, epoch_lr(lr, epoch, epochs))?;
        }
        report
            .epoch_losses
            .push((epoch_loss / images.len() as f64) as f32);
    }
    Ok((model, report))
}

/// Default plug-in prior: median blur then the trained residual net.
pub fn default_denoiser<'m>(
    model: &'m ModelBundle,
) -> impl Fn(&Tensor) -> Result<Tensor> + 'm {
    move |x: &Tensor| {
        let blurred = median_blur(x, 3)?;
        denoise(model, &blurred)
    }
}

/// Runs the restoration loop on an attacked image. Deterministic per
/// seed; the output is clipped to [0,1].
pub fn diffpir_restore(
    y: &Tensor,
    schedule: &DiffusionSchedule,
    denoiser: &dyn Fn(&Tensor) -> Result<Tensor>,
    seed: u64,
) -> Result<Tensor> {
    schedule.validate()?;
    let mut rng = Rng::new(seed);
    let t_steps = schedule.alpha_bar.len();
    let mut x_t = y.clone();

    for t in (0..t_steps).rev() {
        let abar_t = schedule.alpha_bar[t] as f64;
        let rho = schedule.rho[t];
        let x0 = denoiser(&x_t)?;
        let xhat = proximal_step(y, &x0, rho)?;

        let abar_prev = if t > 0 {
            schedule.alpha_bar[t - 1] as f64
        } else {
            1.0
        };
        let c_signal = abar_prev.sqrt();
        let c_noise = (1.0 - abar_prev).sqrt();
        let w_res = (1.0 - schedule.zeta as f64).sqrt();
        let w_fresh = (schedule.zeta as f64).sqrt();
        let denom = (1.0 - abar_t).sqrt().max(1e-6);
        let sqrt_abar_t = abar_t.sqrt();

        let data: Vec<f32> = x_t
            .data()
            .iter()
            .zip(x0.data())
            .zip(xhat.data())
            .map(|((&xt, &x0v), &xh)| {
                let eps_hat = (xt as f64 - sqrt_abar_t * x0v as f64) / denom;
                let eps_fresh = rng.normal() as f64;
                (c_signal * xh as f64 + c_noise * (w_res * eps_hat + w_fresh * eps_fresh)) as f32
            })
            .collect();
        x_t = Tensor::from_vec(y.shape(), data)?;
    }
    Tensor::from_vec(
        y.shape(),
        x_t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
}

/// Peak signal-to-noise ratio in dB between two same-shape images.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f32> {
    if a.shape() != b.shape() {
        return Err(ArwError::dimension("psnr shapes differ"));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f32::INFINITY);
    }
    Ok((10.0 * (1.0 / mse).log10()) as f32)
}

//! Standard (non-adversarial) training for the two perception models.

use crate::error::{ArwError, Result};
use crate::rng::Rng;
use crate::scenegen::{DatasetManifest, SceneLabel};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::{detector_loss, regressor_loss, sgd_step, ModelBundle, ModelKind};

const BATCH: usize = 8;
/// Global gradient-norm ceiling per batch; keeps plain SGD stable on the
/// occasional steep batch.
const MAX_GRAD_NORM: f64 = 10.0;
/// L2 penalty on weight matrices (biases exempt).
const WEIGHT_DECAY: f32 = 5e-4;

/// Adds the weight-decay term into the gradient buffers of `.w` params.
pub(crate) fn apply_weight_decay(model: &mut ModelBundle) -> Result<()> {
    let names: Vec<String> = model
        .named_params()
        .filter(|(n, _)| n.ends_with(".w"))
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let t = model.param_mut(&name)?;
        let decay: Vec<f32> = t.data().iter().map(|&p| WEIGHT_DECAY * p).collect();
        t.accumulate_grad(&decay)?;
    }
    Ok(())
}

/// Epoch learning rate: linear decay to 40% of the base rate.
pub(crate) fn epoch_lr(lr: f32, epoch: usize, epochs: usize) -> f32 {
    if epochs <= 1 {
        return lr;
    }
    lr * (1.0 - 0.6 * epoch as f32 / (epochs - 1) as f32)
}


/// Rescales all parameter gradients so the global L2 norm is at most
/// [`MAX_GRAD_NORM`].
pub(crate) fn clip_grad_norm(model: &mut ModelBundle) {
    let mut sq = 0.0f64;
    for (_, t) in model.named_params() {
        if let Some(g) = t.grad() {
            sq += g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > MAX_GRAD_NORM {
        model.scale_grads((MAX_GRAD_NORM / norm) as f32);
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f32>,
}

/// Optional per-example input transformation applied before the loss;
/// the adversarial trainer supplies the inner maximization here.
pub(crate) type PerturbHook<'h> =
    dyn FnMut(&ModelBundle, &Tensor, &SceneLabel, u64) -> Result<Option<Tensor>> + 'h;

/// Plain SGD training, deterministic given the seed. Batches of eight,
/// epoch-shuffled; gradients averaged over each batch.
pub fn train(
    model: &mut ModelBundle,
    data: &DatasetManifest,
    epochs: usize,
    lr: f32,
    seed: u64,
) -> Result<TrainReport> {
    train_with_hook(model, data, epochs, lr, seed, &mut |_, _, _, _| Ok(None))
}

pub(crate) fn train_with_hook(
    model: &mut ModelBundle,
    data: &DatasetManifest,
    epochs: usize,
    lr: f32,
    seed: u64,
    perturb: &mut PerturbHook,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(ArwError::contract("train: dataset is empty"));
    }
    if model.kind == ModelKind::Denoiser {
        return Err(ArwError::contract(
            "train handles perception models; train denoisers via the restoration defense",
        ));
    }
    // images materialized once; training touches each many times
    let images: Vec<_> = (0..data.len())
        .map(|i| data.load_image(i))
        .collect::<Result<Vec<_>>>()?;

    let mut report = TrainReport::default();
    let root = Rng::new(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    // tail averaging: the returned parameters are the mean over the last
    // third of the epochs, which flattens shuffle noise in the endgame
    let avg_from = epochs.saturating_sub((epochs / 3).max(1));
    let mut tail_sum: Option<std::collections::BTreeMap<String, Vec<f64>>> = None;
    let mut tail_count = 0usize;

    for epoch in 0..epochs {
        let mut rng = root.derive(epoch as u64);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;

        for batch in order.chunks(BATCH) {
            for &i in batch {
                let label = &data.entries[i].label;
                let tag = (epoch as u64) << 32 | i as u64;
                let perturbed = perturb(model, &images[i], label, tag)?;
                let input = perturbed.as_ref().unwrap_or(&images[i]);
                let tape = Tape::new();
                let bound = model.bind(&tape);
                let img = tape.leaf(input);
                let loss = match (label, model.kind) {
                    (SceneLabel::Sign { present, bbox }, ModelKind::SignDetector) => {
                        detector_loss(&tape, &bound, img, *present, bbox.as_ref())?
                    }
                    (SceneLabel::Road { distance_m, .. }, ModelKind::DistanceRegressor) => {
                        regressor_loss(&tape, &bound, img, *distance_m)?
                    }
                    _ => {
                        return Err(ArwError::contract(
                            "dataset label kind does not match the model",
                        ))
                    }
                };
                epoch_loss += tape.scalar_value(loss)? as f64;
                tape.backward(loss)?;
                model.absorb_grads(&tape, &bound)?;
            }
            model.scale_grads(1.0 / batch.len() as f32);
            apply_weight_decay(model)?;
            clip_grad_norm(model);
            sgd_step(model, epoch_lr(lr, epoch, epochs))?;
        }
        report.epoch_losses.push((epoch_loss / data.len() as f64) as f32);
    }
    Ok(report)
}

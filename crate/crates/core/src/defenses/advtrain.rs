//! Min-max adversarial training and the mixed-set protocol.
//!
//! The inner maximization crafts a perturbation against the *current*
//! model for every example; the outer step descends the loss on the
//! perturbed input. With a zero budget the inner step is skipped
//! entirely, which reproduces standard training checkpoint-for-
//! checkpoint under the same seed.

use crate::attacks::{
    auto_pgd, fgsm, gaussian_noise, sign_zero, AttackObjective, Budget, DetectorObjective,
    RegressorObjective,
};
use crate::error::{ArwError, Result};
use crate::geometry::Box2;
use crate::models::regressor_forward;
use crate::models::train::train_with_hook;
use crate::models::{ModelBundle, ModelKind, TrainReport};
use crate::rng::Rng;
use crate::scenegen::{DatasetManifest, SceneLabel, Split};
use crate::tensor::Tensor;

/// Inner-maximization family for adversarial training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerAttack {
    Fgsm,
    AutoPgd,
    Gaussian,
    /// One signed-gradient step confined to the labeled box, in the
    /// spirit of the runtime/physical patch attacks.
    Patch,
}

impl InnerAttack {
    pub fn name(&self) -> &'static str {
        match self {
            InnerAttack::Fgsm => "fgsm",
            InnerAttack::AutoPgd => "autopgd",
            InnerAttack::Gaussian => "gaussian",
            InnerAttack::Patch => "patch",
        }
    }

    pub fn parse(name: &str) -> Result<InnerAttack> {
        match name {
            "fgsm" => Ok(InnerAttack::Fgsm),
            "autopgd" | "auto_pgd" | "auto-pgd" => Ok(InnerAttack::AutoPgd),
            "gaussian" => Ok(InnerAttack::Gaussian),
            "patch" | "cap" | "rp2" => Ok(InnerAttack::Patch),
            other => Err(ArwError::config(format!(
                "unknown inner attack {other:?}; expected fgsm|autopgd|gaussian|patch"
            ))),
        }
    }
}

fn label_box(label: &SceneLabel) -> Option<Box2> {
    match label {
        SceneLabel::Sign { bbox, .. } => *bbox,
        SceneLabel::Road { bbox, .. } => Some(*bbox),
    }
}

/// Crafts one inner-maximization example; exposed for the mixed-set
/// pipeline.
pub fn craft_inner_example(
    model: &ModelBundle,
    image: &Tensor,
    label: &SceneLabel,
    inner: InnerAttack,
    budget: &Budget,
    tag: u64,
) -> Result<Tensor> {
    let objective: Box<dyn AttackObjective> = match (model.kind, label) {
        (ModelKind::SignDetector, SceneLabel::Sign { present, bbox }) => {
            Box::new(DetectorObjective {
                model,
                present: *present,
                gt_box: *bbox,
            })
        }
        (ModelKind::DistanceRegressor, SceneLabel::Road { .. }) => {
            let clean = regressor_forward(model, image)?;
            Box::new(RegressorObjective {
                model,
                clean_pred: clean,
            })
        }
        _ => return Err(ArwError::contract("label kind does not match the model")),
    };

    match inner {
        InnerAttack::Fgsm => Ok(fgsm(objective.as_ref(), image, budget)?.x_adv),
        InnerAttack::AutoPgd => Ok(auto_pgd(objective.as_ref(), image, budget)?.x_adv),
        InnerAttack::Gaussian => {
            let seed = Rng::new(budget.seed).derive(tag).next_u64();
            Ok(gaussian_noise(image, budget.epsilon, seed)?.x_adv)
        }
        InnerAttack::Patch => {
            let Some(bbox) = label_box(label) else {
                // negatives carry no box; nothing to patch
                return Ok(image.clone());
            };
            let (_, grad) = objective.loss_and_grad(image)?;
            let shape = image.shape();
            let (w, c) = (shape[1], shape[2]);
            let (x0, y0, x1, y1) = bbox.corners();
            let data: Vec<f32> = image
                .data()
                .iter()
                .zip(grad.data())
                .enumerate()
                .map(|(k, (&v, &g))| {
                    let y = (k / c) / w;
                    let x = (k / c) % w;
                    let inside = (x as f32 + 0.5) >= x0
                        && (x as f32 + 0.5) <= x1
                        && (y as f32 + 0.5) >= y0
                        && (y as f32 + 0.5) <= y1;
                    if inside {
                        (v + budget.epsilon * sign_zero(g)).clamp(0.0, 1.0)
                    } else {
                        v
                    }
                })
                .collect();
            Tensor::from_vec(shape, data)
        }
    }
}

/// Min-max training: per example, craft the inner perturbation on the
/// current model, then take the outer SGD step on the perturbed input.
pub fn adversarial_train(
    model: &mut ModelBundle,
    data: &DatasetManifest,
    inner: InnerAttack,
    budget: &Budget,
    epochs: usize,
    lr: f32,
    seed: u64,
) -> Result<TrainReport> {
    budget.validate()?;
    let mut hook = |m: &ModelBundle, img: &Tensor, label: &SceneLabel, tag: u64| {
        if budget.epsilon == 0.0 {
            // zero inner maximization: exactly standard training
            return Ok(None);
        }
        craft_inner_example(m, img, label, inner, budget, tag).map(Some)
    };
    train_with_hook(model, data, epochs, lr, seed, &mut hook)
}

/// Draws `fraction` of each attacked set into a mixed training manifest
/// and a disjoint `fraction` into a mixed test manifest.
pub fn build_mixed_set(
    per_attack_sets: &[DatasetManifest],
    fraction: f32,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if per_attack_sets.is_empty() {
        return Err(ArwError::contract("build_mixed_set: no attacked sets"));
    }
    let n = per_attack_sets[0].len();
    if n == 0 {
        return Err(ArwError::contract("build_mixed_set: empty attacked set"));
    }
    if per_attack_sets.iter().any(|s| s.len() != n) {
        return Err(ArwError::contract(
            "build_mixed_set: attacked sets must be equally sized",
        ));
    }
    if !(0.0..=0.5).contains(&fraction) {
        return Err(ArwError::contract(format!(
            "fraction {fraction} must satisfy 2*fraction <= 1"
        )));
    }
    let k = (fraction as f64 * n as f64).floor() as usize;
    let root = Rng::new(seed);
    let mut train_entries = Vec::new();
    let mut test_entries = Vec::new();
    for (ai, set) in per_attack_sets.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = root.derive(ai as u64);
        rng.shuffle(&mut order);
        for &i in &order[..k] {
            train_entries.push(set.entries[i].clone());
        }
        for &i in &order[k..2 * k] {
            test_entries.push(set.entries[i].clone());
        }
    }
    Ok((
        DatasetManifest {
            entries: train_entries,
            split: Split::Train,
            seed,
        },
        DatasetManifest {
            entries: test_entries,
            split: Split::Test,
            seed,
        },
    ))
}

//! Contrastive representation training with an InfoNCE objective.
//!
//! Stage one trains the conv trunk through a projection head to pull two
//! augmented views of each scene together against in-batch negatives;
//! stage two fine-tunes the task head on labels. The projection head is
//! used only at training time.

use std::collections::BTreeMap;

use crate::error::{ArwError, Result};
use crate::models::detector::conv_trunk;
use crate::models::train::{apply_weight_decay, clip_grad_norm, epoch_lr};
use crate::models::{sgd_step, train, ModelBundle, ModelKind, TrainReport};
use crate::rng::Rng;
use crate::scenegen::DatasetManifest;
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

/// Embedding width produced by the projection head.
pub const EMBED_DIM: usize = 32;
const HIDDEN_DIM: usize = 64;
const DROPOUT_P: f32 = 0.1;
const VIEWS_PER_BATCH: usize = 8;

/// Two dense layers with dropout, mapping trunk features to embeddings.
/// Training-time only; discarded at inference.
pub struct ProjectionHead {
    params: BTreeMap<String, Tensor>,
}

impl ProjectionHead {
    pub fn new(feature_dim: usize, seed: u64) -> ProjectionHead {
        let mut rng = Rng::new(seed ^ 0x9EAD);
        let mut params = BTreeMap::new();
        let mut init = |name: &str, shape: &[usize], fan_in: usize| {
            let numel: usize = shape.iter().product();
            let std = (2.0 / fan_in as f32).sqrt();
            let data = if name.ends_with(".b") {
                vec![0.0; numel]
            } else {
                (0..numel).map(|_| rng.normal() * std).collect()
            };
            params.insert(
                name.to_string(),
                Tensor::from_vec(shape, data).expect("valid head shape").with_grad(),
            );
        };
        init("proj1.w", &[feature_dim, HIDDEN_DIM], feature_dim);
        init("proj1.b", &[HIDDEN_DIM], 1);
        init("proj2.w", &[HIDDEN_DIM, EMBED_DIM], HIDDEN_DIM);
        init("proj2.b", &[EMBED_DIM], 1);
        ProjectionHead { params }
    }

    fn bind(&self, tape: &Tape) -> BTreeMap<String, Val> {
        self.params
            .iter()
            .map(|(n, t)| (n.clone(), tape.leaf(t)))
            .collect()
    }

    /// features -> dense -> relu -> dropout -> dense.
    fn forward(
        &self,
        tape: &Tape,
        bound: &BTreeMap<String, Val>,
        features: Val,
        dropout_mask: Option<&Tensor>,
    ) -> Result<Val> {
        let h = tape.dense(features, bound["proj1.w"], bound["proj1.b"])?;
        let h = tape.relu(h);
        let h = match dropout_mask {
            Some(mask) => {
                let m = tape.leaf(mask);
                tape.mul(h, m)?
            }
            None => h,
        };
        tape.dense(h, bound["proj2.w"], bound["proj2.b"])
    }

    fn absorb_and_step(&mut self, tape: &Tape, bound: &BTreeMap<String, Val>, lr: f32) -> Result<()> {
        for (name, val) in bound {
            let grad = tape.grad(*val)?;
            self.params
                .get_mut(name)
                .expect("bound name exists")
                .accumulate_grad(grad.data())?;
        }
        for t in self.params.values_mut() {
            let grad = t.grad().expect("just accumulated").to_vec();
            let data = t.data_mut();
            for (p, g) in data.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            t.clear_grad();
        }
        Ok(())
    }
}

/// InfoNCE over 2N embeddings on a tape. Views are paired (2i, 2i+1);
/// every anchor sees its positive plus all 2N-2 in-batch negatives in
/// the softmax denominator; similarity is cosine.
pub fn infonce_on_tape(tape: &Tape, embeddings: &[Val], tau: f32) -> Result<Val> {
    let m = embeddings.len();
    if m < 4 || m % 2 != 0 {
        return Err(ArwError::contract(
            "infonce needs 2N embeddings with N >= 2",
        ));
    }
    if tau <= 0.0 {
        return Err(ArwError::contract("tau must be > 0"));
    }
    for &e in embeddings {
        let v = tape.value(e);
        if v.l2_norm_sq() == 0.0 {
            return Err(ArwError::contract("zero-norm embedding"));
        }
    }

    // precompute norms
    let norms: Vec<Val> = embeddings
        .iter()
        .map(|&e| {
            let sq = tape.mul(e, e)?;
            let s = tape.sum(sq);
            let s = tape.add_const(s, 1e-12);
            tape.sqrt(s)
        })
        .collect::<Result<Vec<_>>>()?;

    let sim = |i: usize, j: usize| -> Result<Val> {
        let prod = tape.mul(embeddings[i], embeddings[j])?;
        let dot = tape.sum(prod);
        let denom = tape.mul(norms[i], norms[j])?;
        let cos = tape.div(dot, denom)?;
        Ok(tape.scale(cos, 1.0 / tau))
    };

    let mut total: Option<Val> = None;
    for i in 0..m {
        let pos = if i % 2 == 0 { i + 1 } else { i - 1 };
        let pos_sim = sim(i, pos)?;
        let mut denom_sum: Option<Val> = None;
        for k in 0..m {
            if k == i {
                continue;
            }
            let e = tape.exp(sim(i, k)?);
            denom_sum = Some(match denom_sum {
                None => e,
                Some(acc) => tape.add(acc, e)?,
            });
        }
        let log_denom = tape.ln(denom_sum.expect("m >= 4"))?;
        let term = tape.sub(log_denom, pos_sim)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(tape.scale(total.expect("m >= 4"), 1.0 / m as f32))
}

/// Plain-tensor InfoNCE: the spec-facing entry point.
pub fn infonce_loss(embeddings: &[Tensor], tau: f32) -> Result<f32> {
    let tape = Tape::new();
    let vals: Vec<Val> = embeddings.iter().map(|t| tape.leaf(t)).collect();
    let loss = infonce_on_tape(&tape, &vals, tau)?;
    tape.scalar_value(loss)
}

/// Augmentation: random crop-resize, brightness jitter and light noise.
fn augment(image: &Tensor, rng: &mut Rng) -> Tensor {
    let shape = image.shape();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let crop = h - rng.below(9.min(h)); // keep 56..=64 of 64
    let ox = rng.below(w - crop + 1);
    let oy = rng.below(h - crop + 1);
    let bright = rng.range(-0.1, 0.1);
    let mut out = vec![0.0f32; image.numel()];
    for y in 0..h {
        let sy = oy + (y * crop) / h;
        for x in 0..w {
            let sx = ox + (x * crop) / w;
            for ch in 0..c {
                let v = image.data()[(sy * w + sx) * c + ch] + bright + 0.01 * rng.normal();
                out[(y * w + x) * c + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(shape, out).expect("same shape")
}

fn feature_dim(model: &ModelBundle) -> Result<usize> {
    match model.kind {
        ModelKind::SignDetector => Ok(model.param("head.w")?.shape()[0]),
        ModelKind::DistanceRegressor => Ok(model.param("fc1.w")?.shape()[0]),
        ModelKind::Denoiser => Err(ArwError::contract("denoiser has no task trunk")),
    }
}

/// Contrastive pre-training followed by supervised fine-tuning.
/// `epochs` counts the contrastive stage; the label stage runs
/// max(epochs/2, 1) epochs. With epochs = 0 the model is untouched.
pub fn contrastive_train(
    model: &mut ModelBundle,
    data: &DatasetManifest,
    tau: f32,
    epochs: usize,
    lr: f32,
    seed: u64,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(ArwError::contract("contrastive_train: dataset is empty"));
    }
    if tau <= 0.0 {
        return Err(ArwError::contract("tau must be > 0"));
    }
    if epochs == 0 {
        return Ok(TrainReport::default());
    }
    let images: Vec<Tensor> = (0..data.len())
        .map(|i| data.load_image(i))
        .collect::<Result<Vec<_>>>()?;

    let mut head = ProjectionHead::new(feature_dim(model)?, seed);
    let root = Rng::new(seed ^ 0xC027_7A57);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..epochs {
        let mut rng = root.derive(epoch as u64);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;

        for batch in order.chunks(VIEWS_PER_BATCH) {
            if batch.len() < 2 {
                continue; // InfoNCE needs at least two instances
            }
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let head_bound = head.bind(&tape);
            let mut embeddings = Vec::with_capacity(batch.len() * 2);
            for &i in batch {
                for view in 0..2 {
                    let mut arng = root.derive(
                        0xA0_0000_0000u64 ^ ((epoch as u64) << 34 | (i as u64) << 2 | view),
                    );
                    let img = augment(&images[i], &mut arng);
                    let img_val = tape.leaf(&img);
                    let feats = conv_trunk(&tape, &bound, img_val)?;
                    let mask = Tensor::from_vec(
                        &[HIDDEN_DIM],
                        (0..HIDDEN_DIM)
                            .map(|_| {
                                if arng.uniform() < DROPOUT_P {
                                    0.0
                                } else {
                                    1.0 / (1.0 - DROPOUT_P)
                                }
                            })
                            .collect(),
                    )?;
                    embeddings.push(head.forward(&tape, &head_bound, feats, Some(&mask))?);
                }
            }
            let loss = infonce_on_tape(&tape, &embeddings, tau)?;
            epoch_loss += tape.scalar_value(loss)? as f64;
            batches += 1;
            tape.backward(loss)?;
            model.absorb_grads(&tape, &bound)?;
            apply_weight_decay(model)?;
            clip_grad_norm(model);
            let step = epoch_lr(lr, epoch, epochs);
            sgd_step(model, step)?;
            head.absorb_and_step(&tape, &head_bound, step)?;
        }
        report
            .epoch_losses
            .push((epoch_loss / batches.max(1) as f64) as f32);
    }

    // supervised stage on the labels; the projection head is dropped
    let fine_epochs = (epochs / 2).max(1);
    train(model, data, fine_epochs, lr, seed ^ 0xF17E)?;
    Ok(report)
}

/// Embeds one image with the trunk + projection head (no dropout); used
/// by tests to measure representation separation.
pub fn embed(model: &ModelBundle, head: &ProjectionHead, image: &Tensor) -> Result<Vec<f32>> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let head_bound = head.bind(&tape);
    let img = tape.leaf(image);
    let feats = conv_trunk(&tape, &bound, img)?;
    let emb = head.forward(&tape, &head_bound, feats, None)?;
    Ok(tape.value(emb).data().to_vec())
}

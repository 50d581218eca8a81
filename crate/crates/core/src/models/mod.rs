//! Desk-scale perception models.
//!
//! Two toy networks stand in for the production perception stack: a
//! single-class sign detector with a 4×4 grid head, and a lead-distance
//! regressor. Both run on the in-crate tape so attacks can differentiate
//! through them. A third tiny network, the denoiser, backs the
//! diffusion-style restoration defense.

mod checkpoint;
pub mod denoiser;
pub mod detector;
pub mod regressor;
pub(crate) mod train;

pub use checkpoint::{load, load_expecting, save};
pub use detector::{decode_detections, detector_forward, detector_loss, Detection, GridPrediction};
pub use regressor::{regressor_forward, regressor_loss, regressor_meters, regressor_norm_output};
pub use train::{train, TrainReport};

use std::collections::BTreeMap;

use crate::error::{ArwError, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

/// Which network a [`ModelBundle`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SignDetector,
    DistanceRegressor,
    Denoiser,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::SignDetector => "detector",
            ModelKind::DistanceRegressor => "regressor",
            ModelKind::Denoiser => "denoiser",
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            ModelKind::SignDetector => 0,
            ModelKind::DistanceRegressor => 1,
            ModelKind::Denoiser => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<ModelKind> {
        match tag {
            0 => Ok(ModelKind::SignDetector),
            1 => Ok(ModelKind::DistanceRegressor),
            2 => Ok(ModelKind::Denoiser),
            other => Err(ArwError::format(format!("unknown model kind tag {other}"))),
        }
    }
}

/// One named parameter in the architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Named parameters plus the architecture descriptor for one network.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub kind: ModelKind,
    params: BTreeMap<String, Tensor>,
    arch: Vec<LayerSpec>,
}

/// Canonical parameter list for a model kind.
fn arch_for(kind: ModelKind) -> Vec<LayerSpec> {
    let spec = |name: &str, shape: &[usize]| LayerSpec {
        name: name.to_string(),
        shape: shape.to_vec(),
    };
    match kind {
        // the grid head is a 4x4 convolution over the 7x7 trunk output:
        // head weights are shared across cells, which trains far more
        // stably on a 500-scene corpus than per-cell dense weights
        ModelKind::SignDetector => vec![
            spec("conv1.w", &[3, 3, 3, 12]),
            spec("conv1.b", &[12]),
            spec("conv2.w", &[3, 3, 12, 24]),
            spec("conv2.b", &[24]),
            spec("conv3.w", &[3, 3, 24, 24]),
            spec("conv3.b", &[24]),
            spec("head.w", &[2, 2, 24, 5]),
            spec("head.b", &[5]),
        ],
        ModelKind::DistanceRegressor => vec![
            spec("conv1.w", &[3, 3, 3, 12]),
            spec("conv1.b", &[12]),
            spec("conv2.w", &[3, 3, 12, 24]),
            spec("conv2.b", &[24]),
            spec("conv3.w", &[3, 3, 24, 24]),
            spec("conv3.b", &[24]),
            spec("fc1.w", &[1536, 48]),
            spec("fc1.b", &[48]),
            spec("fc2.w", &[48, 1]),
            spec("fc2.b", &[1]),
        ],
        ModelKind::Denoiser => vec![
            spec("conv1.w", &[3, 3, 3, 8]),
            spec("conv1.b", &[8]),
            spec("conv2.w", &[3, 3, 8, 8]),
            spec("conv2.b", &[8]),
            spec("conv3.w", &[3, 3, 8, 3]),
            spec("conv3.b", &[3]),
        ],
    }
}

impl ModelBundle {
    /// Fresh model with He-style init, deterministic per seed.
    pub fn new(kind: ModelKind, seed: u64) -> ModelBundle {
        let arch = arch_for(kind);
        let mut rng = Rng::new(seed ^ 0x4D0D_E1_u64);
        let mut params = BTreeMap::new();
        for layer in &arch {
            let numel: usize = layer.shape.iter().product();
            let data = if layer.name.ends_with(".b") {
                vec![0.0; numel]
            } else {
                let fan_in: usize = match layer.shape.len() {
                    4 => layer.shape[0] * layer.shape[1] * layer.shape[2],
                    2 => layer.shape[0],
                    _ => numel,
                };
                let std = (2.0 / fan_in as f32).sqrt();
                (0..numel).map(|_| rng.normal() * std).collect()
            };
            let t = Tensor::from_vec(&layer.shape, data)
                .expect("arch shapes are valid")
                .with_grad();
            params.insert(layer.name.clone(), t);
        }
        ModelBundle { kind, params, arch }
    }

    /// All-zero parameters; used in tests for trivially predictable output.
    pub fn zeroed(kind: ModelKind) -> ModelBundle {
        let arch = arch_for(kind);
        let params = arch
            .iter()
            .map(|l| (l.name.clone(), Tensor::zeros(&l.shape).with_grad()))
            .collect();
        ModelBundle { kind, params, arch }
    }

    pub(crate) fn from_parts(
        kind: ModelKind,
        params: BTreeMap<String, Tensor>,
    ) -> Result<ModelBundle> {
        let arch = arch_for(kind);
        for layer in &arch {
            match params.get(&layer.name) {
                None => {
                    return Err(ArwError::format(format!(
                        "missing parameter {} for {}",
                        layer.name,
                        kind.as_str()
                    )))
                }
                Some(t) if t.shape() != layer.shape.as_slice() => {
                    return Err(ArwError::format(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        layer.name,
                        t.shape(),
                        layer.shape
                    )))
                }
                _ => {}
            }
        }
        if params.len() != arch.len() {
            return Err(ArwError::format("checkpoint carries extra parameters"));
        }
        Ok(ModelBundle { kind, params, arch })
    }

    pub fn arch(&self) -> &[LayerSpec] {
        &self.arch
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| ArwError::contract(format!("no parameter named {name}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| ArwError::contract(format!("no parameter named {name}")))
    }

    /// Parameters in deterministic (name-sorted) order.
    pub fn named_params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    /// Lifts every parameter onto a tape for one forward/backward pass.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let vals = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t)))
            .collect();
        BoundParams { vals }
    }

    /// Accumulates tape gradients back into parameter grad buffers.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &BoundParams) -> Result<()> {
        for (name, val) in &bound.vals {
            let grad = tape.grad(*val)?;
            self.params
                .get_mut(name)
                .ok_or_else(|| ArwError::contract(format!("unbound parameter {name}")))?
                .accumulate_grad(grad.data())?;
        }
        Ok(())
    }

    pub fn scale_grads(&mut self, factor: f32) {
        for t in self.params.values_mut() {
            t.scale_grad(factor);
        }
    }

    pub fn clear_grads(&mut self) {
        for t in self.params.values_mut() {
            t.clear_grad();
        }
    }

    /// True when both bundles hold bit-identical parameters.
    pub fn params_equal(&self, other: &ModelBundle) -> bool {
        self.kind == other.kind
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(other.params.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.data() == tb.data())
    }

    /// FNV hash over parameter bytes, for run manifests.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.params {
            bytes.extend_from_slice(name.as_bytes());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::rng::fnv1a(&bytes)
    }
}

/// Tape handles for a bound model's parameters.
pub struct BoundParams {
    vals: BTreeMap<String, Val>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Val {
        *self
            .vals
            .get(name)
            .unwrap_or_else(|| panic!("model has no parameter {name}"))
    }
}

/// One stochastic-gradient step: p <- p - lr * grad for every parameter,
/// then gradients are cleared. Errors if any gradient is missing.
pub fn sgd_step(model: &mut ModelBundle, lr: f32) -> Result<()> {
    for (name, t) in model.params.iter_mut() {
        let grad = t
            .grad()
            .ok_or_else(|| ArwError::contract(format!("parameter {name} has no gradient")))?
            .to_vec();
        let data = t.data_mut();
        for (p, g) in data.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        t.clear_grad();
    }
    Ok(())
}

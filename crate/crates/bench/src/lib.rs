//! Shared fixtures for the criterion benchmarks.

use arw_core::models::{ModelBundle, ModelKind};
use arw_core::scenegen::{generate_road_sequence, generate_sign_dataset, RoadScene};
use arw_core::tensor::Tensor;

pub fn sign_image() -> Tensor {
    generate_sign_dataset(1, 42)
        .expect("generator works")
        .load_image(0)
        .expect("inline image")
}

pub fn road_frames(n: usize) -> Vec<RoadScene> {
    generate_road_sequence(n, 15.0, 40.0, 42).expect("generator works")
}

pub fn detector() -> ModelBundle {
    ModelBundle::new(ModelKind::SignDetector, 7)
}

pub fn regressor() -> ModelBundle {
    ModelBundle::new(ModelKind::DistanceRegressor, 7)
}

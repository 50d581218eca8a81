//! Adversarial robustness workbench.
//!
//! A self-contained stack for studying perception attacks and defenses at
//! desk scale: a small tensor/autodiff engine, two toy perception models
//! (a single-class sign detector and a lead-distance regressor), six
//! perturbation attacks, four defense families, and an evaluation kit
//! that assembles attack-by-defense benchmark matrices.

pub mod attacks;
pub mod defenses;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod models;
pub mod rng;
pub mod tape;
pub mod scenegen;
pub mod tensor;

pub use error::{ArwError, Result};
pub use geometry::Box2;
pub use rng::Rng;
pub use tape::{finite_diff_check, finite_diff_check_robust, finite_diff_check_sampled, SparseMap, Tape, Val};
pub use tensor::Tensor;

/// Version stamp embedded in outputs.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

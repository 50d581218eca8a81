//! Does bit-depth reduction recover detection quality under Gaussian
//! noise, and does the regression side work with channel jitter?

use arw_core::defenses::bit_depth_reduce;
use arw_core::evalkit::average_precision_50;
use arw_core::geometry::Box2;
use arw_core::models::{
    decode_detections, detector_forward, train, Detection, ModelBundle, ModelKind,
};
use arw_core::attacks::gaussian_noise;
use arw_core::scenegen::{generate_sign_dataset, SceneLabel};
use arw_core::tensor::Tensor;

fn map50(model: &ModelBundle, images: &[Tensor], gts: &[Vec<Box2>]) -> f32 {
    let dets: Vec<Vec<Detection>> = images
        .iter()
        .map(|img| decode_detections(&detector_forward(model, img).unwrap(), 0.05, 0.45))
        .collect();
    average_precision_50(&dets, gts)
}

fn main() {
    let train_set = generate_sign_dataset(500, 1001).unwrap();
    let mut det = ModelBundle::new(ModelKind::SignDetector, 42);
    train(&mut det, &train_set, 30, 0.08, 4242).unwrap();

    for seed in [501u64, 502, 503] {
        let test = generate_sign_dataset(200, seed).unwrap();
        let gts: Vec<Vec<Box2>> = test
            .entries
            .iter()
            .map(|e| match &e.label {
                SceneLabel::Sign {
                    present: true,
                    bbox: Some(b),
                } => vec![*b],
                _ => vec![],
            })
            .collect();
        let images: Vec<Tensor> = (0..test.len()).map(|i| test.load_image(i).unwrap()).collect();
        for sigma in [0.08f32, 0.12] {
            let noisy: Vec<Tensor> = images
                .iter()
                .enumerate()
                .map(|(i, img)| gaussian_noise(img, sigma, seed ^ (i as u64) << 4).unwrap().x_adv)
                .collect();
            let squeezed: Vec<Tensor> = noisy
                .iter()
                .map(|img| bit_depth_reduce(img, 3).unwrap())
                .collect();
            println!(
                "seed {seed} sigma {sigma}: clean mAP {:.3}, noisy {:.3}, noisy+b3 {:.3}",
                map50(&det, &images, &gts),
                map50(&det, &noisy, &gts),
                map50(&det, &squeezed, &gts),
            );
        }
    }
}

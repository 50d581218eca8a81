//! Clean mAP variance across training and test dataset seeds.

use arw_core::evalkit::average_precision_50;
use arw_core::geometry::Box2;
use arw_core::models::{
    decode_detections, detector_forward, train, Detection, ModelBundle, ModelKind,
};
use arw_core::scenegen::{generate_sign_dataset, SceneLabel};
use arw_core::tensor::Tensor;

fn main() {
    for train_seed in [1u64, 1001] {
        let train_set = generate_sign_dataset(500, train_seed).unwrap();
        let mut det = ModelBundle::new(ModelKind::SignDetector, 42);
        let report = train(&mut det, &train_set, 30, 0.08, 4242).unwrap();
        for test_seed in [2u64, 501, 502, 503] {
            let test = generate_sign_dataset(200, test_seed).unwrap();
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
            let images: Vec<Tensor> =
                (0..test.len()).map(|i| test.load_image(i).unwrap()).collect();
            let dets: Vec<Vec<Detection>> = images
                .iter()
                .map(|img| decode_detections(&detector_forward(&det, img).unwrap(), 0.05, 0.45))
                .collect();
            println!(
                "train {train_seed} (final loss {:.4}) test {test_seed}: mAP {:.3}",
                report.epoch_losses.last().unwrap(),
                average_precision_50(&dets, &gts)
            );
        }
    }
}
